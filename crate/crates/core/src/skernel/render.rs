//! Confirmation screen encoding. The image is 17 bands of 4 lines by
//! 32 RGB24 pixels. Band i < 16 is solid green when class bit i is clear
//! and solid red when it is set. Band 16 is a banner of 16 cells, 2 pixels
//! each, showing bits 16-31 as white (set) or black (clear).

pub const WIDTH: u32 = 32;
pub const BAND_LINES: u32 = 4;
pub const BANDS: u32 = 17;
pub const HEIGHT: u32 = BANDS * BAND_LINES;
pub const BYTES_PER_PIXEL: u32 = 3;
pub const IMAGE_BYTES: u32 = WIDTH * HEIGHT * BYTES_PER_PIXEL;

pub const GREEN: [u8; 3] = [0, 255, 0];
pub const RED: [u8; 3] = [255, 0, 0];
pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];

const CELL_PX: u32 = 2;

fn pixel_color(bv: u32, x: u32, y: u32) -> [u8; 3] {
    let band = y / BAND_LINES;
    if band < 16 {
        if bv >> band & 1 == 1 {
            RED
        } else {
            GREEN
        }
    } else if bv >> (16 + x / CELL_PX) & 1 == 1 {
        WHITE
    } else {
        BLACK
    }
}

pub fn render(bv: u32) -> Vec<u8> {
    let mut img = Vec::with_capacity(IMAGE_BYTES as usize);
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            img.extend_from_slice(&pixel_color(bv, x, y));
        }
    }
    img
}

fn pixel(img: &[u8], x: u32, y: u32) -> [u8; 3] {
    let i = ((y * WIDTH + x) * BYTES_PER_PIXEL) as usize;
    [img[i], img[i + 1], img[i + 2]]
}

/// Reads a bitvector back from an image. Fails on anything `render` could
/// not have produced.
pub fn decode_image(img: &[u8]) -> Option<u32> {
    if img.len() != IMAGE_BYTES as usize {
        return None;
    }
    let mut bv = 0u32;
    for band in 0..16 {
        match pixel(img, 0, band * BAND_LINES) {
            RED => bv |= 1 << band,
            GREEN => {}
            _ => return None,
        }
    }
    for cell in 0..16 {
        match pixel(img, cell * CELL_PX, 16 * BAND_LINES) {
            WHITE => bv |= 1 << (16 + cell),
            BLACK => {}
            _ => return None,
        }
    }
    (render(bv) == img).then_some(bv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_enabled_is_green() {
        let img = render(0);
        for band in 0..16 {
            assert_eq!(pixel(&img, 5, band * BAND_LINES + 2), GREEN);
        }
        assert_eq!(decode_image(&img), Some(0));
    }

    #[test]
    fn one_bit_changes_one_band() {
        let a = render(0);
        let b = render(1 << 6);
        let rows: Vec<u32> = (0..HEIGHT)
            .filter(|&y| {
                let r = (y * WIDTH * 3) as usize..((y + 1) * WIDTH * 3) as usize;
                a[r.clone()] != b[r]
            })
            .collect();
        assert_eq!(rows, (24..28).collect::<Vec<_>>());
    }

    #[test]
    fn round_trip_edges() {
        for bv in [0, u32::MAX, 0x8000_0000, 0x0001_0000, 0xDEAD_BEEF] {
            assert_eq!(decode_image(&render(bv)), Some(bv));
        }
        let mut img = render(3);
        img[0] = 7;
        assert_eq!(decode_image(&img), None);
        assert_eq!(decode_image(&img[1..]), None);
    }
}
