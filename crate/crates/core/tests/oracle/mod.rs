//! Table-driven reference decoder for the supported A32 load/store forms,
//! shared by the decoder tests and the acceptance suite.

use cloaksim::decode::{decode, Kind, Offset, Width};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Form {
    Imm12,
    RegLsl,
    ImmSplit,
}

pub struct Row {
    pub mask: u32,
    pub pattern: u32,
    pub kind: Kind,
    pub width: Width,
    pub form: Form,
}

// Bit 23 (U) and the register/offset fields are free; everything else in
// the mask is fixed. Condition AL, P=1, W=0.
pub const TABLE: &[Row] = &[
    Row { mask: 0xFF70_0000, pattern: 0xE500_0000, kind: Kind::Store, width: Width::Word, form: Form::Imm12 },
    Row { mask: 0xFF70_0000, pattern: 0xE510_0000, kind: Kind::Load, width: Width::Word, form: Form::Imm12 },
    Row { mask: 0xFF70_0000, pattern: 0xE540_0000, kind: Kind::Store, width: Width::Byte, form: Form::Imm12 },
    Row { mask: 0xFF70_0000, pattern: 0xE550_0000, kind: Kind::Load, width: Width::Byte, form: Form::Imm12 },
    Row { mask: 0xFF70_0070, pattern: 0xE700_0000, kind: Kind::Store, width: Width::Word, form: Form::RegLsl },
    Row { mask: 0xFF70_0070, pattern: 0xE710_0000, kind: Kind::Load, width: Width::Word, form: Form::RegLsl },
    Row { mask: 0xFF70_0070, pattern: 0xE740_0000, kind: Kind::Store, width: Width::Byte, form: Form::RegLsl },
    Row { mask: 0xFF70_0070, pattern: 0xE750_0000, kind: Kind::Load, width: Width::Byte, form: Form::RegLsl },
    Row { mask: 0xFF70_00F0, pattern: 0xE140_00B0, kind: Kind::Store, width: Width::Half, form: Form::ImmSplit },
    Row { mask: 0xFF70_00F0, pattern: 0xE150_00B0, kind: Kind::Load, width: Width::Half, form: Form::ImmSplit },
];

#[derive(Debug, PartialEq, Eq)]
pub struct Fields {
    pub kind: Kind,
    pub width: Width,
    pub rt: u8,
    pub rn: u8,
    pub offset: Offset,
    pub add: bool,
}

fn field(w: u32, lo: u32, len: u32) -> u32 {
    (w >> lo) & ((1 << len) - 1)
}

pub fn oracle(w: u32) -> Option<Fields> {
    let row = TABLE.iter().find(|r| w & r.mask == r.pattern)?;
    let rt = field(w, 12, 4) as u8;
    if rt == 15 {
        return None;
    }
    let offset = match row.form {
        Form::Imm12 => Offset::Imm(field(w, 0, 12) as u16),
        Form::RegLsl => {
            let rm = field(w, 0, 4) as u8;
            if rm == 15 {
                return None;
            }
            Offset::Reg { rm, shift: field(w, 7, 5) as u8 }
        }
        Form::ImmSplit => Offset::Imm((field(w, 8, 4) << 4 | field(w, 0, 4)) as u16),
    };
    Some(Fields {
        kind: row.kind,
        width: row.width,
        rt,
        rn: field(w, 16, 4) as u8,
        offset,
        add: field(w, 23, 1) == 1,
    })
}

pub fn under_test(w: u32) -> Option<Fields> {
    decode(w).ok().map(|i| Fields {
        kind: i.kind,
        width: i.width,
        rt: i.rt,
        rn: i.rn,
        offset: i.offset,
        add: i.add,
    })
}

/// Assembles a word from a table row and explicit fields.
pub fn assemble(row: &Row, add: bool, rt: u32, rn: u32, low: u32) -> u32 {
    row.pattern | (add as u32) << 23 | rn << 16 | rt << 12 | low
}

pub fn exhaustive() -> &'static [u32] {
    static WORDS: std::sync::OnceLock<Vec<u32>> = std::sync::OnceLock::new();
    WORDS.get_or_init(build_exhaustive)
}

fn build_exhaustive() -> Vec<u32> {
    let mut words = Vec::new();
    for row in TABLE {
        for add in [false, true] {
            for rt in 0..15 {
                for rn in 0..15 {
                    match row.form {
                        Form::Imm12 => {
                            for imm in [0u32, 1, 4, 0xFFF] {
                                words.push(assemble(row, add, rt, rn, imm));
                            }
                        }
                        Form::ImmSplit => {
                            for imm in [0u32, 1, 4, 0xFF] {
                                words.push(assemble(row, add, rt, rn, (imm & 0xF0) << 4 | (imm & 0xF)));
                            }
                        }
                        Form::RegLsl => {
                            for rm in 0..15 {
                                for shift in [0u32, 1, 2, 31] {
                                    words.push(assemble(row, add, rt, rn, shift << 7 | rm));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    words
}

/// Uniformly random words; mostly exercises rejection.
pub fn random_words(seed: u64, n: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

/// Random words inside the load/store encoding classes, so that the
/// rejection rules for W, P, cond, rt=15 and shift types see many hits.
pub fn load_store_words(seed: u64, n: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let cls: u32 = [0b010u32, 0b011, 0b000][rng.gen_range(0..3)];
            let cond: u32 = if rng.gen_bool(0.8) { 0xE } else { rng.gen_range(0..16) };
            cond << 28 | cls << 25 | (rng.gen::<u32>() & 0x01FF_FFFF)
        })
        .collect()
}
