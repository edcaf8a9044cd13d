//! A32 load/store decoding and emulation for trapped MMIO accesses.
//!
//! Supported: LDR/STR and LDRB/STRB with an immediate or LSL-shifted
//! register offset, and LDRH/STRH with an immediate offset. Condition must
//! be AL and addressing must be plain offset (P=1, W=0). Anything else is
//! `Undecodable`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("undecodable instruction {0:#010x}")]
    Undecodable(u32),
    #[error("PC-relative addressing is not supported")]
    PcBase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    Load,
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Width {
    Byte,
    Half,
    Word,
}

impl Width {
    pub fn bytes(self) -> u32 {
        match self {
            Width::Byte => 1,
            Width::Half => 2,
            Width::Word => 4,
        }
    }

    pub fn mask(self) -> u32 {
        match self {
            Width::Byte => 0xff,
            Width::Half => 0xffff,
            Width::Word => u32::MAX,
        }
    }

    pub fn from_bytes(n: u32) -> Option<Width> {
        match n {
            1 => Some(Width::Byte),
            2 => Some(Width::Half),
            4 => Some(Width::Word),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Offset {
    Imm(u16),
    Reg { rm: u8, shift: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instr {
    pub kind: Kind,
    pub width: Width,
    pub rt: u8,
    pub rn: u8,
    pub offset: Offset,
    pub add: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NsMode {
    Svc,
    Usr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NsContext {
    pub r: [u32; 15],
    pub pc: u32,
    pub mode: NsMode,
    /// Virtual address of the faulting data access.
    pub dfar: u32,
    /// Virtual address of the faulting instruction.
    pub abort_lr: u32,
}

impl Default for NsContext {
    fn default() -> Self {
        NsContext {
            r: [0; 15],
            pc: 0,
            mode: NsMode::Svc,
            dfar: 0,
            abort_lr: 0,
        }
    }
}

const COND_AL: u32 = 0xE;

fn bit(word: u32, n: u32) -> bool {
    word >> n & 1 == 1
}

pub fn decode(word: u32) -> Result<Instr, DecodeError> {
    let bad = Err(DecodeError::Undecodable(word));
    if word >> 28 != COND_AL {
        return bad;
    }
    // Offset addressing only: P=1, W=0.
    if !bit(word, 24) || bit(word, 21) {
        return bad;
    }
    let rt = (word >> 12 & 0xf) as u8;
    let rn = (word >> 16 & 0xf) as u8;
    if rt == 15 {
        return bad;
    }
    let kind = if bit(word, 20) { Kind::Load } else { Kind::Store };
    let add = bit(word, 23);
    let (width, offset) = match word >> 25 & 0b111 {
        0b010 => {
            let w = if bit(word, 22) { Width::Byte } else { Width::Word };
            (w, Offset::Imm((word & 0xfff) as u16))
        }
        0b011 => {
            // Bit 4 set is the media instruction space; only LSL is accepted.
            if bit(word, 4) || word >> 5 & 0b11 != 0 {
                return bad;
            }
            let rm = (word & 0xf) as u8;
            if rm == 15 {
                return bad;
            }
            let w = if bit(word, 22) { Width::Byte } else { Width::Word };
            let shift = (word >> 7 & 0x1f) as u8;
            (w, Offset::Reg { rm, shift })
        }
        0b000 => {
            // Extra load/store space: bit 7 and bit 4 set, SH=01 is the
            // unsigned halfword; bit 22 selects the immediate form.
            if word & 0x90 != 0x90 || word >> 5 & 0b11 != 0b01 || !bit(word, 22) {
                return bad;
            }
            let imm = (word >> 4 & 0xf0) | (word & 0xf);
            (Width::Half, Offset::Imm(imm as u16))
        }
        _ => return bad,
    };
    Ok(Instr {
        kind,
        width,
        rt,
        rn,
        offset,
        add,
    })
}

/// Inverse of `decode` for every supported instruction.
pub fn encode(i: &Instr) -> u32 {
    let mut w = COND_AL << 28 | 1 << 24;
    if i.add {
        w |= 1 << 23;
    }
    if i.kind == Kind::Load {
        w |= 1 << 20;
    }
    w |= (i.rn as u32 & 0xf) << 16 | (i.rt as u32 & 0xf) << 12;
    match (i.width, i.offset) {
        (Width::Half, Offset::Imm(imm)) => {
            let imm = imm as u32 & 0xff;
            w |= 1 << 22 | (imm & 0xf0) << 4 | 0xb0 | (imm & 0xf);
        }
        (Width::Half, Offset::Reg { .. }) => panic!("register-offset halfword is not supported"),
        (wd, off) => {
            if wd == Width::Byte {
                w |= 1 << 22;
            }
            match off {
                Offset::Imm(imm) => w |= 0b010 << 25 | (imm as u32 & 0xfff),
                Offset::Reg { rm, shift } => {
                    w |= 0b011 << 25 | (shift as u32 & 0x1f) << 7 | (rm as u32 & 0xf)
                }
            }
        }
    }
    w
}

/// Virtual address accessed by `instr` in `ctx`. No writeback.
pub fn effective_address(instr: &Instr, ctx: &NsContext) -> Result<u32, DecodeError> {
    if instr.rn == 15 {
        return Err(DecodeError::PcBase);
    }
    let base = ctx.r[instr.rn as usize];
    let off = match instr.offset {
        Offset::Imm(i) => i as u32,
        Offset::Reg { rm, shift } => ctx.r[rm as usize] << shift,
    };
    Ok(if instr.add {
        base.wrapping_add(off)
    } else {
        base.wrapping_sub(off)
    })
}

/// Value transform applied on the emulated path, relative to the accessed
/// lane (bit 0 is the lowest byte accessed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transform {
    ClearBits(u32),
    SetBits(u32),
    Replace(u32),
    /// Keep the masked bits at their current device value.
    PreserveMasked(u32),
}

impl Transform {
    pub fn apply(self, value: u32, current: impl FnOnce() -> u32) -> u32 {
        match self {
            Transform::ClearBits(m) => value & !m,
            Transform::SetBits(m) => value | m,
            Transform::Replace(v) => v,
            Transform::PreserveMasked(m) => (value & !m) | (current() & m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Allow {
        read: Option<Transform>,
        write: Option<Transform>,
    },
    Deny {
        substitute: u32,
    },
}

impl Verdict {
    pub const PASS: Verdict = Verdict::Allow {
        read: None,
        write: None,
    };

    pub fn is_deny(&self) -> bool {
        matches!(self, Verdict::Deny { .. })
    }
}

/// Secure-world access path used by the emulator.
pub trait EmuBus {
    fn read(&mut self, addr: u32, width: Width) -> u32;
    fn write(&mut self, addr: u32, width: Width, value: u32);
}

/// Performs `instr` at physical address `pa` under `verdict`, updating the
/// context. Loads zero-extend; the PC always advances by one instruction.
pub fn emulate(instr: &Instr, ctx: &mut NsContext, pa: u32, verdict: Verdict, bus: &mut dyn EmuBus) {
    let mask = instr.width.mask();
    match (instr.kind, verdict) {
        (Kind::Load, Verdict::Allow { read, .. }) => {
            let raw = bus.read(pa, instr.width) & mask;
            let v = read.map_or(raw, |t| t.apply(raw, || raw));
            ctx.r[instr.rt as usize] = v & mask;
        }
        (Kind::Store, Verdict::Allow { write, .. }) => {
            let v = ctx.r[instr.rt as usize] & mask;
            let v = match write {
                Some(t) => t.apply(v, || bus.read(pa, instr.width)) & mask,
                None => v,
            };
            bus.write(pa, instr.width, v);
        }
        (Kind::Load, Verdict::Deny { substitute }) => ctx.r[instr.rt as usize] = substitute & mask,
        (Kind::Store, Verdict::Deny { .. }) => {}
    }
    ctx.pc = ctx.pc.wrapping_add(4);
}
