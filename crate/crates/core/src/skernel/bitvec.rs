//! CLOAK bitvector layout: bits 0-15 disable individual classes, 16-23 are
//! group bits, 24-27 mode bits, 28-31 reserved.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub const CLASS_BITS: u32 = 16;
pub const GROUP_SHIFT: u32 = 16;
pub const MODE_SHIFT: u32 = 24;
pub const CLASS_MASK: u32 = 0x0000_FFFF;
pub const GROUP_MASK: u32 = 0x00FF_0000;
pub const MODE_MASK: u32 = 0x0F00_0000;
pub const RESERVED_MASK: u32 = 0xF000_0000;

const NETWORKING: &[&str] = &["bluetooth", "cellular", "wifi"];
const AIRPLANE: &[&str] = &["bluetooth", "cellular", "wifi"];
const STEALTH: &[&str] = &["bluetooth", "cellular", "gps", "wifi"];
const MOVIE: &[&str] = &["camera", "microphone"];

pub const GROUPS: &[(&str, &[&str])] = &[("networking", NETWORKING)];
pub const MODES: &[(&str, &[&str])] = &[("airplane", AIRPLANE), ("stealth", STEALTH), ("movie", MOVIE)];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedSet {
    pub name: String,
    pub bit: u32,
    /// Class-bit mask of the members present on this board; `None` when the
    /// set is unavailable and its bit must stay clear.
    pub members: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub classes: Vec<String>,
    pub groups: Vec<NamedSet>,
    pub modes: Vec<NamedSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Invalid {
    #[error("reserved bits set")]
    Reserved,
    #[error("class bit beyond the board's classes")]
    UnknownClass,
    #[error("unavailable group or mode bit set")]
    Unavailable,
    #[error("more than one mode bit set")]
    TwoModes,
    #[error("class bits do not match the selected mode")]
    ModeMismatch,
    #[error("group bit disagrees with its member class bits")]
    GroupMismatch,
}

impl Layout {
    pub fn new(classes: Vec<String>) -> Self {
        let mask_of = |names: &[&str]| -> u32 {
            names
                .iter()
                .filter_map(|n| classes.iter().position(|c| c == n))
                .fold(0, |m, i| m | 1 << i)
        };
        let groups = GROUPS
            .iter()
            .enumerate()
            .map(|(i, (name, m))| {
                let mask = mask_of(m);
                NamedSet {
                    name: name.to_string(),
                    bit: GROUP_SHIFT + i as u32,
                    members: (mask != 0).then_some(mask),
                }
            })
            .collect();
        let mut seen = BTreeSet::new();
        let modes = MODES
            .iter()
            .enumerate()
            .map(|(i, (name, m))| {
                let mask = mask_of(m);
                let available = mask != 0 && seen.insert(mask);
                NamedSet {
                    name: name.to_string(),
                    bit: MODE_SHIFT + i as u32,
                    members: available.then_some(mask),
                }
            })
            .collect();
        Layout { classes, groups, modes }
    }

    pub fn class_bit(&self, class: &str) -> Option<u32> {
        self.classes.iter().position(|c| c == class).map(|i| i as u32)
    }

    pub fn valid_class_mask(&self) -> u32 {
        if self.classes.len() >= 32 {
            u32::MAX
        } else {
            (1u32 << self.classes.len()) - 1
        }
    }

    pub fn validate(&self, bv: u32) -> Result<(), Invalid> {
        if bv & RESERVED_MASK != 0 {
            return Err(Invalid::Reserved);
        }
        let classes = bv & CLASS_MASK;
        if classes & !self.valid_class_mask() != 0 {
            return Err(Invalid::UnknownClass);
        }
        let available = self
            .groups
            .iter()
            .chain(&self.modes)
            .filter(|s| s.members.is_some())
            .fold(0u32, |m, s| m | 1 << s.bit);
        if bv & (GROUP_MASK | MODE_MASK) & !available != 0 {
            return Err(Invalid::Unavailable);
        }
        let modes = bv & MODE_MASK;
        if modes.count_ones() > 1 {
            return Err(Invalid::TwoModes);
        }
        for m in &self.modes {
            if let (Some(mask), true) = (m.members, bv & 1 << m.bit != 0) {
                if classes != mask {
                    return Err(Invalid::ModeMismatch);
                }
            }
        }
        for g in &self.groups {
            if let Some(mask) = g.members {
                if (bv & 1 << g.bit != 0) != (classes & mask == mask) {
                    return Err(Invalid::GroupMismatch);
                }
            }
        }
        Ok(())
    }

    /// Completes class bits with the group and mode bits they imply. A mode
    /// bit is set only on an exact match.
    pub fn complete(&self, classes: u32) -> u32 {
        let classes = classes & CLASS_MASK & self.valid_class_mask();
        let mut bv = classes;
        for g in &self.groups {
            if let Some(mask) = g.members {
                if classes & mask == mask {
                    bv |= 1 << g.bit;
                }
            }
        }
        if let Some(m) = self.modes.iter().find(|m| m.members == Some(classes)) {
            bv |= 1 << m.bit;
        }
        bv
    }
}
