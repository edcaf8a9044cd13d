//! CSU config-security-level fields and the TZASC region table, viewed as
//! a single admission function on the bus.

use serde::{Deserialize, Serialize};

use super::{Op, SocError, World};

pub const TZASC_GRANULE: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CslLevel {
    NsAllowed,
    SecureOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TzascPerm {
    NsNone,
    NsReadOnly,
    NsRw,
}

impl TzascPerm {
    pub fn admits(self, op: Op) -> bool {
        match self {
            TzascPerm::NsNone => false,
            TzascPerm::NsReadOnly => op == Op::Read,
            TzascPerm::NsRw => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TzascRegion {
    pub base: u64,
    pub size: u64,
    pub perm: TzascPerm,
}

impl TzascRegion {
    pub fn end(&self) -> u64 {
        self.base + self.size
    }
}

/// Firewall configuration. Addresses not covered by a TZASC region are
/// `NsRw`; the stored table is sorted, disjoint and coalesced, and never
/// holds `NsRw` entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FirewallState {
    csl: Vec<Vec<CslLevel>>,
    tzasc: Vec<TzascRegion>,
}

/// What an address resolves to, for admission purposes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target<'a> {
    Ram,
    Device {
        csl: &'a [(u32, u32)],
        secure_only: bool,
    },
}

impl FirewallState {
    /// Reset state: every CSL field admits non-secure accesses and all RAM is
    /// non-secure read/write.
    pub fn new(registers: u32, fields_per_register: u32) -> Self {
        FirewallState {
            csl: vec![vec![CslLevel::NsAllowed; fields_per_register as usize]; registers as usize],
            tzasc: Vec::new(),
        }
    }

    pub fn geometry(&self) -> (u32, u32) {
        (
            self.csl.len() as u32,
            self.csl.first().map_or(0, |r| r.len() as u32),
        )
    }

    pub fn csl(&self, register: u32, field: u32) -> Result<CslLevel, SocError> {
        self.csl
            .get(register as usize)
            .and_then(|r| r.get(field as usize))
            .copied()
            .ok_or(SocError::OutOfRange { register, field })
    }

    pub fn csu_set(&mut self, register: u32, field: u32, level: CslLevel) -> Result<(), SocError> {
        let slot = self
            .csl
            .get_mut(register as usize)
            .and_then(|r| r.get_mut(field as usize))
            .ok_or(SocError::OutOfRange { register, field })?;
        *slot = level;
        Ok(())
    }

    /// Bitmask of SECURE_ONLY fields in one CSL register.
    pub fn csl_register_bits(&self, register: u32) -> u32 {
        self.csl
            .get(register as usize)
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, l)| **l == CslLevel::SecureOnly)
                    .fold(0u32, |acc, (i, _)| acc | (1 << (i as u32 % 32)))
            })
            .unwrap_or(0)
    }

    pub fn tzasc_regions(&self) -> &[TzascRegion] {
        &self.tzasc
    }

    pub fn tzasc_set_region(&mut self, base: u32, size: u32, perm: TzascPerm) -> Result<(), SocError> {
        if size == 0 {
            return Err(SocError::ZeroSize);
        }
        if !base.is_multiple_of(TZASC_GRANULE) || !size.is_multiple_of(TZASC_GRANULE) {
            return Err(SocError::Misaligned { addr: base });
        }
        let new = TzascRegion {
            base: base as u64,
            size: size as u64,
            perm,
        };
        let mut out: Vec<TzascRegion> = Vec::with_capacity(self.tzasc.len() + 2);
        for r in &self.tzasc {
            if r.end() <= new.base || r.base >= new.end() {
                out.push(*r);
                continue;
            }
            if r.base < new.base {
                out.push(TzascRegion {
                    base: r.base,
                    size: new.base - r.base,
                    perm: r.perm,
                });
            }
            if r.end() > new.end() {
                out.push(TzascRegion {
                    base: new.end(),
                    size: r.end() - new.end(),
                    perm: r.perm,
                });
            }
        }
        out.push(new);
        out.retain(|r| r.perm != TzascPerm::NsRw);
        out.sort_by_key(|r| r.base);
        let mut flat: Vec<TzascRegion> = Vec::with_capacity(out.len());
        for r in out {
            match flat.last_mut() {
                Some(last) if last.end() == r.base && last.perm == r.perm => last.size += r.size,
                _ => flat.push(r),
            }
        }
        self.tzasc = flat;
        Ok(())
    }

    pub fn tzasc_perm(&self, addr: u64) -> TzascPerm {
        self.tzasc
            .iter()
            .find(|r| r.base <= addr && addr < r.end())
            .map_or(TzascPerm::NsRw, |r| r.perm)
    }

    /// Strictest permission over `[addr, addr + len)`.
    pub fn tzasc_perm_range(&self, addr: u64, len: u64) -> TzascPerm {
        let end = addr + len.max(1);
        let mut perm = TzascPerm::NsRw;
        for r in &self.tzasc {
            if r.base < end && addr < r.end() {
                perm = match (perm, r.perm) {
                    (_, TzascPerm::NsNone) | (TzascPerm::NsNone, _) => TzascPerm::NsNone,
                    (_, TzascPerm::NsReadOnly) | (TzascPerm::NsReadOnly, _) => TzascPerm::NsReadOnly,
                    _ => TzascPerm::NsRw,
                };
            }
        }
        perm
    }

    /// The admission rule: secure accesses always pass; non-secure accesses
    /// need every covering CSL field open (devices) or a permitting TZASC
    /// region (RAM).
    pub fn admits(&self, target: &Target<'_>, world: World, op: Op, addr: u32, width: u32) -> bool {
        if world == World::Secure {
            return true;
        }
        match target {
            Target::Ram => self.tzasc_perm_range(addr as u64, width as u64).admits(op),
            Target::Device { csl, secure_only } => {
                !secure_only
                    && csl
                        .iter()
                        .all(|&(r, f)| self.csl(r, f) == Ok(CslLevel::NsAllowed))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_state_admits_ns() {
        let fw = FirewallState::new(4, 4);
        let dev = Target::Device {
            csl: &[(1, 2)],
            secure_only: false,
        };
        assert!(fw.admits(&dev, World::NonSecure, Op::Read, 0x100, 4));
        assert!(fw.admits(&Target::Ram, World::NonSecure, Op::Write, 0x1000_0000, 4));
    }

    #[test]
    fn csu_set_denies_ns_only() {
        let mut fw = FirewallState::new(4, 4);
        fw.csu_set(1, 2, CslLevel::SecureOnly).unwrap();
        let dev = Target::Device {
            csl: &[(1, 2)],
            secure_only: false,
        };
        assert!(!fw.admits(&dev, World::NonSecure, Op::Read, 0x100, 4));
        assert!(fw.admits(&dev, World::Secure, Op::Write, 0x100, 4));
        assert_eq!(fw.csl_register_bits(1), 0b100);
    }

    #[test]
    fn csu_set_idempotent_and_range_checked() {
        let mut fw = FirewallState::new(2, 2);
        let before = fw.clone();
        fw.csu_set(0, 1, CslLevel::NsAllowed).unwrap();
        fw.csu_set(0, 1, CslLevel::NsAllowed).unwrap();
        assert_eq!(fw, before);
        assert_eq!(
            fw.csu_set(2, 0, CslLevel::SecureOnly),
            Err(SocError::OutOfRange { register: 2, field: 0 })
        );
        assert!(fw.csu_set(0, 2, CslLevel::SecureOnly).is_err());
    }

    #[test]
    fn tzasc_read_only_region() {
        let mut fw = FirewallState::new(1, 1);
        fw.tzasc_set_region(0x4000_0000, 0x10_0000, TzascPerm::NsReadOnly).unwrap();
        assert!(fw.admits(&Target::Ram, World::NonSecure, Op::Read, 0x4000_0010, 4));
        assert!(!fw.admits(&Target::Ram, World::NonSecure, Op::Write, 0x4000_0010, 4));
        assert!(fw.admits(&Target::Ram, World::Secure, Op::Write, 0x4000_0010, 4));
    }

    #[test]
    fn tzasc_rejects_degenerate_regions() {
        let mut fw = FirewallState::new(1, 1);
        assert_eq!(fw.tzasc_set_region(0x1000, 0, TzascPerm::NsNone), Err(SocError::ZeroSize));
        assert!(matches!(
            fw.tzasc_set_region(0x1001, 0x1000, TzascPerm::NsNone),
            Err(SocError::Misaligned { .. })
        ));
        assert!(fw.tzasc_set_region(0x1000, 0x800, TzascPerm::NsNone).is_err());
    }

    #[test]
    fn tzasc_later_entries_override_and_flatten() {
        let mut fw = FirewallState::new(1, 1);
        fw.tzasc_set_region(0x0, 0x10000, TzascPerm::NsNone).unwrap();
        fw.tzasc_set_region(0x4000, 0x2000, TzascPerm::NsReadOnly).unwrap();
        fw.tzasc_set_region(0x8000, 0x1000, TzascPerm::NsRw).unwrap();
        let r = fw.tzasc_regions();
        assert_eq!(
            r,
            &[
                TzascRegion { base: 0, size: 0x4000, perm: TzascPerm::NsNone },
                TzascRegion { base: 0x4000, size: 0x2000, perm: TzascPerm::NsReadOnly },
                TzascRegion { base: 0x6000, size: 0x2000, perm: TzascPerm::NsNone },
                TzascRegion { base: 0x9000, size: 0x7000, perm: TzascPerm::NsNone },
            ]
        );
        for w in r.windows(2) {
            assert!(w[0].end() <= w[1].base);
        }
        assert_eq!(fw.tzasc_perm(0x8800), TzascPerm::NsRw);
        fw.tzasc_set_region(0x4000, 0x2000, TzascPerm::NsNone).unwrap();
        fw.tzasc_set_region(0x8000, 0x1000, TzascPerm::NsNone).unwrap();
        assert_eq!(
            fw.tzasc_regions(),
            &[TzascRegion { base: 0, size: 0x10000, perm: TzascPerm::NsNone }]
        );
    }

    #[test]
    fn access_straddling_regions_takes_strictest() {
        let mut fw = FirewallState::new(1, 1);
        fw.tzasc_set_region(0x2000, 0x1000, TzascPerm::NsNone).unwrap();
        assert!(!fw.admits(&Target::Ram, World::NonSecure, Op::Read, 0x1ffe, 4));
    }

    #[test]
    fn secure_only_device_never_admits_ns() {
        let fw = FirewallState::new(1, 1);
        let csu = Target::Device {
            csl: &[],
            secure_only: true,
        };
        assert!(!fw.admits(&csu, World::NonSecure, Op::Read, 0, 4));
        assert!(fw.admits(&csu, World::Secure, Op::Read, 0, 4));
    }
}
