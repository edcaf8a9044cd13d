//! Reference-counted protection holds and the MMIO policy table derived
//! from them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::decode::{Transform, Verdict};
use crate::dtree::{GpioPin, I2cSlave, NodeId};
use crate::soc::devices::{gpio_reg, i2c_reg, ipu_reg};
use crate::soc::Op;

/// One unit of protection. Several owners (classes, the confirmation
/// session, boot) may hold the same unit; hardware is released only when
/// the count drops to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hold {
    Csl { register: u32, field: u32 },
    /// Deny-silent policy on a device's own MMIO range.
    Deny(NodeId),
    Pin(GpioPin),
    Slave(I2cSlave),
    /// Scanout registers of this IPU are frozen.
    IpuLock(NodeId),
    /// GIC line kept disabled.
    IrqOff(u32),
    /// GIC line routed to the secure world as FIQ.
    IrqSecure(u32),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Holds {
    counts: BTreeMap<Hold, u32>,
}

impl Holds {
    pub fn acquire(&mut self, h: Hold) {
        *self.counts.entry(h).or_insert(0) += 1;
    }

    pub fn release(&mut self, h: Hold) {
        match self.counts.get_mut(&h) {
            Some(1) => {
                self.counts.remove(&h);
            }
            Some(n) => *n -= 1,
            None => debug_assert!(false, "release of unheld {h:?}"),
        }
    }

    pub fn contains(&self, h: &Hold) -> bool {
        self.counts.contains_key(h)
    }

    pub fn count(&self, h: &Hold) -> u32 {
        self.counts.get(h).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Hold, &u32)> {
        self.counts.iter()
    }

    pub fn pins_of(&self, controller: NodeId) -> u32 {
        self.counts
            .keys()
            .filter_map(|h| match h {
                Hold::Pin(p) if p.controller == controller => Some(1u32 << p.pin),
                _ => None,
            })
            .fold(0, |a, b| a | b)
    }

    pub fn slaves_of(&self, bus: NodeId) -> BTreeSet<u8> {
        self.counts
            .keys()
            .filter_map(|h| match h {
                Hold::Slave(s) if s.bus == bus => Some(s.address),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceFilter {
    GpioPins {
        /// Pins hidden from the NS world: reads clear them, writes keep them.
        hidden: u32,
        /// Pins whose configuration the secure world owns; NS writes keep them.
        owned: u32,
        /// The controller's interrupt is taken over and the NS world sees
        /// a virtual ISR.
        virtual_isr: bool,
    },
    I2cSlaves {
        blocked: BTreeSet<u8>,
    },
    IpuScanoutLock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPolicy {
    pub base: u32,
    pub size: u32,
    pub device: NodeId,
    pub deny_read: bool,
    pub deny_write: bool,
    pub read_transform: Option<Transform>,
    pub write_transform: Option<Transform>,
    pub substitute_read: u32,
    pub filter: Option<DeviceFilter>,
}

impl RegionPolicy {
    pub fn pass_through(base: u32, size: u32, device: NodeId) -> Self {
        RegionPolicy {
            base,
            size,
            device,
            deny_read: false,
            deny_write: false,
            read_transform: None,
            write_transform: None,
            substitute_read: 0,
            filter: None,
        }
    }

    pub fn deny_silent(base: u32, size: u32, device: NodeId) -> Self {
        RegionPolicy {
            deny_read: true,
            deny_write: true,
            ..Self::pass_through(base, size, device)
        }
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.base && (addr as u64) < self.base as u64 + self.size as u64
    }

    pub fn is_deny_silent(&self) -> bool {
        self.deny_read && self.deny_write
    }
}

/// Mutable filter state that lives beside the (immutable) policy table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterState {
    /// Last NS-selected I2C target that was refused, per bus.
    pub i2c_latch: BTreeMap<NodeId, u8>,
    /// Interrupt status the NS world sees on taken-over GPIO controllers.
    pub virtual_isr: BTreeMap<NodeId, u32>,
}

/// One access as seen by the policy resolver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneAccess {
    pub op: Op,
    /// Register offset (word aligned) within the device.
    pub reg: u32,
    /// Bit position of the accessed lane within the register.
    pub shift: u32,
    /// Width mask of the lane.
    pub lane: u32,
    /// Store value, lane-relative.
    pub value: u32,
}

impl LaneAccess {
    fn lane_bits(&self, reg_mask: u32) -> u32 {
        (reg_mask >> self.shift) & self.lane
    }
}

/// Resolves the verdict for `acc` under `policy`. `hw_read` performs a
/// secure read of a whole register when the filter needs hardware state.
pub fn resolve(
    policy: &RegionPolicy,
    acc: &LaneAccess,
    state: &mut FilterState,
    hw_read: &mut dyn FnMut(u32) -> u32,
) -> Verdict {
    let deny = Verdict::Deny {
        substitute: acc.lane_bits(policy.substitute_read),
    };
    match acc.op {
        Op::Read if policy.deny_read => return deny,
        Op::Write if policy.deny_write => return deny,
        _ => {}
    }
    let Some(filter) = &policy.filter else {
        return Verdict::Allow {
            read: policy.read_transform,
            write: policy.write_transform,
        };
    };
    let read = |t: Transform| Verdict::Allow {
        read: Some(t),
        write: None,
    };
    let write = |t: Transform| Verdict::Allow {
        read: None,
        write: Some(t),
    };
    match filter {
        DeviceFilter::GpioPins {
            hidden,
            owned,
            virtual_isr,
        } => {
            let keep = acc.lane_bits(hidden | owned);
            match (acc.op, acc.reg) {
                (Op::Read, gpio_reg::ISR) if *virtual_isr => {
                    let v = state.virtual_isr.get(&policy.device).copied().unwrap_or(0);
                    read(Transform::Replace(acc.lane_bits(v & !hidden)))
                }
                (Op::Write, gpio_reg::ISR) if *virtual_isr => {
                    let v = state.virtual_isr.entry(policy.device).or_insert(0);
                    *v &= !((acc.value & acc.lane) << acc.shift);
                    Verdict::Deny { substitute: 0 }
                }
                (Op::Read, gpio_reg::DR | gpio_reg::GDIR | gpio_reg::ISR | gpio_reg::IMR) => {
                    read(Transform::ClearBits(acc.lane_bits(*hidden)))
                }
                (Op::Write, gpio_reg::ISR) => write(Transform::ClearBits(keep)),
                (Op::Write, gpio_reg::DR | gpio_reg::GDIR | gpio_reg::IMR) => {
                    write(Transform::PreserveMasked(keep))
                }
                _ => Verdict::PASS,
            }
        }
        DeviceFilter::I2cSlaves { blocked } => {
            let latch = state.i2c_latch.get(&policy.device).copied();
            match (acc.op, acc.reg) {
                (Op::Write, i2c_reg::ADDR) => {
                    let current = latch.map_or_else(|| hw_read(i2c_reg::ADDR), |l| l as u32);
                    let mask = acc.lane << acc.shift;
                    let next = ((current & !mask) | ((acc.value & acc.lane) << acc.shift)) as u8 & 0x7f;
                    if blocked.contains(&next) {
                        state.i2c_latch.insert(policy.device, next);
                        Verdict::Deny { substitute: 0 }
                    } else {
                        state.i2c_latch.remove(&policy.device);
                        Verdict::PASS
                    }
                }
                (Op::Read, i2c_reg::ADDR) => match latch {
                    Some(l) => read(Transform::Replace(acc.lane_bits(l as u32))),
                    None => Verdict::PASS,
                },
                (op, i2c_reg::DATA | i2c_reg::STATUS) => {
                    let target = latch.unwrap_or_else(|| hw_read(i2c_reg::ADDR) as u8 & 0x7f);
                    if !blocked.contains(&target) {
                        return Verdict::PASS;
                    }
                    match (op, acc.reg) {
                        (Op::Read, i2c_reg::STATUS) => {
                            read(Transform::SetBits(acc.lane_bits(i2c_reg::STATUS_NACK)))
                        }
                        (Op::Write, i2c_reg::STATUS) => Verdict::PASS,
                        _ => Verdict::Deny { substitute: 0 },
                    }
                }
                _ => Verdict::PASS,
            }
        }
        DeviceFilter::IpuScanoutLock => match (acc.op, acc.reg) {
            (Op::Write, ipu_reg::FB_BASE | ipu_reg::FB_FORMAT | ipu_reg::ENABLE) => {
                Verdict::Deny { substitute: 0 }
            }
            _ => Verdict::PASS,
        },
    }
}
