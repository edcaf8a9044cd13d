//! Bus auditor. Works out from the device tree alone which devices, pins and
//! I2C slaves the user asked to cut off, using only what the confirmation
//! screen showed, then checks every bus record against that.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::decode::Width;
use crate::dtree::{DeviceKind, DeviceTree, NodeId};
use crate::skernel::bitvec::CLASS_MASK;
use crate::skernel::{CloakResult, Skernel};
use crate::soc::devices::gpio_reg;
use crate::soc::{BusRecord, DmaDirection, MemoryMap, Model, Op, Resolved, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    /// An NS access reached a device of a disabled class.
    DisabledDeviceAccess,
    /// An NS access reached secure RAM.
    SecureRamAccess,
    /// An NS-programmed DMA reached secure memory or came from a disabled master.
    DmaLeak,
    /// The secure emulator touched a disabled device on the NS world's behalf.
    EmulationLeak,
    /// NS saw or changed a pin that belongs to a disabled class.
    PinLeak,
    /// An I2C slave of a disabled class saw a transaction.
    SlaveLeak,
    /// What the user approved differs from what was requested or applied.
    ConfirmationMismatch,
    /// A crashed NS step changed protection state or secure RAM.
    CrashSideEffect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub step: u64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Footprint {
    devices: BTreeSet<NodeId>,
    pins: BTreeMap<NodeId, u32>,
    slaves: BTreeSet<(NodeId, u8)>,
}

impl Footprint {
    fn extend(&mut self, o: &Footprint) {
        self.devices.extend(&o.devices);
        self.slaves.extend(&o.slaves);
        for (c, m) in &o.pins {
            *self.pins.entry(*c).or_default() |= m;
        }
    }
}

/// State of protected pins and slaves before an NS step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreStep {
    pins: Vec<(NodeId, u32, u32, u32)>,
    slaves: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub records: u64,
    /// NS accesses and DMA transfers aimed at something disabled, whether or
    /// not they got through.
    pub probes_of_disabled: u64,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone)]
pub struct Auditor {
    per_class: Vec<Footprint>,
    map: MemoryMap,
    truth: u32,
    active: Footprint,
    seen_confirmations: usize,
    seen_boots: u64,
    pub summary: AuditSummary,
}

fn footprint_of(tree: &DeviceTree, class: &str) -> Footprint {
    let mut f = Footprint::default();
    for &m in tree.class_members(class) {
        for n in tree.subtree(m) {
            let node = tree.node(n);
            if node.reg.is_some() {
                f.devices.insert(n);
            }
            if let (Some(a), Some(p)) = (node.bus_address, node.parent) {
                if tree.node(p).kind() == DeviceKind::I2cBus {
                    f.slaves.insert((p, a));
                }
            }
            for g in &node.gpio_deps {
                *f.pins.entry(g.controller).or_default() |= 1 << g.pin;
            }
        }
    }
    f
}

impl Auditor {
    pub fn new(tree: &DeviceTree, classes: &[String], map: MemoryMap) -> Self {
        Auditor {
            per_class: classes.iter().map(|c| footprint_of(tree, c)).collect(),
            map,
            truth: 0,
            active: Footprint::default(),
            seen_confirmations: 0,
            seen_boots: 0,
            summary: AuditSummary::default(),
        }
    }

    /// Class bits the user has approved and not since reset.
    pub fn truth(&self) -> u32 {
        self.truth
    }

    fn violation(&mut self, kind: ViolationKind, step: u64, detail: String) {
        self.summary.violations.push(Violation { kind, step, detail });
    }

    fn set_truth(&mut self, bits: u32) {
        self.truth = bits;
        self.active = Footprint::default();
        for (i, f) in self.per_class.iter().enumerate() {
            if bits >> i & 1 == 1 {
                self.active.extend(f);
            }
        }
    }

    /// Picks up confirmations and reboots since the last call.
    pub fn observe(&mut self, sk: &Skernel, step: u64) {
        if sk.boots() != self.seen_boots {
            self.seen_boots = sk.boots();
            self.set_truth(0);
        }
        let new: Vec<_> = sk.confirmations()[self.seen_confirmations..].to_vec();
        self.seen_confirmations = sk.confirmations().len();
        for c in new {
            if c.result != CloakResult::Applied {
                continue;
            }
            match c.shown {
                Some(bv) if bv == c.requested => self.set_truth(bv & CLASS_MASK),
                other => {
                    self.violation(
                        ViolationKind::ConfirmationMismatch,
                        step,
                        format!("applied {:#010x} but the screen showed {:?}", c.requested, other),
                    );
                    self.set_truth(c.requested & CLASS_MASK);
                }
            }
        }
        if sk.session_pending() {
            return;
        }
        let applied = sk.cloak_get() & CLASS_MASK;
        if applied != self.truth {
            self.violation(
                ViolationKind::ConfirmationMismatch,
                step,
                format!("enforced classes {applied:#x} differ from approved {:#x}", self.truth),
            );
            self.set_truth(applied);
        }
    }

    pub fn pre_step(&self, sk: &Skernel) -> PreStep {
        let mut pre = PreStep::default();
        for (&c, &mask) in &self.active.pins {
            if let Some(g) = sk.soc.gpio(c) {
                pre.pins.push((c, g.dr & mask, g.gdir & mask, g.imr & mask));
            }
        }
        for &(bus, a) in &self.active.slaves {
            pre.slaves.push(slave_transactions(sk, bus, a));
        }
        pre
    }

    fn is_secure_mem(&self, addr: u32, len: u32) -> bool {
        let end = addr as u64 + len.max(1) as u64;
        let hit = |b: u32, s: u32| (addr as u64) < b as u64 + s as u64 && end > b as u64;
        hit(self.map.secure_base, self.map.secure_size)
    }

    fn in_fb(&self, addr: u32, len: u32) -> bool {
        let end = addr as u64 + len.max(1) as u64;
        (addr as u64) < self.map.secure_fb_base as u64 + self.map.secure_fb_size as u64
            && end > self.map.secure_fb_base as u64
    }

    /// Checks the records of one NS step. `load` is the value an NS load
    /// got back, if it completed.
    pub fn check_ns_step(
        &mut self,
        sk: &Skernel,
        step: u64,
        records: &[BusRecord],
        load: Option<(u32, u32, u32)>,
        pre: &PreStep,
    ) {
        self.check_records(sk, step, records, true);
        if let Some((addr, width, value)) = load {
            if let Some(d) = sk.soc.device_at(addr) {
                if self.active.devices.contains(&d.node) && value != 0 {
                    self.violation(
                        ViolationKind::DisabledDeviceAccess,
                        step,
                        format!("NS load from {} at {addr:#010x} returned {value:#x}", d.name),
                    );
                }
                if let Some(&mask) = self.active.pins.get(&d.node) {
                    let off = addr - d.reg.base;
                    let reg = off & !3;
                    let shift = (off & 3) * 8;
                    let lane = Width::from_bytes(width).map_or(u32::MAX, |w| w.mask());
                    let visible = (mask >> shift) & lane;
                    let pin_regs = [gpio_reg::DR, gpio_reg::GDIR, gpio_reg::ISR, gpio_reg::IMR];
                    if pin_regs.contains(&reg) && value & visible != 0 {
                        self.violation(
                            ViolationKind::PinLeak,
                            step,
                            format!("NS read of {} reg {reg:#x} exposed hidden pins {:#x}", d.name, value & visible),
                        );
                    }
                }
            }
        }
        let post = self.pre_step(sk);
        for (a, b) in pre.pins.iter().zip(&post.pins) {
            if a != b {
                self.violation(
                    ViolationKind::PinLeak,
                    step,
                    format!("hidden pin state on node {} changed: {a:?} -> {b:?}", a.0 .0),
                );
            }
        }
        for (i, (a, b)) in pre.slaves.iter().zip(&post.slaves).enumerate() {
            if a != b {
                let (bus, addr) = *self.active.slaves.iter().nth(i).expect("same order");
                self.violation(
                    ViolationKind::SlaveLeak,
                    step,
                    format!("slave {addr:#04x} on node {} saw {} transaction(s)", bus.0, b - a),
                );
            }
        }
    }

    /// Records from a step the NS world did not originate (secure UI, keys).
    pub fn check_other_step(&mut self, sk: &Skernel, step: u64, records: &[BusRecord]) {
        self.check_records(sk, step, records, false);
    }

    fn check_records(&mut self, sk: &Skernel, step: u64, records: &[BusRecord], ns_step: bool) {
        for r in records {
            self.summary.records += 1;
            match *r {
                BusRecord::Access {
                    access,
                    resolved,
                    admitted,
                    ..
                } => {
                    let dev = match resolved {
                        Resolved::Device(i) => Some(&sk.soc.devices()[i]),
                        Resolved::Ram => None,
                    };
                    let disabled_dev = dev.filter(|d| self.active.devices.contains(&d.node));
                    match access.world {
                        World::NonSecure => {
                            if disabled_dev.is_some() || self.is_secure_mem(access.addr, access.width) {
                                self.summary.probes_of_disabled += 1;
                            }
                            if !admitted {
                                continue;
                            }
                            if let Some(d) = disabled_dev {
                                self.violation(
                                    ViolationKind::DisabledDeviceAccess,
                                    step,
                                    format!("NS {} reached {} at {:#010x}", access.op.as_str(), d.name, access.addr),
                                );
                            }
                            if dev.is_none()
                                && (self.is_secure_mem(access.addr, access.width)
                                    || (access.op == Op::Write && self.in_fb(access.addr, access.width)))
                            {
                                self.violation(
                                    ViolationKind::SecureRamAccess,
                                    step,
                                    format!("NS {} reached secure memory at {:#010x}", access.op.as_str(), access.addr),
                                );
                            }
                        }
                        World::Secure if ns_step => {
                            if let Some(d) = disabled_dev {
                                self.violation(
                                    ViolationKind::EmulationLeak,
                                    step,
                                    format!("emulation touched {} at {:#010x}", d.name, access.addr),
                                );
                            }
                        }
                        World::Secure => {}
                    }
                }
                BusRecord::Dma {
                    master,
                    direction,
                    addr,
                    len,
                    admitted,
                    ..
                } => {
                    let bad_master = self.active.devices.contains(&master);
                    let bad_target = self.is_secure_mem(addr, len)
                        || (direction == DmaDirection::ToMemory && self.in_fb(addr, len));
                    if bad_master || bad_target {
                        self.summary.probes_of_disabled += 1;
                    }
                    if admitted && len > 0 && (bad_master || bad_target) {
                        self.violation(
                            ViolationKind::DmaLeak,
                            step,
                            format!("DMA by node {} to {addr:#010x}+{len} was admitted", master.0),
                        );
                    }
                }
            }
        }
    }

    pub fn crash_side_effect(&mut self, step: u64, detail: String) {
        self.violation(ViolationKind::CrashSideEffect, step, detail);
    }
}

fn slave_transactions(sk: &Skernel, bus: NodeId, addr: u8) -> u64 {
    match sk.soc.device(bus).map(|d| &d.model) {
        Some(Model::I2c(m)) => m.slaves.get(&addr).map_or(0, |s| s.transactions()),
        _ => 0,
    }
}
