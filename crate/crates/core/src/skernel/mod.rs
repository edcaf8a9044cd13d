//! The secure kernel: boot configuration, data-abort emulation, the CLOAK
//! SMC protocol with on-screen confirmation, class enable/disable and the
//! reset policy.

pub mod bitvec;
pub mod keys;
pub mod policy;
pub mod render;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::decode::{self, DecodeError, EmuBus, Instr, Kind, NsContext, Verdict, Width};
use crate::dtree::{DeviceKind, DeviceTree, DtsError, GpioPin, NodeId, ProtectionPlan, LED_CLASS};
use crate::soc::devices::{gpio_reg, ipu_reg};
use crate::soc::{
    BusAccess, BusOutcome, Category, CostModel, CslLevel, DmaDirection, FirewallState, IrqGroup, MemoryMap,
    Op, Soc, SocError, TzascPerm,
};
pub use bitvec::Layout;
pub use keys::Key;
pub use policy::{DeviceFilter, FilterState, Hold, Holds, RegionPolicy};

pub const SMC_CLOAK_SET: u32 = 0x8300_0001;
pub const SMC_CLOAK_GET: u32 = 0x8300_0002;
pub const SMC_PSCI_SYSTEM_RESET: u32 = 0x8400_0009;

pub const CLOAK_APPLIED: u32 = 0;
pub const CLOAK_DENIED: u32 = 1;
pub const CLOAK_INVALID: u32 = 2;
pub const CLOAK_BUSY: u32 = 3;
pub const PSCI_RESET_OK: u32 = 0;
pub const SMC_ERROR: u32 = u32::MAX;

/// Start of the NS kernel's linear map of RAM.
pub const NS_LINEAR_VA: u32 = 0xC000_0000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SkError {
    #[error("device tree rejected: {0}")]
    TreeRejected(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error(transparent)]
    Soc(#[from] SocError),
}

impl From<DtsError> for SkError {
    fn from(e: DtsError) -> Self {
        SkError::TreeRejected(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scr {
    pub ns: bool,
    pub ea_to_monitor: bool,
    pub fiq_to_monitor: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassState {
    Enabled,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CloakResult {
    Applied,
    Denied,
    Invalid,
    Busy,
    /// Waiting for the user to confirm or cancel.
    Pending,
}

impl CloakResult {
    pub fn code(self) -> Option<u32> {
        match self {
            CloakResult::Applied => Some(CLOAK_APPLIED),
            CloakResult::Denied => Some(CLOAK_DENIED),
            CloakResult::Invalid => Some(CLOAK_INVALID),
            CloakResult::Busy => Some(CLOAK_BUSY),
            CloakResult::Pending => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmcOutcome {
    Return(u32),
    Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResetSource {
    NsCall,
    KeySequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResetOutcome {
    Reset,
    Denied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FatalReason {
    Imprecise,
    InstructionOutsideNsRam,
    NotDeviceRegion,
    Misaligned,
    Undecodable(u32),
    PcBase,
    AddressMismatch,
    NoPolicy,
}

impl FatalReason {
    pub fn name(self) -> String {
        match self {
            FatalReason::Imprecise => "imprecise".into(),
            FatalReason::InstructionOutsideNsRam => "instruction_outside_ns_ram".into(),
            FatalReason::NotDeviceRegion => "not_device_region".into(),
            FatalReason::Misaligned => "misaligned".into(),
            FatalReason::Undecodable(w) => format!("undecodable:{w:#010x}"),
            FatalReason::PcBase => "pc_base".into(),
            FatalReason::AddressMismatch => "address_mismatch".into(),
            FatalReason::NoPolicy => "no_policy".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortOutcome {
    Emulated {
        instr: Instr,
        pa: u32,
        device: NodeId,
        verdict: Verdict,
    },
    Fatal(FatalReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PinDisposition {
    /// Taken by the confirmation dialog.
    Consumed,
    /// Passed on to the NS world on the given alternate line.
    Redelivered(u32),
    /// Re-delivery was already pending.
    Coalesced,
    Dropped,
}

/// What one physical key event caused.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyReport {
    pub pins: Vec<(GpioPin, PinDisposition)>,
    pub cloak: Option<CloakResult>,
    pub reset: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Session {
    bv: u32,
    holds: Vec<Hold>,
    saved_ipu: Option<(NodeId, [u32; 3])>,
    /// What the user saw on the screen, decoded.
    shown: Option<u32>,
}

/// Confirmation dialogs that finished, for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub requested: u32,
    pub shown: Option<u32>,
    pub result: CloakResult,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct BoardIo {
    keys: BTreeMap<Key, GpioPin>,
    led: GpioPin,
    /// GPIO controllers whose interrupt the secure world takes over, with
    /// the pins it configures itself.
    takeover: BTreeMap<NodeId, u32>,
    ipu: Option<NodeId>,
}

/// Source of physical user input for the synchronous CLOAK_SET wrapper.
pub trait UserEventSource {
    fn next_event(&mut self) -> Option<(Key, bool)>;
}

impl<I: Iterator<Item = (Key, bool)>> UserEventSource for I {
    fn next_event(&mut self) -> Option<(Key, bool)> {
        self.next()
    }
}

struct SecureBus<'a>(&'a mut Soc);

impl EmuBus for SecureBus<'_> {
    fn read(&mut self, addr: u32, width: Width) -> u32 {
        match self.0.bus_access(BusAccess::secure_read(addr, width.bytes())) {
            Ok(BusOutcome::Ok(v)) => v,
            _ => 0,
        }
    }

    fn write(&mut self, addr: u32, width: Width, value: u32) {
        let _ = self.0.bus_access(BusAccess::secure_write(addr, width.bytes(), value));
    }
}

#[derive(Debug, Clone)]
pub struct Skernel {
    pub tree: DeviceTree,
    pub soc: Soc,
    pub scr: Scr,
    pub layout: Layout,
    plans: Vec<ProtectionPlan>,
    disabled: Vec<bool>,
    holds: Holds,
    policies: Vec<RegionPolicy>,
    filters: FilterState,
    io: BoardIo,
    session: Option<Session>,
    seq: keys::KeySequence,
    ui_clock_ms: u64,
    boots: u64,
    confirmations: Vec<Confirmation>,
}

fn secure_rmw(soc: &mut Soc, addr: u32, set: u32, clear: u32) {
    let old = match soc.bus_access(BusAccess::secure_read(addr, 4)) {
        Ok(BusOutcome::Ok(v)) => v,
        _ => 0,
    };
    let _ = soc.bus_access(BusAccess::secure_write(addr, 4, (old & !clear) | set));
}

impl Skernel {
    /// Boots from a verified tree: secure RAM and the confirmation
    /// framebuffer are fenced off, aborts and FIQs go to the monitor, the
    /// keypad interrupt and the LED are taken over, and every class starts
    /// enabled.
    pub fn boot(tree: DeviceTree, map: MemoryMap, cost: CostModel) -> Result<Skernel, SkError> {
        tree.check_enforceable()?;
        let classes = tree.classes_of();
        if classes.len() > bitvec::CLASS_BITS as usize {
            return Err(SkError::TreeRejected(format!(
                "{} classes exceed the {} class bits",
                classes.len(),
                bitvec::CLASS_BITS
            )));
        }
        let plans = classes
            .iter()
            .map(|c| tree.class_plan(c))
            .collect::<Result<Vec<_>, _>>()?;
        let soc = Soc::new(&tree, map, cost).map_err(|e| SkError::TreeRejected(e.to_string()))?;
        let io = Self::board_io(&tree, &soc)?;
        let mut sk = Skernel {
            layout: Layout::new(classes.clone()),
            disabled: vec![false; classes.len()],
            plans,
            tree,
            soc,
            scr: Scr {
                ns: false,
                ea_to_monitor: false,
                fiq_to_monitor: false,
            },
            holds: Holds::default(),
            policies: Vec::new(),
            filters: FilterState::default(),
            io,
            session: None,
            seq: Default::default(),
            ui_clock_ms: 0,
            boots: 0,
            confirmations: Vec::new(),
        };
        sk.init_hardware()?;
        Ok(sk)
    }

    fn board_io(tree: &DeviceTree, soc: &Soc) -> Result<BoardIo, SkError> {
        let reject = |m: &str| SkError::TreeRejected(m.to_string());
        let mut keys = BTreeMap::new();
        for n in tree.nodes().filter(|n| n.kind() == DeviceKind::GpioKeys) {
            for &c in &n.children {
                let child = tree.node(c);
                if let (Some(k), Some(g)) = (Key::from_name(&child.name), child.gpio_deps.first()) {
                    keys.insert(
                        k,
                        GpioPin {
                            controller: g.controller,
                            pin: g.pin,
                        },
                    );
                }
            }
        }
        for k in [Key::Home, Key::Back, Key::Power] {
            if !keys.contains_key(&k) {
                return Err(reject(&format!("no {} key", k.name())));
            }
        }
        let led = tree
            .class_members(LED_CLASS)
            .iter()
            .find_map(|&n| tree.node(n).gpio_deps.first())
            .map(|g| GpioPin {
                controller: g.controller,
                pin: g.pin,
            })
            .ok_or_else(|| reject("no LED pin"))?;
        let mut takeover: BTreeMap<NodeId, u32> = BTreeMap::new();
        for p in keys.values() {
            *takeover.entry(p.controller).or_default() |= 1 << p.pin;
        }
        for &c in takeover.keys() {
            if soc.device(c).and_then(|d| d.irq).is_none() {
                return Err(reject("keypad GPIO controller has no interrupt line"));
            }
        }
        let ipu = soc.devices().iter().find(|d| d.kind == DeviceKind::Ipu).map(|d| d.node);
        Ok(BoardIo {
            keys,
            led,
            takeover,
            ipu,
        })
    }

    fn csl_holds_of(&self, node: NodeId) -> Vec<Hold> {
        self.tree
            .effective_protect(node)
            .iter()
            .map(|p| Hold::Csl {
                register: p.register,
                field: p.field,
            })
            .collect()
    }

    fn init_hardware(&mut self) -> Result<(), SkError> {
        self.scr = Scr {
            ns: false,
            ea_to_monitor: true,
            fiq_to_monitor: true,
        };
        let map = self.soc.map;
        self.soc
            .tzasc_set_region(map.secure_base, map.secure_size, TzascPerm::NsNone)?;
        self.soc
            .tzasc_set_region(map.secure_fb_base, map.secure_fb_size, TzascPerm::NsReadOnly)?;

        for (c, pins) in self.io.takeover.clone() {
            for h in self.csl_holds_of(c) {
                self.holds.acquire(h);
            }
            let irq = self.soc.device(c).and_then(|d| d.irq).expect("checked at boot");
            self.holds.acquire(Hold::IrqSecure(irq));
            let base = self.soc.device(c).expect("controller").reg.base;
            secure_rmw(&mut self.soc, base + gpio_reg::GDIR, 0, pins);
            secure_rmw(&mut self.soc, base + gpio_reg::IMR, pins, 0);
        }
        let led = self.io.led;
        for h in self.csl_holds_of(led.controller) {
            self.holds.acquire(h);
        }
        self.holds.acquire(Hold::Pin(led));
        let base = self.led_base();
        secure_rmw(&mut self.soc, base + gpio_reg::GDIR, 1 << led.pin, 0);
        self.set_led(false);
        self.sync();
        self.scr.ns = true;
        Ok(())
    }

    fn set_led(&mut self, on: bool) {
        let bit = 1 << self.io.led.pin;
        let addr = self.led_base() + gpio_reg::DR;
        let (set, clear) = if on { (bit, 0) } else { (0, bit) };
        secure_rmw(&mut self.soc, addr, set, clear);
    }

    fn led_base(&self) -> u32 {
        self.soc
            .device(self.io.led.controller)
            .map(|d| d.reg.base)
            .expect("LED controller is an MMIO device")
    }

    /// Applies the hold set to the firewall and interrupt controller and
    /// rebuilds the policy table.
    fn sync(&mut self) {
        let (regs, fields) = self.soc.firewall().geometry();
        for r in 0..regs {
            for f in 0..fields {
                let want = if self.holds.contains(&Hold::Csl { register: r, field: f }) {
                    CslLevel::SecureOnly
                } else {
                    CslLevel::NsAllowed
                };
                if self.soc.firewall().csl(r, f) != Ok(want) {
                    self.soc.csu_set(r, f, want).expect("within geometry");
                }
            }
        }
        let lines: Vec<u32> = self.soc.gic.lines().keys().copied().collect();
        for l in lines {
            let group = if self.holds.contains(&Hold::IrqSecure(l)) {
                IrqGroup::FiqSecure
            } else {
                IrqGroup::IrqNs
            };
            let enabled = !self.holds.contains(&Hold::IrqOff(l));
            let cur = *self.soc.gic.line(l).expect("listed");
            if cur.group != group || cur.enabled != enabled {
                self.soc.gic.configure(l, enabled, group).expect("listed");
            }
        }
        // Hidden pins on controllers the NS world still services must not
        // interrupt it.
        let mut hide: BTreeMap<NodeId, u32> = BTreeMap::new();
        for (h, _) in self.holds.iter() {
            if let Hold::Pin(p) = h {
                if !self.io.takeover.contains_key(&p.controller) {
                    *hide.entry(p.controller).or_default() |= 1 << p.pin;
                }
            }
        }
        for (c, mask) in hide {
            if let Some(d) = self.soc.device(c) {
                let base = d.reg.base;
                let imr = self.soc.gpio(c).map_or(0, |g| g.imr);
                if imr & mask != 0 {
                    secure_rmw(&mut self.soc, base + gpio_reg::IMR, 0, mask);
                }
            }
        }
        self.policies = self.build_policies();
        let live: BTreeSet<NodeId> = self
            .policies
            .iter()
            .filter(|p| matches!(p.filter, Some(DeviceFilter::I2cSlaves { .. })))
            .map(|p| p.device)
            .collect();
        self.filters.i2c_latch.retain(|k, _| live.contains(k));
    }

    fn build_policies(&self) -> Vec<RegionPolicy> {
        let mut out = Vec::new();
        for d in self.soc.devices() {
            if d.secure_only {
                continue;
            }
            let gated = d.csl.iter().any(|&(r, f)| {
                self.holds.contains(&Hold::Csl {
                    register: r,
                    field: f,
                })
            });
            if !gated {
                continue;
            }
            let (base, size) = (d.reg.base, d.reg.size);
            if self.holds.contains(&Hold::Deny(d.node)) {
                out.push(RegionPolicy::deny_silent(base, size, d.node));
                continue;
            }
            let filter = match d.kind {
                DeviceKind::Gpio => {
                    let hidden = self.holds.pins_of(d.node);
                    let takeover = self.io.takeover.get(&d.node).copied();
                    let owned = takeover.unwrap_or(0)
                        | if self.io.led.controller == d.node {
                            1 << self.io.led.pin
                        } else {
                            0
                        };
                    (hidden | owned != 0 || takeover.is_some()).then_some(DeviceFilter::GpioPins {
                        hidden,
                        owned,
                        virtual_isr: takeover.is_some(),
                    })
                }
                DeviceKind::I2cBus => {
                    let blocked = self.holds.slaves_of(d.node);
                    (!blocked.is_empty()).then_some(DeviceFilter::I2cSlaves { blocked })
                }
                DeviceKind::Ipu => self
                    .holds
                    .contains(&Hold::IpuLock(d.node))
                    .then_some(DeviceFilter::IpuScanoutLock),
                _ => None,
            };
            out.push(RegionPolicy {
                filter,
                ..RegionPolicy::pass_through(base, size, d.node)
            });
        }
        out.sort_by_key(|p| p.base);
        out
    }

    fn reboot(&mut self) {
        self.soc.reset();
        self.holds = Holds::default();
        self.filters = FilterState::default();
        self.disabled.iter_mut().for_each(|d| *d = false);
        self.session = None;
        self.seq = Default::default();
        self.boots += 1;
        self.init_hardware().expect("configuration already validated at first boot");
    }

    // ---- queries -------------------------------------------------------

    pub fn classes(&self) -> &[String] {
        &self.layout.classes
    }

    pub fn class_state(&self, class: &str) -> Result<ClassState, SkError> {
        let i = self.class_index(class)?;
        Ok(if self.disabled[i] {
            ClassState::Disabled
        } else {
            ClassState::Enabled
        })
    }

    pub fn class_plan(&self, class: &str) -> Result<&ProtectionPlan, SkError> {
        Ok(&self.plans[self.class_index(class)?])
    }

    fn class_index(&self, class: &str) -> Result<usize, SkError> {
        self.layout
            .classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| SkError::UnknownClass(class.to_string()))
    }

    pub fn disabled_mask(&self) -> u32 {
        self.disabled
            .iter()
            .enumerate()
            .filter(|(_, d)| **d)
            .fold(0, |m, (i, _)| m | 1 << i)
    }

    pub fn policies(&self) -> &[RegionPolicy] {
        &self.policies
    }

    pub fn holds(&self) -> &Holds {
        &self.holds
    }

    pub fn filter_state(&self) -> &FilterState {
        &self.filters
    }

    /// Firewall state and policy table, the two things class toggles change.
    pub fn protection_snapshot(&self) -> (FirewallState, Vec<RegionPolicy>) {
        (self.soc.firewall().clone(), self.policies.clone())
    }

    pub fn session_pending(&self) -> bool {
        self.session.is_some()
    }

    pub fn boots(&self) -> u64 {
        self.boots
    }

    pub fn confirmations(&self) -> &[Confirmation] {
        &self.confirmations
    }

    pub fn keypad(&self) -> &BTreeMap<Key, GpioPin> {
        &self.io.keys
    }

    pub fn led_pin(&self) -> GpioPin {
        self.io.led
    }

    pub fn led_lit(&self) -> bool {
        self.soc
            .gpio(self.io.led.controller)
            .is_some_and(|g| g.output_level(self.io.led.pin))
    }

    pub fn ipu(&self) -> Option<NodeId> {
        self.io.ipu
    }

    /// NS virtual to physical: the linear map covers RAM, everything else is
    /// identity-mapped.
    pub fn translate(&self, va: u32) -> u32 {
        if va >= NS_LINEAR_VA {
            va - NS_LINEAR_VA + self.soc.map.ram_base
        } else {
            va
        }
    }

    /// What the panel currently shows: the IPU scanout of its framebuffer,
    /// if enabled and readable by the display DMA.
    pub fn displayed_image(&self) -> Option<Vec<u8>> {
        let ipu = self.soc.device(self.io.ipu?)?;
        let crate::soc::Model::Ipu(regs) = &ipu.model else { return None };
        if regs.enable == 0 || regs.fb_format != ipu_reg::FORMAT_RGB24 {
            return None;
        }
        let len = render::IMAGE_BYTES;
        self.soc
            .dma_admits(self.soc.firewall(), DmaDirection::FromMemory, regs.fb_base, len)
            .then(|| self.soc.ram_read_bytes(regs.fb_base, len))
    }

    // ---- class control -------------------------------------------------

    fn plan_holds(&self, i: usize) -> Vec<Hold> {
        let p = &self.plans[i];
        let mut v: Vec<Hold> = p
            .protect
            .iter()
            .map(|r| Hold::Csl {
                register: r.register,
                field: r.field,
            })
            .collect();
        v.extend(p.deny_regions.iter().map(|&n| Hold::Deny(n)));
        v.extend(p.gpio_pins.iter().map(|&g| Hold::Pin(g)));
        v.extend(p.i2c_slaves.iter().map(|&s| Hold::Slave(s)));
        v.extend(p.irq_lines.iter().map(|&l| Hold::IrqOff(l)));
        v
    }

    fn set_class_index(&mut self, i: usize, disable: bool) {
        if self.disabled[i] == disable {
            return;
        }
        for h in self.plan_holds(i) {
            if disable {
                self.holds.acquire(h);
            } else {
                self.holds.release(h);
            }
        }
        self.disabled[i] = disable;
        self.sync();
    }

    pub fn set_class_state(&mut self, class: &str, target: ClassState) -> Result<(), SkError> {
        let i = self.class_index(class)?;
        self.set_class_index(i, target == ClassState::Disabled);
        Ok(())
    }

    // ---- SMC -----------------------------------------------------------

    pub fn smc(&mut self, fid: u32, r1: u32) -> SmcOutcome {
        match fid {
            SMC_CLOAK_SET => match self.cloak_set_begin(r1) {
                CloakResult::Pending => SmcOutcome::Pending,
                r => SmcOutcome::Return(r.code().expect("final")),
            },
            _ if self.session.is_some() => SmcOutcome::Return(SMC_ERROR),
            SMC_CLOAK_GET => SmcOutcome::Return(self.cloak_get()),
            SMC_PSCI_SYSTEM_RESET => SmcOutcome::Return(match self.psci_reset(ResetSource::NsCall) {
                ResetOutcome::Reset => PSCI_RESET_OK,
                ResetOutcome::Denied => SMC_ERROR,
            }),
            _ => SmcOutcome::Return(SMC_ERROR),
        }
    }

    pub fn cloak_get(&self) -> u32 {
        self.layout.complete(self.disabled_mask())
    }

    /// First half of CLOAK_SET: takes the screen and keypad, validates the
    /// request, shows it and lights the LED.
    pub fn cloak_set_begin(&mut self, bv: u32) -> CloakResult {
        if self.session.is_some() {
            return CloakResult::Busy;
        }
        let mut holds = Vec::new();
        let mut saved_ipu = None;
        if let Some(ipu) = self.io.ipu {
            holds.extend(self.csl_holds_of(ipu));
            holds.push(Hold::IpuLock(ipu));
            let base = self.soc.device(ipu).expect("ipu").reg.base;
            let mut regs = [0u32; 3];
            for (i, off) in [ipu_reg::FB_BASE, ipu_reg::FB_FORMAT, ipu_reg::ENABLE].into_iter().enumerate() {
                regs[i] = SecureBus(&mut self.soc).read(base + off, Width::Word);
            }
            saved_ipu = Some((ipu, regs));
        }
        for p in self.io.keys.values() {
            holds.push(Hold::Pin(*p));
        }
        for &h in &holds {
            self.holds.acquire(h);
        }
        self.session = Some(Session {
            bv,
            holds,
            saved_ipu,
            shown: None,
        });
        self.sync();

        if self.layout.validate(bv).is_err() {
            self.finish_session(CloakResult::Invalid);
            return CloakResult::Invalid;
        }

        let fb = self.soc.map.secure_fb_base;
        self.soc.ram_write_bytes(fb, &render::render(bv));
        if let Some((ipu, _)) = saved_ipu {
            let base = self.soc.device(ipu).expect("ipu").reg.base;
            let mut bus = SecureBus(&mut self.soc);
            bus.write(base + ipu_reg::FB_BASE, Width::Word, fb);
            bus.write(base + ipu_reg::FB_FORMAT, Width::Word, ipu_reg::FORMAT_RGB24);
            bus.write(base + ipu_reg::ENABLE, Width::Word, 1);
        }
        self.set_led(true);
        let shown = self.displayed_image().and_then(|img| render::decode_image(&img));
        if let Some(s) = &mut self.session {
            s.shown = shown;
        }
        CloakResult::Pending
    }

    fn finish_session(&mut self, result: CloakResult) {
        let Some(s) = self.session.take() else { return };
        if result == CloakResult::Applied {
            for i in 0..self.disabled.len() {
                self.set_class_index(i, s.bv >> i & 1 == 1);
            }
        }
        if let Some((ipu, regs)) = s.saved_ipu {
            let base = self.soc.device(ipu).expect("ipu").reg.base;
            let mut bus = SecureBus(&mut self.soc);
            for (off, v) in [ipu_reg::FB_BASE, ipu_reg::FB_FORMAT, ipu_reg::ENABLE].into_iter().zip(regs) {
                bus.write(base + off, Width::Word, v);
            }
        }
        for h in &s.holds {
            self.holds.release(*h);
        }
        self.set_led(false);
        self.sync();
        self.confirmations.push(Confirmation {
            requested: s.bv,
            shown: s.shown,
            result,
        });
    }

    /// Synchronous CLOAK_SET: feeds user events until the dialog closes.
    /// Returns `Pending` if the source runs dry first.
    pub fn cloak_set(&mut self, bv: u32, user: &mut dyn UserEventSource) -> CloakResult {
        let r = self.cloak_set_begin(bv);
        if r != CloakResult::Pending {
            return r;
        }
        while let Some((k, pressed)) = user.next_event() {
            if let Some(r) = self.key_event(k, pressed).cloak {
                return r;
            }
            if self.session.is_none() {
                break;
            }
        }
        if self.session.is_some() {
            CloakResult::Pending
        } else {
            CloakResult::Denied
        }
    }

    pub fn psci_reset(&mut self, source: ResetSource) -> ResetOutcome {
        match source {
            ResetSource::NsCall if self.disabled.iter().any(|d| *d) || self.session.is_some() => {
                ResetOutcome::Denied
            }
            _ => {
                self.reboot();
                ResetOutcome::Reset
            }
        }
    }

    // ---- interrupts and keys --------------------------------------------

    /// A physical key changes state. Drives the pad, then services the
    /// resulting secure interrupts.
    pub fn key_event(&mut self, key: Key, pressed: bool) -> KeyReport {
        self.ui_clock_ms += keys::UI_TICK_MS;
        let mut report = KeyReport::default();
        let Some(&pin) = self.io.keys.get(&key) else { return report };
        self.soc
            .set_gpio_pad(pin.controller, pin.pin, pressed)
            .expect("keypad controller is a GPIO device");
        let mut decision = None;
        while let Some(irq) = self.soc.gic.take_secure() {
            self.secure_irq_dispatch(irq, &mut report, &mut decision);
        }
        if report.reset {
            if let Some(s) = self.session.take() {
                self.confirmations.push(Confirmation {
                    requested: s.bv,
                    shown: s.shown,
                    result: CloakResult::Denied,
                });
            }
            self.psci_reset(ResetSource::KeySequence);
        } else if let Some(result) = decision {
            self.finish_session(result);
            report.cloak = Some(result);
        }
        report
    }

    fn secure_irq_dispatch(&mut self, irq: u32, report: &mut KeyReport, decision: &mut Option<CloakResult>) {
        let Some(ctrl) = self
            .soc
            .devices()
            .iter()
            .find(|d| d.irq == Some(irq) && d.kind == DeviceKind::Gpio)
            .map(|d| d.node)
        else {
            return;
        };
        let base = self.soc.device(ctrl).expect("device").reg.base;
        let (isr, levels) = {
            let mut bus = SecureBus(&mut self.soc);
            let isr = bus.read(base + gpio_reg::ISR, Width::Word);
            bus.write(base + gpio_reg::ISR, Width::Word, isr);
            (isr, bus.read(base + gpio_reg::DR, Width::Word))
        };
        let hidden = self.holds.pins_of(ctrl);
        for pin in (0..32).filter(|b| isr >> b & 1 == 1) {
            let gp = GpioPin { controller: ctrl, pin };
            let level = levels >> pin & 1 == 1;
            let key = self.io.keys.iter().find(|(_, p)| **p == gp).map(|(k, _)| *k);
            if let Some(k) = key {
                if self.seq.observe(k, level, self.ui_clock_ms) {
                    report.reset = true;
                }
            }
            let disposition = if let (Some(k), true) = (key, self.session.is_some()) {
                if level && decision.is_none() {
                    match k {
                        Key::Home => *decision = Some(CloakResult::Applied),
                        Key::Back => *decision = Some(CloakResult::Denied),
                        _ => {}
                    }
                }
                PinDisposition::Consumed
            } else if hidden & 1 << pin != 0 {
                PinDisposition::Dropped
            } else {
                *self.filters.virtual_isr.entry(ctrl).or_default() |= 1 << pin;
                match self.soc.gic.redeliver_ns(irq) {
                    Ok(Some(line)) => PinDisposition::Redelivered(line),
                    Ok(None) => PinDisposition::Coalesced,
                    Err(_) => PinDisposition::Dropped,
                }
            };
            report.pins.push((gp, disposition));
        }
    }

    // ---- data aborts -----------------------------------------------------

    /// Monitor-mode data abort handler: validates the fault, decodes the
    /// faulting instruction from NS memory, resolves the policy and emulates
    /// the access.
    pub fn handle_data_abort(&mut self, ctx: &mut NsContext, precise: bool) -> AbortOutcome {
        use AbortOutcome::Fatal;
        if !precise {
            return Fatal(FatalReason::Imprecise);
        }
        let pa_instr = self.translate(ctx.abort_lr);
        let pa_data = self.translate(ctx.dfar);
        if !pa_instr.is_multiple_of(4) || !self.soc.map.is_ns_ram(pa_instr, 4) {
            return Fatal(FatalReason::InstructionOutsideNsRam);
        }
        if self.soc.device_at(pa_data).is_none() {
            return Fatal(FatalReason::NotDeviceRegion);
        }
        let word = self.soc.ram_read_word(pa_instr);
        let instr = match decode::decode(word) {
            Ok(i) => i,
            Err(_) => return Fatal(FatalReason::Undecodable(word)),
        };
        match decode::effective_address(&instr, ctx) {
            Ok(va) if va == ctx.dfar => {}
            Ok(_) => return Fatal(FatalReason::AddressMismatch),
            Err(DecodeError::PcBase) => return Fatal(FatalReason::PcBase),
            Err(_) => return Fatal(FatalReason::Undecodable(word)),
        }
        let width = instr.width.bytes();
        if !pa_data.is_multiple_of(width) {
            return Fatal(FatalReason::Misaligned);
        }
        let Some(pi) = self
            .policies
            .iter()
            .position(|p| p.contains(pa_data) && p.contains(pa_data + width - 1))
        else {
            return Fatal(FatalReason::NoPolicy);
        };
        let policy = self.policies[pi].clone();
        let offset = pa_data - policy.base;
        let op = match instr.kind {
            Kind::Load => Op::Read,
            Kind::Store => Op::Write,
        };
        let lane = policy::LaneAccess {
            op,
            reg: offset & !3,
            shift: (offset & 3) * 8,
            lane: instr.width.mask(),
            value: ctx.r[instr.rt as usize] & instr.width.mask(),
        };
        let soc = &mut self.soc;
        let mut hw_read = |reg: u32| SecureBus(soc).read(policy.base + reg, Width::Word);
        let verdict = policy::resolve(&policy, &lane, &mut self.filters, &mut hw_read);
        decode::emulate(&instr, ctx, pa_data, verdict, &mut SecureBus(&mut self.soc));
        self.soc.counters.charge(Category::Emulated, op);
        if verdict.is_deny() {
            self.soc.counters.denied += 1;
        }
        AbortOutcome::Emulated {
            instr,
            pa: pa_data,
            device: policy.device,
            verdict,
        }
    }
}
