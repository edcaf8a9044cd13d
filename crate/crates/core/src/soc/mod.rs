//! The hardware substrate: physical address space, the NS-tagged bus with
//! firewall admission, device models, DMA masters and cost accounting.

pub mod cost;
pub mod devices;
pub mod firewall;
pub mod gic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dtree::{DeviceKind, DeviceTree, NodeId, Reg};
pub use cost::{Category, CostModel, Counters};
pub use devices::{DmaDirection, DmaRequest, Effect, Model};
pub use firewall::{CslLevel, FirewallState, Target, TzascPerm, TzascRegion};
pub use gic::{Gic, IrqGroup, IrqLine};

pub const PAGE_SIZE: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum World {
    NonSecure,
    Secure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Read => "read",
            Op::Write => "write",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusAccess {
    pub world: World,
    pub op: Op,
    pub addr: u32,
    pub width: u32,
    pub value: u32,
    pub strongly_ordered: bool,
}

impl BusAccess {
    pub fn secure_read(addr: u32, width: u32) -> Self {
        BusAccess {
            world: World::Secure,
            op: Op::Read,
            addr,
            width,
            value: 0,
            strongly_ordered: true,
        }
    }

    pub fn secure_write(addr: u32, width: u32, value: u32) -> Self {
        BusAccess {
            op: Op::Write,
            value,
            ..Self::secure_read(addr, width)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusOutcome {
    Ok(u32),
    BusError,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SocError {
    #[error("unmapped address {0:#010x}")]
    UnmappedAddress(u32),
    #[error("misaligned address {addr:#010x}")]
    Misaligned { addr: u32 },
    #[error("unsupported access width {0}")]
    BadWidth(u32),
    #[error("CSL field ({register}, {field}) out of range")]
    OutOfRange { register: u32, field: u32 },
    #[error("zero-size region")]
    ZeroSize,
    #[error("unknown interrupt {0}")]
    UnknownIrq(u32),
    #[error("{0} is not a DMA master")]
    NotDmaMaster(String),
    #[error("board configuration: {0}")]
    Config(String),
}

/// Fixed physical layout of RAM and the secure carve-outs inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryMap {
    pub ram_base: u32,
    pub ram_size: u32,
    /// Secure-kernel code and data; never reachable from the NS world.
    pub secure_base: u32,
    pub secure_size: u32,
    /// Framebuffer used for the confirmation screen.
    pub secure_fb_base: u32,
    pub secure_fb_size: u32,
}

impl Default for MemoryMap {
    fn default() -> Self {
        MemoryMap {
            ram_base: 0x1000_0000,
            ram_size: 0x4000_0000,
            secure_base: 0x4F00_0000,
            secure_size: 0x0100_0000,
            secure_fb_base: 0x4EC0_0000,
            secure_fb_size: 0x0040_0000,
        }
    }
}

fn within(addr: u64, len: u64, base: u32, size: u32) -> bool {
    addr >= base as u64 && addr + len <= base as u64 + size as u64
}

impl MemoryMap {
    pub fn ram_end(&self) -> u64 {
        self.ram_base as u64 + self.ram_size as u64
    }

    pub fn is_ram(&self, addr: u32, len: u32) -> bool {
        within(addr as u64, len.max(1) as u64, self.ram_base, self.ram_size)
    }

    pub fn is_secure_ram(&self, addr: u32) -> bool {
        within(addr as u64, 1, self.secure_base, self.secure_size)
    }

    /// NS-usable RAM: everything outside the secure-kernel region and the
    /// confirmation framebuffer.
    pub fn is_ns_ram(&self, addr: u32, len: u32) -> bool {
        let overlaps = |base: u32, size: u32| {
            (addr as u64) < base as u64 + size as u64 && (base as u64) < addr as u64 + len.max(1) as u64
        };
        self.is_ram(addr, len)
            && !overlaps(self.secure_base, self.secure_size)
            && !overlaps(self.secure_fb_base, self.secure_fb_size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct Ram {
    pages: BTreeMap<u32, Box<[u8]>>,
}

impl Ram {
    fn read_byte(&self, addr: u32) -> u8 {
        self.pages
            .get(&(addr / PAGE_SIZE))
            .map_or(0, |p| p[(addr % PAGE_SIZE) as usize])
    }

    fn write_byte(&mut self, addr: u32, v: u8) {
        let page = self
            .pages
            .entry(addr / PAGE_SIZE)
            .or_insert_with(|| vec![0u8; PAGE_SIZE as usize].into_boxed_slice());
        page[(addr % PAGE_SIZE) as usize] = v;
    }

    fn read(&self, addr: u32, width: u32) -> u32 {
        (0..width).fold(0u32, |acc, i| acc | (self.read_byte(addr + i) as u32) << (8 * i))
    }

    fn write(&mut self, addr: u32, width: u32, value: u32) {
        for i in 0..width {
            self.write_byte(addr + i, (value >> (8 * i)) as u8);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Device {
    pub node: NodeId,
    pub name: String,
    pub kind: DeviceKind,
    pub reg: Reg,
    /// CSL fields gating non-secure access.
    pub csl: Vec<(u32, u32)>,
    /// The CSU registers themselves are secure-only regardless of CSL state.
    pub secure_only: bool,
    /// Top-level GIC line driven by this device.
    pub irq: Option<u32>,
    pub dma_master: bool,
    pub model: Model,
    /// Register accesses executed on the model, from either world.
    pub accesses: u64,
}

impl Device {
    pub fn target(&self) -> Target<'_> {
        Target::Device {
            csl: &self.csl,
            secure_only: self.secure_only,
        }
    }
}

/// What resolved an access: RAM or a device index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolved {
    Ram,
    Device(usize),
}

/// One entry of the bus log, enough to replay the admission decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusRecord {
    Access {
        access: BusAccess,
        resolved: Resolved,
        firewall_version: u64,
        admitted: bool,
    },
    Dma {
        master: NodeId,
        direction: DmaDirection,
        addr: u32,
        len: u32,
        firewall_version: u64,
        admitted: bool,
    },
}

/// Side effects surfaced to the layers above after each step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SocEvent {
    Dma {
        master: NodeId,
        direction: DmaDirection,
        addr: u32,
        len: u32,
        admitted: bool,
    },
}

#[derive(Debug, Clone)]
pub struct Soc {
    pub map: MemoryMap,
    pub cost_model: CostModel,
    pub counters: Counters,
    pub gic: Gic,
    firewall: FirewallState,
    firewall_version: u64,
    firewall_history: Option<Vec<FirewallState>>,
    devices: Vec<Device>,
    by_node: BTreeMap<NodeId, usize>,
    ram: Ram,
    log: Option<Vec<BusRecord>>,
    events: Vec<SocEvent>,
    reset_devices: Vec<Device>,
    reset_gic: Gic,
}

impl Soc {
    pub fn new(tree: &DeviceTree, map: MemoryMap, cost_model: CostModel) -> Result<Self, SocError> {
        let csus = tree.csl_controllers();
        if csus.len() > 1 {
            return Err(SocError::Config("more than one CSL controller".into()));
        }
        let csu = csus.first().copied();
        let geometry = csu
            .and_then(|c| tree.node(c).csl_geometry)
            .map_or((0, 0), |g| (g.registers, g.fields_per_register));

        let mut devices = Vec::new();
        let mut gic = Gic::new();
        for n in tree.nodes() {
            let Some(reg) = n.reg else { continue };
            if tree.on_i2c_bus(n.id).is_some() {
                continue;
            }
            if (reg.base as u64) < map.ram_end() && (map.ram_base as u64) < reg.end() {
                return Err(SocError::Config(format!("{} overlaps RAM", tree.path(n.id))));
            }
            let kind = n.kind();
            let model = match kind {
                DeviceKind::Gpio => Model::Gpio(Default::default()),
                DeviceKind::I2cBus => {
                    let mut m = devices::I2c::default();
                    for &c in &n.children {
                        if let Some(a) = tree.node(c).bus_address {
                            m.slaves.insert(
                                a,
                                devices::I2cSlaveModel {
                                    node: c,
                                    ..Default::default()
                                },
                            );
                        }
                    }
                    Model::I2c(m)
                }
                DeviceKind::Ipu => Model::Ipu(Default::default()),
                DeviceKind::Wifi => Model::Wifi(Default::default()),
                DeviceKind::Uart => Model::Uart(Default::default()),
                DeviceKind::Csu => Model::Csu,
                _ => Model::Generic(Default::default()),
            };
            let irq = tree
                .effective_interrupt(n.id)
                .filter(|i| i.parent.is_none())
                .map(|i| i.line);
            devices.push(Device {
                node: n.id,
                name: n.label.clone().unwrap_or_else(|| n.full_name()),
                kind,
                reg,
                csl: tree
                    .effective_protect(n.id)
                    .iter()
                    .filter(|p| Some(p.controller) == csu)
                    .map(|p| (p.register, p.field))
                    .collect(),
                secure_only: kind == DeviceKind::Csu,
                irq,
                dma_master: matches!(kind, DeviceKind::Wifi | DeviceKind::Ipu),
                model,
                accesses: 0,
            });
        }
        for n in tree.nodes() {
            if let Some(ir) = tree.effective_interrupt(n.id) {
                if ir.parent.is_none() {
                    gic.add_line(ir.line, n.ns_interrupts);
                }
            }
            if let Some(alt) = n.ns_interrupts {
                gic.add_line(alt, None);
            }
        }
        let by_node = devices.iter().enumerate().map(|(i, d)| (d.node, i)).collect();

        let mut firewall = FirewallState::new(geometry.0, geometry.1);
        firewall.tzasc_set_region(map.secure_base, map.secure_size, TzascPerm::NsNone)?;

        Ok(Soc {
            map,
            cost_model,
            counters: Counters::default(),
            reset_devices: devices.clone(),
            reset_gic: gic.clone(),
            gic,
            firewall,
            firewall_version: 0,
            firewall_history: None,
            devices,
            by_node,
            ram: Ram::default(),
            log: None,
            events: Vec::new(),
        })
    }

    /// Hardware reset: devices, interrupt controller and firewall return to
    /// their power-on state. Counters, logs and RAM contents survive.
    pub fn reset(&mut self) {
        self.devices = self.reset_devices.clone();
        self.gic = self.reset_gic.clone();
        let (r, f) = self.firewall.geometry();
        let mut fw = FirewallState::new(r, f);
        fw.tzasc_set_region(self.map.secure_base, self.map.secure_size, TzascPerm::NsNone)
            .expect("secure region is page aligned");
        self.set_firewall(fw);
    }

    /// Starts recording every bus decision along with firewall snapshots.
    pub fn enable_log(&mut self) {
        self.log = Some(Vec::new());
        self.firewall_history = Some(vec![self.firewall.clone()]);
        self.firewall_version = 0;
    }

    pub fn log(&self) -> Option<&[BusRecord]> {
        self.log.as_deref()
    }

    /// Drains the log, leaving it enabled.
    pub fn take_log(&mut self) -> Vec<BusRecord> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn firewall_at(&self, version: u64) -> Option<&FirewallState> {
        self.firewall_history.as_ref()?.get(version as usize)
    }

    pub fn take_events(&mut self) -> Vec<SocEvent> {
        std::mem::take(&mut self.events)
    }

    /// Bumped on every firewall change.
    pub fn firewall_version(&self) -> u64 {
        self.firewall_version
    }

    pub fn firewall(&self) -> &FirewallState {
        &self.firewall
    }

    fn set_firewall(&mut self, fw: FirewallState) {
        if fw == self.firewall {
            return;
        }
        self.firewall = fw;
        self.firewall_version += 1;
        if let Some(h) = &mut self.firewall_history {
            h.push(self.firewall.clone());
        }
    }

    pub fn csu_set(&mut self, register: u32, field: u32, level: CslLevel) -> Result<(), SocError> {
        let mut fw = self.firewall.clone();
        fw.csu_set(register, field, level)?;
        self.set_firewall(fw);
        Ok(())
    }

    pub fn tzasc_set_region(&mut self, base: u32, size: u32, perm: TzascPerm) -> Result<(), SocError> {
        let mut fw = self.firewall.clone();
        fw.tzasc_set_region(base, size, perm)?;
        self.set_firewall(fw);
        Ok(())
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn device(&self, node: NodeId) -> Option<&Device> {
        self.by_node.get(&node).map(|&i| &self.devices[i])
    }

    pub fn device_mut(&mut self, node: NodeId) -> Option<&mut Device> {
        self.by_node.get(&node).map(|&i| &mut self.devices[i])
    }

    /// Innermost device whose MMIO range contains `addr`.
    pub fn device_index_at(&self, addr: u32) -> Option<usize> {
        self.devices
            .iter()
            .enumerate()
            .filter(|(_, d)| d.reg.contains(addr))
            .min_by_key(|(_, d)| d.reg.size)
            .map(|(i, _)| i)
    }

    pub fn device_at(&self, addr: u32) -> Option<&Device> {
        self.device_index_at(addr).map(|i| &self.devices[i])
    }

    pub fn resolve(&self, addr: u32, width: u32) -> Result<Resolved, SocError> {
        if self.map.is_ram(addr, width) {
            return Ok(Resolved::Ram);
        }
        match self.device_index_at(addr) {
            Some(i) if self.devices[i].reg.contains(addr + width - 1) => Ok(Resolved::Device(i)),
            _ => Err(SocError::UnmappedAddress(addr)),
        }
    }

    /// Admission as a pure function of the given firewall state.
    pub fn admission(&self, fw: &FirewallState, resolved: Resolved, acc: &BusAccess) -> bool {
        let target = match resolved {
            Resolved::Ram => Target::Ram,
            Resolved::Device(i) => self.devices[i].target(),
        };
        fw.admits(&target, acc.world, acc.op, acc.addr, acc.width)
    }

    pub fn bus_access(&mut self, acc: BusAccess) -> Result<BusOutcome, SocError> {
        if !matches!(acc.width, 1 | 2 | 4) {
            return Err(SocError::BadWidth(acc.width));
        }
        if !acc.addr.is_multiple_of(acc.width) {
            return Err(SocError::Misaligned { addr: acc.addr });
        }
        let resolved = self.resolve(acc.addr, acc.width)?;
        let admitted = self.admission(&self.firewall, resolved, &acc);
        if let Some(log) = &mut self.log {
            log.push(BusRecord::Access {
                access: acc,
                resolved,
                firewall_version: self.firewall_version,
                admitted,
            });
        }
        if !admitted {
            self.counters.aborts += 1;
            return Ok(BusOutcome::BusError);
        }
        if acc.world == World::NonSecure {
            let category = if acc.strongly_ordered {
                Category::StronglyOrdered
            } else {
                Category::Plain
            };
            self.counters.charge(category, acc.op);
        }
        let value = match resolved {
            Resolved::Ram => match acc.op {
                Op::Read => self.ram.read(acc.addr, acc.width),
                Op::Write => {
                    self.ram.write(acc.addr, acc.width, acc.value);
                    0
                }
            },
            Resolved::Device(i) => self.device_access(i, &acc),
        };
        Ok(BusOutcome::Ok(value))
    }

    fn device_access(&mut self, i: usize, acc: &BusAccess) -> u32 {
        let offset = acc.addr - self.devices[i].reg.base;
        let word = offset & !3;
        let shift = (offset & 3) * 8;
        let lane = if acc.width == 4 {
            u32::MAX
        } else {
            (1u32 << (8 * acc.width)) - 1
        };
        self.devices[i].accesses += 1;
        match acc.op {
            Op::Read => {
                let raw = match self.devices[i].model {
                    Model::Csu => self.firewall.csl_register_bits(word / 4),
                    _ => self.devices[i].model.read(word),
                };
                (raw >> shift) & lane
            }
            Op::Write => {
                let effect = self.devices[i].model.write(word, (acc.value & lane) << shift, lane << shift);
                self.apply_effect(i, effect);
                0
            }
        }
    }

    fn apply_effect(&mut self, i: usize, effect: Effect) {
        match effect {
            Effect::None => {}
            Effect::Interrupt => {
                if let Some(line) = self.devices[i].irq {
                    let _ = self.gic.raise(line);
                }
            }
            Effect::Dma(req) => {
                let node = self.devices[i].node;
                let ok = self
                    .dma_transfer(node, req.direction, req.addr, req.len) == Ok(BusOutcome::Ok(0));
                if let Model::Wifi(w) = &mut self.devices[i].model {
                    w.dma_complete(ok);
                }
            }
        }
    }

    /// Admission of a non-secure DMA transfer under `fw`.
    pub fn dma_admits(&self, fw: &FirewallState, direction: DmaDirection, addr: u32, len: u32) -> bool {
        let op = match direction {
            DmaDirection::ToMemory => Op::Write,
            DmaDirection::FromMemory => Op::Read,
        };
        len == 0 || (self.map.is_ram(addr, len) && fw.tzasc_perm_range(addr as u64, len as u64).admits(op))
    }

    /// A bus-mastering transfer, always tagged non-secure. All or nothing;
    /// the payload itself is not modeled.
    pub fn dma_transfer(
        &mut self,
        master: NodeId,
        direction: DmaDirection,
        addr: u32,
        len: u32,
    ) -> Result<BusOutcome, SocError> {
        let dev = self
            .device(master)
            .ok_or_else(|| SocError::NotDmaMaster(format!("node {}", master.0)))?;
        if !dev.dma_master {
            return Err(SocError::NotDmaMaster(dev.name.clone()));
        }
        let admitted = self.dma_admits(&self.firewall, direction, addr, len);
        if let Some(log) = &mut self.log {
            log.push(BusRecord::Dma {
                master,
                direction,
                addr,
                len,
                firewall_version: self.firewall_version,
                admitted,
            });
        }
        self.events.push(SocEvent::Dma {
            master,
            direction,
            addr,
            len,
            admitted,
        });
        if admitted {
            self.counters.dma_transfers += 1;
            self.counters.dma_bytes += len as u64;
            Ok(BusOutcome::Ok(0))
        } else {
            self.counters.dma_errors += 1;
            Ok(BusOutcome::BusError)
        }
    }

    /// Drives a GPIO input pad, as a physical button would.
    pub fn set_gpio_pad(&mut self, controller: NodeId, pin: u32, level: bool) -> Result<(), SocError> {
        let i = *self
            .by_node
            .get(&controller)
            .ok_or_else(|| SocError::Config(format!("node {} is not a device", controller.0)))?;
        let effect = match &mut self.devices[i].model {
            Model::Gpio(g) => g.set_pad(pin, level),
            _ => return Err(SocError::Config(format!("{} is not a GPIO controller", self.devices[i].name))),
        };
        self.apply_effect(i, effect);
        Ok(())
    }

    pub fn gpio(&self, controller: NodeId) -> Option<&devices::Gpio> {
        match &self.device(controller)?.model {
            Model::Gpio(g) => Some(g),
            _ => None,
        }
    }

    /// Secure-side bulk RAM access, bypassing cost accounting.
    pub fn ram_write_bytes(&mut self, addr: u32, bytes: &[u8]) {
        for (i, b) in bytes.iter().enumerate() {
            self.ram.write_byte(addr + i as u32, *b);
        }
    }

    pub fn ram_read_bytes(&self, addr: u32, len: u32) -> Vec<u8> {
        (0..len).map(|i| self.ram.read_byte(addr + i)).collect()
    }

    pub fn ram_read_word(&self, addr: u32) -> u32 {
        self.ram.read(addr, 4)
    }

    pub fn ram_write_word(&mut self, addr: u32, value: u32) {
        self.ram.write(addr, 4, value)
    }

    /// Digest of every populated page of the secure-kernel region.
    pub fn secure_ram_digest(&self) -> [u8; 32] {
        let first = self.map.secure_base / PAGE_SIZE;
        let last = first + self.map.secure_size / PAGE_SIZE;
        let mut h = Sha256::new();
        for (k, p) in self.ram.pages.range(first..last) {
            if p.iter().any(|&b| b != 0) {
                h.update(k.to_le_bytes());
                h.update(p);
            }
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests;
