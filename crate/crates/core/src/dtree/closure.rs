use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{DeviceTree, DtsError, NodeId, ProtectRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GpioPin {
    pub controller: NodeId,
    pub pin: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct I2cSlave {
    pub bus: NodeId,
    pub address: u8,
}

/// Everything the secure kernel must install to isolate one device.
///
/// `protect` holds the hardware bits. The remaining sets are the fine-grain
/// requirements the bits cannot express alone.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectionPlan {
    pub protect: BTreeSet<ProtectRef>,
    /// MMIO nodes (the device and its descendants) whose accesses are denied.
    pub deny_regions: BTreeSet<NodeId>,
    pub gpio_pins: BTreeSet<GpioPin>,
    pub i2c_slaves: BTreeSet<I2cSlave>,
    /// Top-level interrupt lines owned by the device.
    pub irq_lines: BTreeSet<u32>,
    /// Nodes outside the device that share one of its hardware bits and must
    /// stay reachable through emulation.
    pub shared: BTreeSet<NodeId>,
}

impl ProtectionPlan {
    pub fn merge(&mut self, other: &ProtectionPlan) {
        self.protect.extend(other.protect.iter().copied());
        self.deny_regions.extend(other.deny_regions.iter().copied());
        self.gpio_pins.extend(other.gpio_pins.iter().copied());
        self.i2c_slaves.extend(other.i2c_slaves.iter().copied());
        self.irq_lines.extend(other.irq_lines.iter().copied());
        self.shared.extend(other.shared.iter().copied());
    }
}

impl DeviceTree {
    /// Bits that gate one node: its own `protect` plus that of the nearest
    /// ancestor carrying one.
    fn gating_bits(&self, id: NodeId) -> impl Iterator<Item = ProtectRef> + '_ {
        let n = self.node(id);
        let above = n.parent.map(|p| self.effective_protect(p)).unwrap_or(&[]);
        n.protect.iter().chain(above).copied()
    }

    /// Collects the hardware bits and fine-grain policy needed to isolate
    /// `node`: its own `protect`, the nearest `protect` above it, the
    /// `protect` of any descendant, and the gating bits of each GPIO
    /// controller it depends on for interrupts or pins.
    pub fn protect_closure(&self, node: NodeId) -> Result<ProtectionPlan, DtsError> {
        let mut plan = ProtectionPlan::default();
        let subtree = self.subtree(node);
        plan.protect.extend(self.gating_bits(node));

        for &m in &subtree {
            let n = self.node(m);
            plan.protect.extend(n.protect.iter().copied());
            if n.reg.is_some() {
                plan.deny_regions.insert(m);
            }
            if let (Some(bus), Some(address)) = (self.on_i2c_bus(m), n.bus_address) {
                plan.i2c_slaves.insert(I2cSlave { bus, address });
            }
            let mut pins: Vec<(NodeId, u32)> =
                n.gpio_deps.iter().map(|g| (g.controller, g.pin)).collect();
            if let Some(ir) = self.effective_interrupt(m) {
                match ir.parent {
                    Some(ctrl) => pins.push((ctrl, ir.line)),
                    None => {
                        plan.irq_lines.insert(ir.line);
                    }
                }
            }
            for (controller, pin) in pins {
                if subtree.contains(&controller) {
                    continue;
                }
                plan.gpio_pins.insert(GpioPin { controller, pin });
                plan.protect.extend(self.gating_bits(controller));
            }
        }

        if plan.protect.is_empty() {
            return Err(DtsError::NoProtection(self.path(node)));
        }

        for other in self.nodes() {
            if subtree.contains(&other.id) {
                continue;
            }
            let carrier = self.protect_carrier(other.id);
            let shares = self
                .effective_protect(other.id)
                .iter()
                .any(|p| plan.protect.contains(p));
            // A bare bus node that only carries the bit is not itself a device.
            let is_bare_carrier = carrier == Some(other.id) && other.reg.is_none();
            if shares && !is_bare_carrier {
                plan.shared.insert(other.id);
            }
        }
        Ok(plan)
    }

    /// Union of the plans of every member of `class`.
    pub fn class_plan(&self, class: &str) -> Result<ProtectionPlan, DtsError> {
        let mut plan = ProtectionPlan::default();
        for &m in self.class_members(class) {
            plan.merge(&self.protect_closure(m)?);
        }
        // A class member is never "shared" with its own class.
        for &m in self.class_members(class) {
            for s in self.subtree(m) {
                plan.shared.remove(&s);
            }
        }
        Ok(plan)
    }
}
