//! Hardware description for the secure kernel.
//!
//! A textual device-tree subset extended with two properties: `class`, which
//! names the user-facing device class a node belongs to, and `protect`, which
//! names the firewall bits (CSU config-security-level fields) that isolate it.
//! The tree is parsed once at boot, checked against a keyed signature, and is
//! immutable afterwards.

mod closure;
mod parse;
mod sig;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use closure::{GpioPin, I2cSlave, ProtectionPlan};
pub use parse::parse_dts;
pub use sig::{keyed_hash, parse_key_file, parse_signature, verify_signature, TrustedKey};

/// Class name reserved for the secure notification LED. Nodes carrying it are
/// owned by the secure kernel and never offered as a user-controllable class.
pub const LED_CLASS: &str = "led";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DtsError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unresolved reference &{0}")]
    UnresolvedReference(String),
    #[error("duplicate label {0}")]
    DuplicateLabel(String),
    #[error("line {line}: invalid tree: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("node {0} has no protect property on itself, its ancestors or its dependencies")]
    NoProtection(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reg {
    pub base: u32,
    pub size: u32,
}

impl Reg {
    pub fn end(&self) -> u64 {
        self.base as u64 + self.size as u64
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.base && (addr as u64) < self.end()
    }

    pub fn overlaps(&self, other: &Reg) -> bool {
        (self.base as u64) < other.end() && (other.base as u64) < self.end()
    }
}

/// One firewall bit reference: `protect = <&csu register field>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProtectRef {
    pub controller: NodeId,
    pub register: u32,
    pub field: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GpioRef {
    pub controller: NodeId,
    pub pin: u32,
}

/// Register/field layout declared by a CSU node (`csl-geometry`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CslGeometry {
    pub registers: u32,
    pub fields_per_register: u32,
}

/// Resolved interrupt routing of a node. `parent == None` means the top-level
/// interrupt controller (GIC) with no node in the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterruptRef {
    pub parent: Option<NodeId>,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Num(u32),
    Ref(String),
}

/// Value of a property the tree does not interpret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropValue {
    Str(String),
    Cells(Vec<Cell>),
    Ref(String),
}

/// Behavioural family of a node, derived from its `compatible` string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceKind {
    Csu,
    Gic,
    Gpio,
    GpioKeys,
    I2cBus,
    Ipu,
    Wifi,
    Uart,
    Generic,
}

impl DeviceKind {
    pub fn from_compatible(compatible: Option<&str>) -> DeviceKind {
        let Some(c) = compatible else {
            return DeviceKind::Generic;
        };
        let c = c.to_ascii_lowercase();
        if c.contains("gpio-keys") {
            DeviceKind::GpioKeys
        } else if c.contains("csu") {
            DeviceKind::Csu
        } else if c.contains("gic") {
            DeviceKind::Gic
        } else if c.contains("i2c") {
            DeviceKind::I2cBus
        } else if c.contains("gpio") {
            DeviceKind::Gpio
        } else if c.contains("ipu") {
            DeviceKind::Ipu
        } else if c.contains("wifi") || c.contains("wlan") {
            DeviceKind::Wifi
        } else if c.contains("uart") || c.contains("serial") {
            DeviceKind::Uart
        } else {
            DeviceKind::Generic
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub name: String,
    pub label: Option<String>,
    pub unit_address: Option<u32>,
    pub reg: Option<Reg>,
    pub compatible: Option<String>,
    pub class: Option<String>,
    pub protect: Vec<ProtectRef>,
    /// 7-bit slave address on the parent I2C bus.
    pub bus_address: Option<u8>,
    pub interrupt_parent: Option<NodeId>,
    pub interrupts: Option<u32>,
    /// Alternate (previously unused) GIC line the non-secure kernel listens on
    /// when the secure kernel owns the hardware line.
    pub ns_interrupts: Option<u32>,
    pub gpio_deps: Vec<GpioRef>,
    pub csl_geometry: Option<CslGeometry>,
    pub extra: Vec<(String, PropValue)>,
    pub line: usize,
}

impl DeviceNode {
    pub fn kind(&self) -> DeviceKind {
        DeviceKind::from_compatible(self.compatible.as_deref())
    }

    /// Name with unit address, as written in the source (`gpio@209c000`).
    pub fn full_name(&self) -> String {
        match self.unit_address {
            Some(a) => format!("{}@{:x}", self.name, a),
            None => self.name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceTree {
    nodes: Vec<DeviceNode>,
    pub nodes_by_label: BTreeMap<String, NodeId>,
    /// Class name to member nodes in document order. Keys iterate
    /// lexicographically.
    pub class_index: BTreeMap<String, Vec<NodeId>>,
    /// SHA-256 of the source text.
    pub source_digest: [u8; 32],
}

impl DeviceTree {
    pub fn root(&self) -> &DeviceNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &DeviceNode {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DeviceNode> {
        self.nodes.iter()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub fn by_label(&self, label: &str) -> Option<NodeId> {
        self.nodes_by_label.get(label).copied()
    }

    /// Finds a node by label, then by full name (`name@addr`), then by bare name.
    pub fn find(&self, key: &str) -> Option<NodeId> {
        if let Some(id) = self.by_label(key) {
            return Some(id);
        }
        self.nodes
            .iter()
            .find(|n| n.full_name() == key)
            .or_else(|| self.nodes.iter().find(|n| n.name == key))
            .map(|n| n.id)
    }

    /// Node path from the root, e.g. `/aips-bus/i2c@21a4000`.
    pub fn path(&self, id: NodeId) -> String {
        let mut parts: Vec<String> = self
            .ancestors(id)
            .into_iter()
            .rev()
            .skip(1)
            .map(|a| self.node(a).full_name())
            .collect();
        if id.0 != 0 {
            parts.push(self.node(id).full_name());
        }
        format!("/{}", parts.join("/"))
    }

    /// Strict ancestors, nearest first, ending at the root.
    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = self.node(id).parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.node(p).parent;
        }
        out
    }

    /// The node and all its descendants, pre-order.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            for &c in self.node(n).children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    pub fn is_ancestor(&self, ancestor: NodeId, id: NodeId) -> bool {
        self.ancestors(id).contains(&ancestor)
    }

    /// Protect refs of the nearest node on the path to the root (the node
    /// itself included) that carries a `protect` property.
    pub fn effective_protect(&self, id: NodeId) -> &[ProtectRef] {
        let mut cur = Some(id);
        while let Some(n) = cur {
            let node = self.node(n);
            if !node.protect.is_empty() {
                return &node.protect;
            }
            cur = node.parent;
        }
        &[]
    }

    /// The nearest node on the root path (itself included) that carries a
    /// `protect` property.
    pub fn protect_carrier(&self, id: NodeId) -> Option<NodeId> {
        let mut cur = Some(id);
        while let Some(n) = cur {
            if !self.node(n).protect.is_empty() {
                return Some(n);
            }
            cur = self.node(n).parent;
        }
        None
    }

    /// Interrupt routing; `interrupt-parent` is inherited from ancestors.
    pub fn effective_interrupt(&self, id: NodeId) -> Option<InterruptRef> {
        let line = self.node(id).interrupts?;
        let mut cur = Some(id);
        while let Some(n) = cur {
            if let Some(p) = self.node(n).interrupt_parent {
                let parent = match self.node(p).kind() {
                    DeviceKind::Gic => None,
                    _ => Some(p),
                };
                return Some(InterruptRef { parent, line });
            }
            cur = self.node(n).parent;
        }
        Some(InterruptRef { parent: None, line })
    }

    /// Nodes whose parent is an I2C bus controller.
    pub fn on_i2c_bus(&self, id: NodeId) -> Option<NodeId> {
        let p = self.node(id).parent?;
        (self.node(p).kind() == DeviceKind::I2cBus).then_some(p)
    }

    /// The CSU node(s): nodes declaring `csl-geometry`.
    pub fn csl_controllers(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.csl_geometry.is_some())
            .map(|n| n.id)
            .collect()
    }

    /// Nodes with an MMIO `reg`.
    pub fn mmio_nodes(&self) -> impl Iterator<Item = &DeviceNode> {
        self.nodes.iter().filter(|n| n.reg.is_some())
    }

    /// User-controllable class names, lexicographic and deduplicated. The
    /// position of a name in this list is its bit in the cloak bitvector. The
    /// reserved LED class is excluded.
    pub fn classes_of(&self) -> Vec<String> {
        self.class_index
            .keys()
            .filter(|c| c.as_str() != LED_CLASS)
            .cloned()
            .collect()
    }

    pub fn class_members(&self, class: &str) -> &[NodeId] {
        self.class_index.get(class).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Rejects trees offering a class the secure kernel could not enforce.
    pub fn check_enforceable(&self) -> Result<(), DtsError> {
        for members in self.class_index.values() {
            for &id in members {
                self.protect_closure(id)?;
            }
        }
        Ok(())
    }

    /// Canonical text form. Parsing the output yields an equal tree (modulo
    /// line numbers and digest), and serializing again yields identical text.
    pub fn to_dts(&self) -> String {
        let mut out = String::from("/ {\n");
        self.write_body(&mut out, NodeId(0), 1);
        out.push_str("};\n");
        out
    }

    fn label_of(&self, id: NodeId) -> &str {
        self.node(id)
            .label
            .as_deref()
            .expect("referenced nodes always carry a label")
    }

    fn write_body(&self, out: &mut String, id: NodeId, depth: usize) {
        let ind = "\t".repeat(depth);
        let n = self.node(id);
        if let Some(r) = n.reg {
            let _ = writeln!(out, "{ind}reg = <{:#x} {:#x}>;", r.base, r.size);
        }
        if let Some(c) = &n.compatible {
            let _ = writeln!(out, "{ind}compatible = {};", quote(c));
        }
        if let Some(c) = &n.class {
            let _ = writeln!(out, "{ind}class = {};", quote(c));
        }
        for p in &n.protect {
            let _ = writeln!(
                out,
                "{ind}protect = <&{} {} {}>;",
                self.label_of(p.controller),
                p.register,
                p.field
            );
        }
        if let Some(p) = n.interrupt_parent {
            let _ = writeln!(out, "{ind}interrupt-parent = &{};", self.label_of(p));
        }
        if let Some(i) = n.interrupts {
            let _ = writeln!(out, "{ind}interrupts = <{i}>;");
        }
        if let Some(i) = n.ns_interrupts {
            let _ = writeln!(out, "{ind}ns-interrupts = <{i}>;");
        }
        for g in &n.gpio_deps {
            let _ = writeln!(out, "{ind}gpios = <&{} {}>;", self.label_of(g.controller), g.pin);
        }
        if let Some(a) = n.bus_address {
            let _ = writeln!(out, "{ind}i2c-addr = <{a:#x}>;");
        }
        if let Some(g) = n.csl_geometry {
            let _ = writeln!(
                out,
                "{ind}csl-geometry = <{} {}>;",
                g.registers, g.fields_per_register
            );
        }
        for (name, v) in &n.extra {
            let value = match v {
                PropValue::Str(s) => quote(s),
                PropValue::Ref(l) => format!("&{l}"),
                PropValue::Cells(cells) => {
                    let inner: Vec<String> = cells
                        .iter()
                        .map(|c| match c {
                            Cell::Num(v) => format!("{v:#x}"),
                            Cell::Ref(l) => format!("&{l}"),
                        })
                        .collect();
                    format!("<{}>", inner.join(" "))
                }
            };
            let _ = writeln!(out, "{ind}{name} = {value};");
        }
        for &c in &n.children {
            let child = self.node(c);
            let label = child
                .label
                .as_ref()
                .map(|l| format!("{l}: "))
                .unwrap_or_default();
            let _ = writeln!(out, "{ind}{label}{} {{", child.full_name());
            self.write_body(out, c, depth + 1);
            let _ = writeln!(out, "{ind}}};");
        }
    }
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for ch in s.chars() {
        if ch == '"' || ch == '\\' {
            q.push('\\');
        }
        q.push(ch);
    }
    q.push('"');
    q
}
