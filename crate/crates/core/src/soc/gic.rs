use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::SocError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IrqGroup {
    IrqNs,
    FiqSecure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IrqLine {
    pub enabled: bool,
    pub group: IrqGroup,
    pub pending: bool,
    /// NS line used to re-deliver events after secure handling.
    pub alternate: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Gic {
    lines: BTreeMap<u32, IrqLine>,
    secure_queue: VecDeque<u32>,
}

impl Gic {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a line. Lines start enabled in the NS group, as after a
    /// non-secure kernel has probed its drivers.
    pub fn add_line(&mut self, irq: u32, alternate: Option<u32>) {
        let entry = self.lines.entry(irq).or_insert(IrqLine {
            enabled: true,
            group: IrqGroup::IrqNs,
            pending: false,
            alternate: None,
        });
        if alternate.is_some() {
            entry.alternate = alternate;
        }
    }

    pub fn line(&self, irq: u32) -> Result<&IrqLine, SocError> {
        self.lines.get(&irq).ok_or(SocError::UnknownIrq(irq))
    }

    pub fn lines(&self) -> &BTreeMap<u32, IrqLine> {
        &self.lines
    }

    pub fn configure(&mut self, irq: u32, enabled: bool, group: IrqGroup) -> Result<(), SocError> {
        let line = self.lines.get_mut(&irq).ok_or(SocError::UnknownIrq(irq))?;
        line.enabled = enabled;
        line.group = group;
        self.deliver(irq);
        Ok(())
    }

    pub fn raise(&mut self, irq: u32) -> Result<(), SocError> {
        let line = self.lines.get_mut(&irq).ok_or(SocError::UnknownIrq(irq))?;
        line.pending = true;
        self.deliver(irq);
        Ok(())
    }

    fn deliver(&mut self, irq: u32) {
        let line = self.lines[&irq];
        if line.enabled && line.pending && line.group == IrqGroup::FiqSecure && !self.secure_queue.contains(&irq) {
            self.secure_queue.push_back(irq);
        }
    }

    /// Sets the alternate NS line of `irq` pending. Returns the line when it
    /// was not already pending.
    pub fn redeliver_ns(&mut self, irq: u32) -> Result<Option<u32>, SocError> {
        let alt = self
            .line(irq)?
            .alternate
            .ok_or(SocError::UnknownIrq(irq))?;
        let line = self.lines.get_mut(&alt).ok_or(SocError::UnknownIrq(alt))?;
        if line.group != IrqGroup::IrqNs || line.pending {
            return Ok(None);
        }
        line.pending = true;
        Ok(Some(alt))
    }

    /// Next FIQ for the secure handler; acknowledging clears pending.
    pub fn take_secure(&mut self) -> Option<u32> {
        let irq = self.secure_queue.pop_front()?;
        if let Some(l) = self.lines.get_mut(&irq) {
            l.pending = false;
        }
        Some(irq)
    }

    pub fn secure_queue_len(&self) -> usize {
        self.secure_queue.len()
    }

    /// Lines the non-secure world can observe as pending.
    pub fn ns_pending(&self) -> BTreeSet<u32> {
        self.lines
            .iter()
            .filter(|(_, l)| l.enabled && l.pending && l.group == IrqGroup::IrqNs)
            .map(|(&i, _)| i)
            .collect()
    }

    pub fn ns_ack(&mut self, irq: u32) {
        if let Some(l) = self.lines.get_mut(&irq) {
            if l.group == IrqGroup::IrqNs {
                l.pending = false;
            }
        }
    }
}
