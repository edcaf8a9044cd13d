//! Minimal behavioral register models. Offsets are relative to the
//! device's MMIO base; unlisted offsets read as zero and ignore writes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dtree::NodeId;

pub mod gpio_reg {
    pub const DR: u32 = 0x00;
    pub const GDIR: u32 = 0x04;
    pub const ISR: u32 = 0x18;
    pub const IMR: u32 = 0x1C;
}

pub mod i2c_reg {
    pub const ADDR: u32 = 0x00;
    pub const DATA: u32 = 0x04;
    pub const STATUS: u32 = 0x08;
    pub const STATUS_NACK: u32 = 1;
}

pub mod ipu_reg {
    pub const FB_BASE: u32 = 0x00;
    pub const FB_FORMAT: u32 = 0x04;
    pub const ENABLE: u32 = 0x08;
    pub const FORMAT_RGB24: u32 = 1;
}

pub mod wifi_reg {
    pub const CMD: u32 = 0x00;
    pub const STATUS: u32 = 0x04;
    pub const DMA_RING_BASE: u32 = 0x08;
    pub const DMA_DOORBELL: u32 = 0x0C;
    pub const CMD_RX: u32 = 1;
    pub const CMD_TX: u32 = 2;
    pub const STATUS_READY: u32 = 1 << 0;
    pub const STATUS_DONE: u32 = 1 << 1;
    pub const STATUS_ERROR: u32 = 1 << 2;
}

pub mod uart_reg {
    pub const TXDATA: u32 = 0x00;
    pub const STATUS: u32 = 0x04;
    pub const STATUS_TX_READY: u32 = 1;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DmaDirection {
    /// Device writes into memory (receive).
    ToMemory,
    /// Device reads from memory (transmit or scanout).
    FromMemory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaRequest {
    pub direction: DmaDirection,
    pub addr: u32,
    pub len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Effect {
    #[default]
    None,
    Dma(DmaRequest),
    /// The controller's interrupt output went from idle to asserted.
    Interrupt,
}

fn merge(old: u32, value: u32, mask: u32) -> u32 {
    (old & !mask) | (value & mask)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Gpio {
    pub dr: u32,
    pub gdir: u32,
    pub isr: u32,
    pub imr: u32,
    /// External pad levels of input pins.
    pub pads: u32,
}

impl Gpio {
    pub fn read(&self, offset: u32) -> u32 {
        match offset {
            gpio_reg::DR => (self.dr & self.gdir) | (self.pads & !self.gdir),
            gpio_reg::GDIR => self.gdir,
            gpio_reg::ISR => self.isr,
            gpio_reg::IMR => self.imr,
            _ => 0,
        }
    }

    pub fn write(&mut self, offset: u32, value: u32, mask: u32) -> Effect {
        let before = self.asserted();
        match offset {
            gpio_reg::DR => self.dr = merge(self.dr, value, mask),
            gpio_reg::GDIR => self.gdir = merge(self.gdir, value, mask),
            gpio_reg::ISR => self.isr &= !(value & mask),
            gpio_reg::IMR => self.imr = merge(self.imr, value, mask),
            _ => {}
        }
        if !before && self.asserted() {
            Effect::Interrupt
        } else {
            Effect::None
        }
    }

    pub fn asserted(&self) -> bool {
        self.isr & self.imr != 0
    }

    /// Drives an input pad. Any level change on an input pin latches its ISR
    /// bit.
    pub fn set_pad(&mut self, pin: u32, level: bool) -> Effect {
        let bit = 1u32 << pin;
        let before = self.asserted();
        let old = self.pads & bit != 0;
        if level {
            self.pads |= bit;
        } else {
            self.pads &= !bit;
        }
        if old != level && self.gdir & bit == 0 {
            self.isr |= bit;
        }
        if !before && self.asserted() {
            Effect::Interrupt
        } else {
            Effect::None
        }
    }

    pub fn output_level(&self, pin: u32) -> bool {
        let bit = 1u32 << pin;
        self.gdir & bit != 0 && self.dr & bit != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct I2cSlaveModel {
    pub node: NodeId,
    pub last_written: u32,
    pub reads: u64,
    pub writes: u64,
}

impl I2cSlaveModel {
    pub fn transactions(&self) -> u64 {
        self.reads + self.writes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct I2c {
    pub addr: u32,
    pub status: u32,
    pub slaves: BTreeMap<u8, I2cSlaveModel>,
}

impl I2c {
    fn target(&mut self) -> Option<&mut I2cSlaveModel> {
        let a = self.addr as u8;
        self.slaves.get_mut(&a)
    }

    pub fn read(&mut self, offset: u32) -> u32 {
        match offset {
            i2c_reg::ADDR => self.addr,
            i2c_reg::STATUS => self.status,
            i2c_reg::DATA => {
                let addr = self.addr;
                match self.target() {
                    Some(s) => {
                        s.reads += 1;
                        // Register contents of the slave are not modeled: it
                        // echoes its address and the read count.
                        let v = (addr << 8) | (s.reads as u32 & 0xff);
                        self.status &= !i2c_reg::STATUS_NACK;
                        v
                    }
                    None => {
                        self.status |= i2c_reg::STATUS_NACK;
                        0
                    }
                }
            }
            _ => 0,
        }
    }

    pub fn write(&mut self, offset: u32, value: u32, mask: u32) -> Effect {
        match offset {
            i2c_reg::ADDR => {
                self.addr = merge(self.addr, value, mask) & 0x7f;
                let present = self.slaves.contains_key(&(self.addr as u8));
                if present {
                    self.status &= !i2c_reg::STATUS_NACK;
                } else {
                    self.status |= i2c_reg::STATUS_NACK;
                }
            }
            i2c_reg::DATA => match self.target() {
                Some(s) => {
                    s.writes += 1;
                    s.last_written = value & mask;
                    self.status &= !i2c_reg::STATUS_NACK;
                }
                None => self.status |= i2c_reg::STATUS_NACK,
            },
            _ => {}
        }
        Effect::None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ipu {
    pub fb_base: u32,
    pub fb_format: u32,
    pub enable: u32,
}

impl Ipu {
    pub fn read(&self, offset: u32) -> u32 {
        match offset {
            ipu_reg::FB_BASE => self.fb_base,
            ipu_reg::FB_FORMAT => self.fb_format,
            ipu_reg::ENABLE => self.enable,
            _ => 0,
        }
    }

    pub fn write(&mut self, offset: u32, value: u32, mask: u32) -> Effect {
        match offset {
            ipu_reg::FB_BASE => self.fb_base = merge(self.fb_base, value, mask),
            ipu_reg::FB_FORMAT => self.fb_format = merge(self.fb_format, value, mask),
            ipu_reg::ENABLE => self.enable = merge(self.enable, value, mask),
            _ => {}
        }
        Effect::None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wifi {
    pub cmd: u32,
    pub status: u32,
    pub ring_base: u32,
    pub doorbell: u32,
}

impl Default for Wifi {
    fn default() -> Self {
        Wifi {
            cmd: 0,
            status: wifi_reg::STATUS_READY,
            ring_base: 0,
            doorbell: 0,
        }
    }
}

impl Wifi {
    pub fn read(&self, offset: u32) -> u32 {
        match offset {
            wifi_reg::CMD => self.cmd,
            wifi_reg::STATUS => self.status,
            wifi_reg::DMA_RING_BASE => self.ring_base,
            wifi_reg::DMA_DOORBELL => self.doorbell,
            _ => 0,
        }
    }

    pub fn write(&mut self, offset: u32, value: u32, mask: u32) -> Effect {
        match offset {
            wifi_reg::CMD => self.cmd = merge(self.cmd, value, mask),
            // DONE and ERROR are write-1-to-clear; READY is read-only.
            wifi_reg::STATUS => self.status &= !(value & mask & (wifi_reg::STATUS_DONE | wifi_reg::STATUS_ERROR)),
            wifi_reg::DMA_RING_BASE => self.ring_base = merge(self.ring_base, value, mask),
            wifi_reg::DMA_DOORBELL => {
                self.doorbell = value & mask;
                let direction = match self.cmd {
                    wifi_reg::CMD_RX => DmaDirection::ToMemory,
                    wifi_reg::CMD_TX => DmaDirection::FromMemory,
                    _ => return Effect::None,
                };
                self.status &= !(wifi_reg::STATUS_DONE | wifi_reg::STATUS_ERROR);
                return Effect::Dma(DmaRequest {
                    direction,
                    addr: self.ring_base,
                    len: self.doorbell,
                });
            }
            _ => {}
        }
        Effect::None
    }

    pub fn dma_complete(&mut self, ok: bool) {
        self.status |= if ok {
            wifi_reg::STATUS_DONE
        } else {
            wifi_reg::STATUS_ERROR
        };
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Uart {
    pub last_tx: u32,
    pub tx_count: u64,
}

impl Uart {
    pub fn read(&self, offset: u32) -> u32 {
        match offset {
            uart_reg::STATUS => uart_reg::STATUS_TX_READY,
            _ => 0,
        }
    }

    pub fn write(&mut self, offset: u32, value: u32, mask: u32) -> Effect {
        if offset == uart_reg::TXDATA {
            self.last_tx = value & mask;
            self.tx_count += 1;
        }
        Effect::None
    }
}

/// Plain register file for devices without modeled behavior.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Generic {
    pub regs: BTreeMap<u32, u32>,
}

impl Generic {
    pub fn read(&self, offset: u32) -> u32 {
        self.regs.get(&offset).copied().unwrap_or(0)
    }

    pub fn write(&mut self, offset: u32, value: u32, mask: u32) -> Effect {
        let old = self.read(offset);
        self.regs.insert(offset, merge(old, value, mask));
        Effect::None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    Gpio(Gpio),
    I2c(I2c),
    Ipu(Ipu),
    Wifi(Wifi),
    Uart(Uart),
    /// The CSU itself; register reads are served from the firewall state.
    Csu,
    Generic(Generic),
}

impl Model {
    pub fn read(&mut self, offset: u32) -> u32 {
        match self {
            Model::Gpio(m) => m.read(offset),
            Model::I2c(m) => m.read(offset),
            Model::Ipu(m) => m.read(offset),
            Model::Wifi(m) => m.read(offset),
            Model::Uart(m) => m.read(offset),
            Model::Csu => 0,
            Model::Generic(m) => m.read(offset),
        }
    }

    pub fn write(&mut self, offset: u32, value: u32, mask: u32) -> Effect {
        match self {
            Model::Gpio(m) => m.write(offset, value, mask),
            Model::I2c(m) => m.write(offset, value, mask),
            Model::Ipu(m) => m.write(offset, value, mask),
            Model::Wifi(m) => m.write(offset, value, mask),
            Model::Uart(m) => m.write(offset, value, mask),
            Model::Csu => Effect::None,
            Model::Generic(m) => m.write(offset, value, mask),
        }
    }
}
