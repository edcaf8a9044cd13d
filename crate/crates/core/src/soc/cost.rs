use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::Op;

/// Per-instruction costs in nanoseconds, measured on an i.MX6 board.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub ldr_plain_ns: u64,
    pub str_plain_ns: u64,
    pub ldr_som_ns: u64,
    pub str_som_ns: u64,
    pub ldr_emu_ns: u64,
    pub str_emu_ns: u64,
    /// DMA throughput in bytes per microsecond.
    pub dma_bytes_per_us: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            ldr_plain_ns: 110,
            str_plain_ns: 290,
            ldr_som_ns: 270,
            str_som_ns: 330,
            ldr_emu_ns: 1140,
            str_emu_ns: 1190,
            dma_bytes_per_us: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Plain,
    StronglyOrdered,
    Emulated,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Plain => "plain",
            Category::StronglyOrdered => "som",
            Category::Emulated => "emulated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub plain_load: u64,
    pub plain_store: u64,
    pub som_load: u64,
    pub som_store: u64,
    pub emulated_load: u64,
    pub emulated_store: u64,
    /// Non-secure accesses refused by the firewall.
    pub aborts: u64,
    /// Emulated accesses whose verdict was deny.
    pub denied: u64,
    pub dma_transfers: u64,
    pub dma_bytes: u64,
    pub dma_errors: u64,
}

impl Counters {
    pub fn charge(&mut self, category: Category, op: Op) {
        let slot = match (category, op) {
            (Category::Plain, Op::Read) => &mut self.plain_load,
            (Category::Plain, Op::Write) => &mut self.plain_store,
            (Category::StronglyOrdered, Op::Read) => &mut self.som_load,
            (Category::StronglyOrdered, Op::Write) => &mut self.som_store,
            (Category::Emulated, Op::Read) => &mut self.emulated_load,
            (Category::Emulated, Op::Write) => &mut self.emulated_store,
        };
        *slot += 1;
    }

    pub fn count(&self, category: Category, op: Op) -> u64 {
        match (category, op) {
            (Category::Plain, Op::Read) => self.plain_load,
            (Category::Plain, Op::Write) => self.plain_store,
            (Category::StronglyOrdered, Op::Read) => self.som_load,
            (Category::StronglyOrdered, Op::Write) => self.som_store,
            (Category::Emulated, Op::Read) => self.emulated_load,
            (Category::Emulated, Op::Write) => self.emulated_store,
        }
    }

    pub fn mmio_time_ns(&self, m: &CostModel) -> u128 {
        let terms = [
            (self.plain_load, m.ldr_plain_ns),
            (self.plain_store, m.str_plain_ns),
            (self.som_load, m.ldr_som_ns),
            (self.som_store, m.str_som_ns),
            (self.emulated_load, m.ldr_emu_ns),
            (self.emulated_store, m.str_emu_ns),
        ];
        terms.iter().map(|&(c, t)| c as u128 * t as u128).sum()
    }

    pub fn dma_time_ns(&self, m: &CostModel) -> Ratio<u128> {
        Ratio::new(self.dma_bytes as u128 * 1000, m.dma_bytes_per_us.max(1) as u128)
    }

    /// Exact modeled time: counter/constant dot product plus linear DMA time.
    pub fn modeled_time_ns(&self, m: &CostModel) -> Ratio<u128> {
        Ratio::from_integer(self.mmio_time_ns(m)) + self.dma_time_ns(m)
    }
}

/// Renders an exact time as `n` or `n/d` in lowest terms.
pub fn format_ratio(r: &Ratio<u128>) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}
