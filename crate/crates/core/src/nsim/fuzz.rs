//! Random scenarios for the isolation auditor.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{Event, Line, Scenario, WifiDirection};
use super::{run_scenario, AuditSummary, RunOptions, NET_BUFFER_OFFSET};
use crate::dtree::DeviceKind;
use crate::skernel::bitvec::CLASS_MASK;
use crate::skernel::{Key, Skernel};
use crate::soc::devices::wifi_reg;

const OFFSETS: [u32; 8] = [0x0, 0x4, 0x8, 0xC, 0x10, 0x14, 0x18, 0x1C];

/// Generates scenario `index` of a seeded batch. Each index gets its own
/// ChaCha stream, so batches can run in any order.
pub fn generate(template: &Skernel, seed: u64, index: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let soc = &template.soc;
    let map = soc.map;
    let devices: Vec<(u32, u32, DeviceKind)> = soc
        .devices()
        .iter()
        .filter(|d| !d.secure_only)
        .map(|d| (d.reg.base, d.reg.size, d.kind))
        .collect();
    let wifi_base = devices.iter().find(|d| d.2 == DeviceKind::Wifi).map(|d| d.0);
    let class_count = template.classes().len() as u32;
    let ns_ram = map.ram_base + 0x0100_0000;
    let mut ev: Vec<Event> = Vec::new();
    let n = rng.gen_range(40..120);
    while ev.len() < n {
        let roll = rng.gen_range(0..100);
        match roll {
            0..=39 => {
                let &(base, size, _) = devices.choose(&mut rng).expect("board has devices");
                let width = *[4, 4, 4, 2, 1].choose(&mut rng).expect("nonempty");
                let off = OFFSETS.choose(&mut rng).expect("nonempty") % size.max(4);
                let addr = base + off + rng.gen_range(0..4 / width) * width;
                if rng.gen_bool(0.5) {
                    ev.push(Event::Read { addr, width });
                } else {
                    let value = if rng.gen_bool(0.5) { rng.gen() } else { rng.gen_range(0..0x100) };
                    ev.push(Event::Write { addr, width, value });
                }
            }
            40..=54 => {
                let classes = rng.gen::<u32>() & ((1 << class_count) - 1) & CLASS_MASK;
                let bv = if rng.gen_bool(0.9) {
                    template.layout.complete(classes)
                } else {
                    rng.gen()
                };
                if rng.gen_bool(0.15) {
                    ev.push(Event::TamperBv(1 << rng.gen_range(0..class_count)));
                }
                ev.push(Event::SmcSet(bv));
                let key = if rng.gen_bool(0.75) { Key::Home } else { Key::Back };
                ev.push(Event::Key { key, pressed: true });
                ev.push(Event::Key { key, pressed: false });
            }
            55..=62 => {
                if let Some(w) = wifi_base {
                    let targets = [
                        map.ram_base + NET_BUFFER_OFFSET,
                        map.secure_base + rng.gen_range(0..map.secure_size / 4) * 4,
                        map.secure_fb_base,
                        map.secure_base - 0x800,
                        rng.gen(),
                    ];
                    let target = *targets.choose(&mut rng).expect("nonempty");
                    let cmd = if rng.gen_bool(0.5) { wifi_reg::CMD_RX } else { wifi_reg::CMD_TX };
                    ev.push(Event::Write { addr: w + wifi_reg::DMA_RING_BASE, width: 4, value: target });
                    ev.push(Event::Write { addr: w + wifi_reg::CMD, width: 4, value: cmd });
                    ev.push(Event::Write {
                        addr: w + wifi_reg::DMA_DOORBELL,
                        width: 4,
                        value: rng.gen_range(1..0x4000),
                    });
                }
            }
            63..=66 => ev.push(Event::Wifi {
                direction: if rng.gen_bool(0.5) { WifiDirection::Up } else { WifiDirection::Down },
                bytes: rng.gen_range(0..300_000),
            }),
            67..=70 => ev.push(Event::PsciReset),
            71..=72 => {
                for (key, pressed) in [(Key::Power, true), (Key::Back, true), (Key::Back, false), (Key::Power, false)] {
                    ev.push(Event::Key { key, pressed });
                }
            }
            73..=79 => {
                let key = *Key::ALL.choose(&mut rng).expect("nonempty");
                ev.push(Event::Key { key, pressed: true });
                ev.push(Event::Key { key, pressed: false });
            }
            80 => {
                let addr = map.secure_base + rng.gen_range(0..map.secure_size / 4) * 4;
                ev.push(Event::Read { addr, width: 4 });
            }
            81 => {
                let &(base, size, _) = devices.choose(&mut rng).expect("board has devices");
                ev.push(Event::Map {
                    base,
                    size,
                    strongly_ordered: false,
                });
            }
            82..=84 => ev.push(Event::SmcGet),
            _ => {
                let addr = ns_ram + rng.gen_range(0..0x1000) * 4;
                if rng.gen_bool(0.5) {
                    ev.push(Event::Read { addr, width: 4 });
                } else {
                    ev.push(Event::Write { addr, width: 4, value: rng.gen() });
                }
            }
        }
    }
    Scenario {
        name: format!("fuzz-{seed}-{index}"),
        lines: ev
            .into_iter()
            .enumerate()
            .map(|(i, event)| Line { line: i + 1, event })
            .collect(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzOutcome {
    pub scenario: String,
    pub events: u64,
    pub audit: AuditSummary,
    pub confirmations: usize,
    pub crashed: bool,
}

/// Generates and runs one fuzz scenario on a copy of `template`.
pub fn run_one(template: &Skernel, seed: u64, index: u64) -> FuzzOutcome {
    let sc = generate(template, seed, index);
    let r = run_scenario(
        template.clone(),
        &sc,
        RunOptions {
            trace: false,
            audit: true,
        },
    );
    FuzzOutcome {
        scenario: sc.name,
        events: r.events,
        audit: r.audit.expect("audit enabled"),
        confirmations: r.confirmations.len(),
        crashed: r.ns_status == super::NsStatus::Crashed,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzSummary {
    pub seed: u64,
    pub scenarios: u64,
    pub events: u64,
    pub records: u64,
    pub probes_of_disabled: u64,
    pub confirmations: u64,
    pub crashed_runs: u64,
    pub violations: Vec<(String, super::Violation)>,
}

impl FuzzSummary {
    pub fn new(seed: u64, outcomes: impl IntoIterator<Item = FuzzOutcome>) -> Self {
        let mut s = FuzzSummary {
            seed,
            ..Default::default()
        };
        for o in outcomes {
            s.scenarios += 1;
            s.events += o.events;
            s.records += o.audit.records;
            s.probes_of_disabled += o.audit.probes_of_disabled;
            s.confirmations += o.confirmations as u64;
            s.crashed_runs += o.crashed as u64;
            s.violations
                .extend(o.audit.violations.into_iter().map(|v| (o.scenario.clone(), v)));
        }
        s
    }
}
