//! Text trace and flat metrics for a run. Metrics can be recomputed from
//! the trace alone.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde_json::{json, Value};

use crate::nsim::{AccessResult, NsStatus, Origin, RunReport, TraceEvent};
use crate::skernel::{ClassState, PinDisposition};
use crate::soc::cost::format_ratio;
use crate::soc::{Category, CostModel, Counters, DmaDirection, Op};

/// Flat metrics object; keys serialize in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metrics(pub BTreeMap<String, Value>);

impl Metrics {
    fn build(counters: &Counters, cost: &CostModel, classes: &BTreeMap<String, ClassState>, ns: NsStatus) -> Self {
        let c = counters;
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("plain_load", c.plain_load),
            ("plain_store", c.plain_store),
            ("som_load", c.som_load),
            ("som_store", c.som_store),
            ("emulated_load", c.emulated_load),
            ("emulated_store", c.emulated_store),
            ("aborts", c.aborts),
            ("denied", c.denied),
            ("dma_transfers", c.dma_transfers),
            ("dma_bytes", c.dma_bytes),
            ("dma_errors", c.dma_errors),
        ] {
            m.insert(k.to_string(), json!(v));
        }
        for (k, n, ns) in [
            ("plain_load_ns", c.plain_load, cost.ldr_plain_ns),
            ("plain_store_ns", c.plain_store, cost.str_plain_ns),
            ("som_load_ns", c.som_load, cost.ldr_som_ns),
            ("som_store_ns", c.som_store, cost.str_som_ns),
            ("emulated_load_ns", c.emulated_load, cost.ldr_emu_ns),
            ("emulated_store_ns", c.emulated_store, cost.str_emu_ns),
        ] {
            m.insert(k.to_string(), json!(n.saturating_mul(ns)));
        }
        // Observed emulated cost per instruction over SOM cost per
        // instruction; present once both categories have been exercised.
        for (k, emu_n, emu_ns, som_n, som_ns) in [
            ("load_ratio", c.emulated_load, cost.ldr_emu_ns, c.som_load, cost.ldr_som_ns),
            ("store_ratio", c.emulated_store, cost.str_emu_ns, c.som_store, cost.str_som_ns),
        ] {
            if emu_n > 0 && som_n > 0 && som_ns > 0 {
                let r = Ratio::new(emu_n as u128 * emu_ns as u128, emu_n as u128)
                    / Ratio::new(som_n as u128 * som_ns as u128, som_n as u128);
                m.insert(k.to_string(), json!(format_ratio(&r)));
            }
        }
        m.insert("dma_ns".into(), json!(format_ratio(&counters.dma_time_ns(cost))));
        m.insert(
            "modeled_time_ns".into(),
            json!(format_ratio(&counters.modeled_time_ns(cost))),
        );
        m.insert("ns_status".into(), json!(ns.as_str()));
        for (name, st) in classes {
            m.insert(format!("class.{name}"), json!(state_str(*st)));
        }
        Metrics(m)
    }

    pub fn from_report(r: &RunReport, cost: &CostModel) -> Self {
        Self::build(&r.counters, cost, &r.classes, r.ns_status)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("plain data")
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.0.get(key).and_then(Value::as_u64)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.0.get(key).and_then(Value::as_str)
    }
}

fn state_str(s: ClassState) -> &'static str {
    match s {
        ClassState::Enabled => "enabled",
        ClassState::Disabled => "disabled",
    }
}

fn op_str(op: Op) -> &'static str {
    match op {
        Op::Read => "read",
        Op::Write => "write",
    }
}

fn disposition(d: PinDisposition) -> String {
    match d {
        PinDisposition::Consumed => "consumed".into(),
        PinDisposition::Redelivered(l) => format!("redelivered@{l}"),
        PinDisposition::Coalesced => "coalesced".into(),
        PinDisposition::Dropped => "dropped".into(),
    }
}

/// One line per event. An emulated access carries `steps=1-7`: NS access,
/// firewall abort, monitor entry, address check, decode, policy, emulate
/// and return.
pub fn format_event(ev: &TraceEvent) -> String {
    match ev {
        TraceEvent::Classes(c) => format!("classes {}", c.join(" ")),
        TraceEvent::Access {
            origin,
            op,
            addr,
            width,
            strongly_ordered,
            result,
        } => {
            let origin = match origin {
                Origin::Scenario => "scenario",
                Origin::WifiDriver => "wifi_driver",
            };
            let attr = if *strongly_ordered { "som" } else { "normal" };
            let outcome = match result {
                AccessResult::Direct { category, value } => format!("ok {} value={value:#010x}", category.as_str()),
                AccessResult::Emulated { value, deny } => format!(
                    "abort precise emulated verdict={} value={value:#010x} steps=1-7",
                    if *deny { "deny" } else { "allow" }
                ),
                AccessResult::Fatal(r) => format!("abort precise fatal {}", r.name()),
                AccessResult::Crash => "abort imprecise crash".into(),
                AccessResult::Unmapped => "unmapped crash".into(),
                AccessResult::Skipped => "skipped".into(),
            };
            format!("ns {origin} {} {addr:#010x} w{width} {attr} {outcome}", op_str(*op))
        }
        TraceEvent::Dma {
            master,
            direction,
            addr,
            len,
            admitted,
        } => format!(
            "dma {master} {} {addr:#010x} len={len} {}",
            match direction {
                DmaDirection::ToMemory => "to_memory",
                DmaDirection::FromMemory => "from_memory",
            },
            if *admitted { "ok" } else { "error" }
        ),
        TraceEvent::Smc { call, arg, ret } => format!("smc {call} arg={arg:#010x} ret={ret}"),
        TraceEvent::Key { key, pressed, pins } => {
            let pins: Vec<String> = pins.iter().map(|(p, d)| format!("{p}:{}", disposition(*d))).collect();
            format!(
                "key {} {} pins=[{}]",
                key.name(),
                if *pressed { "press" } else { "release" },
                pins.join(",")
            )
        }
        TraceEvent::Class { name, state } => format!("class {name} {}", state_str(*state)),
        TraceEvent::Ns(s) => format!("ns_status {}", s.as_str()),
        TraceEvent::Reset(src) => format!("reset {src}"),
        TraceEvent::Wifi {
            direction,
            bytes,
            outcome,
            duration_ns,
        } => format!(
            "wifi {} {bytes} {outcome} duration_ns={duration_ns}",
            match direction {
                crate::nsim::WifiDirection::Up => "up",
                crate::nsim::WifiDirection::Down => "down",
            }
        ),
        TraceEvent::Expect { line, text, pass, actual } => format!(
            "expect line={line} {} actual={actual} :: {text}",
            if *pass { "pass" } else { "FAIL" }
        ),
    }
}

pub fn format_trace(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for (i, ev) in events.iter().enumerate() {
        out.push_str(&format!("{i:06} {}\n", format_event(ev)));
    }
    out
}

/// Rebuilds metrics from a trace produced by `format_trace`.
pub fn metrics_from_trace(trace: &str, cost: &CostModel) -> Result<Metrics, String> {
    let mut c = Counters::default();
    let mut classes = BTreeMap::new();
    let mut ns = NsStatus::Running;
    for (n, line) in trace.lines().enumerate() {
        let bad = || format!("trace line {}: {line:?}", n + 1);
        let toks: Vec<&str> = line.split_whitespace().skip(1).collect();
        match toks.first().copied() {
            Some("classes") => {
                for name in &toks[1..] {
                    classes.insert(name.to_string(), ClassState::Enabled);
                }
            }
            Some("ns") => {
                let op = match toks.get(2) {
                    Some(&"read") => Op::Read,
                    Some(&"write") => Op::Write,
                    _ => return Err(bad()),
                };
                let rest = toks.get(6..).unwrap_or(&[]);
                match rest {
                    ["ok", cat, ..] => {
                        let cat = match *cat {
                            "plain" => Category::Plain,
                            "som" => Category::StronglyOrdered,
                            _ => return Err(bad()),
                        };
                        c.charge(cat, op);
                    }
                    ["abort", "precise", "emulated", verdict, ..] => {
                        c.aborts += 1;
                        c.charge(Category::Emulated, op);
                        if *verdict == "verdict=deny" {
                            c.denied += 1;
                        }
                    }
                    ["abort", ..] => c.aborts += 1,
                    ["unmapped", ..] | ["skipped"] => {}
                    _ => return Err(bad()),
                }
            }
            Some("dma") => {
                let len: u64 = toks
                    .get(4)
                    .and_then(|t| t.strip_prefix("len="))
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(bad)?;
                match toks.get(5) {
                    Some(&"ok") => {
                        c.dma_transfers += 1;
                        c.dma_bytes += len;
                    }
                    Some(&"error") => c.dma_errors += 1,
                    _ => return Err(bad()),
                }
            }
            Some("class") => {
                let st = match toks.get(2) {
                    Some(&"enabled") => ClassState::Enabled,
                    Some(&"disabled") => ClassState::Disabled,
                    _ => return Err(bad()),
                };
                classes.insert(toks.get(1).ok_or_else(bad)?.to_string(), st);
            }
            Some("ns_status") => {
                ns = match toks.get(1) {
                    Some(&"RUNNING") => NsStatus::Running,
                    Some(&"CRASHED") => NsStatus::Crashed,
                    _ => return Err(bad()),
                }
            }
            Some(_) => {}
            None => return Err(bad()),
        }
    }
    Ok(Metrics::build(&c, cost, &classes, ns))
}

/// Concise text summary of a report for the diagnostic stream.
pub fn summary_line(r: &RunReport) -> String {
    let failed: Vec<String> = r
        .expects
        .iter()
        .filter(|e| !e.pass)
        .map(|e| format!("line {}: {}: expected {} got {}", e.line, e.text, e.expected, e.actual))
        .collect();
    let violations = r.audit.as_ref().map_or(0, |a| a.violations.len());
    let mut s = format!(
        "{}: {} events, ns {}, get {:#010x}, time {} ns, {} audit violation(s)",
        r.scenario,
        r.events,
        r.ns_status.as_str(),
        r.final_bv,
        r.modeled_time_ns,
        violations
    );
    for f in failed {
        s.push_str("\n  FAIL ");
        s.push_str(&f);
    }
    s
}
