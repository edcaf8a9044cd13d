//! Scenario files: one event per line, `#` starts a comment.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::skernel::Key;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{file}:{line}: {msg}")]
pub struct ScenarioParseError {
    pub file: String,
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WifiDirection {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expectation {
    Get(u32),
    Result(String),
    NsStatus(String),
    DeniedCount(u64),
}

/// Driver and mapping parameters a scenario may override.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    WifiChunk(u32),
    WifiRetries(u32),
    WifiLoads(u32),
    WifiStores(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Read { addr: u32, width: u32 },
    Write { addr: u32, width: u32, value: u32 },
    SmcSet(u32),
    SmcGet,
    Key { key: Key, pressed: bool },
    Wifi { direction: WifiDirection, bytes: u64 },
    PsciReset,
    TamperBv(u32),
    Expect(Expectation),
    /// Mapping attribute for an NS physical range; later entries win.
    Map { base: u32, size: u32, strongly_ordered: bool },
    Set(Setting),
    Repeat { count: u64, event: Box<Event> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub line: usize,
    pub event: Event,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub lines: Vec<Line>,
}

fn hex(s: &str) -> Result<u32, String> {
    let t = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    u32::from_str_radix(&t.replace('_', ""), 16).map_err(|_| format!("bad hex value {s:?}"))
}

fn dec(s: &str) -> Result<u64, String> {
    s.replace('_', "").parse().map_err(|_| format!("bad number {s:?}"))
}

fn width(s: &str) -> Result<u32, String> {
    match s {
        "1" | "2" | "4" => Ok(s.parse().expect("digit")),
        _ => Err(format!("width must be 1, 2 or 4, got {s:?}")),
    }
}

fn parse_event(toks: &[&str]) -> Result<Event, String> {
    let arity = |n: usize| {
        if toks.len() == n + 1 {
            Ok(())
        } else {
            Err(format!("{} takes {} argument(s)", toks[0], n))
        }
    };
    let ev = match toks[0] {
        "read" => {
            arity(2)?;
            Event::Read {
                addr: hex(toks[1])?,
                width: width(toks[2])?,
            }
        }
        "write" => {
            arity(3)?;
            Event::Write {
                addr: hex(toks[1])?,
                width: width(toks[2])?,
                value: hex(toks[3])?,
            }
        }
        "smc_set" => {
            arity(1)?;
            Event::SmcSet(hex(toks[1])?)
        }
        "smc_get" => {
            arity(0)?;
            Event::SmcGet
        }
        "key" => {
            arity(2)?;
            let key = Key::from_name(toks[1]).ok_or_else(|| format!("unknown key {:?}", toks[1]))?;
            let pressed = match toks[2] {
                "press" => true,
                "release" => false,
                o => return Err(format!("expected press or release, got {o:?}")),
            };
            Event::Key { key, pressed }
        }
        "wifi" => {
            arity(2)?;
            let direction = match toks[1] {
                "up" => WifiDirection::Up,
                "down" => WifiDirection::Down,
                o => return Err(format!("expected up or down, got {o:?}")),
            };
            Event::Wifi {
                direction,
                bytes: dec(toks[2])?,
            }
        }
        "psci_reset" => {
            arity(0)?;
            Event::PsciReset
        }
        "tamper_bv" => {
            arity(1)?;
            Event::TamperBv(hex(toks[1])?)
        }
        "expect" => {
            arity(2)?;
            let v = toks[2];
            Event::Expect(match toks[1] {
                "get" => Expectation::Get(hex(v)?),
                "result" => Expectation::Result(v.to_ascii_uppercase()),
                "ns_status" => Expectation::NsStatus(v.to_ascii_uppercase()),
                "denied_count" => Expectation::DeniedCount(dec(v)?),
                o => return Err(format!("unknown expectation {o:?}")),
            })
        }
        "map" => {
            arity(3)?;
            let strongly_ordered = match toks[3] {
                "som" => true,
                "normal" => false,
                o => return Err(format!("expected som or normal, got {o:?}")),
            };
            Event::Map {
                base: hex(toks[1])?,
                size: hex(toks[2])?,
                strongly_ordered,
            }
        }
        "set" => {
            arity(2)?;
            let n = u32::try_from(dec(toks[2])?).map_err(|_| "value out of range".to_string())?;
            Event::Set(match toks[1] {
                "wifi_chunk" if n > 0 => Setting::WifiChunk(n),
                "wifi_retries" => Setting::WifiRetries(n),
                "wifi_loads" if n >= 3 => Setting::WifiLoads(n),
                "wifi_stores" if n >= 4 => Setting::WifiStores(n),
                o => return Err(format!("bad setting {o:?} {n}")),
            })
        }
        "repeat" => {
            if toks.len() < 3 {
                return Err("repeat takes a count and an event".into());
            }
            let inner = parse_event(&toks[2..])?;
            if matches!(inner, Event::Repeat { .. } | Event::Expect(_)) {
                return Err("cannot repeat repeat or expect".into());
            }
            Event::Repeat {
                count: dec(toks[1])?,
                event: Box::new(inner),
            }
        }
        o => return Err(format!("unknown event {o:?}")),
    };
    Ok(ev)
}

pub fn parse_scenario(name: &str, text: &str) -> Result<Scenario, ScenarioParseError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let event = parse_event(&toks).map_err(|msg| ScenarioParseError {
            file: name.to_string(),
            line: i + 1,
            msg,
        })?;
        lines.push(Line { line: i + 1, event });
    }
    Ok(Scenario {
        name: name.to_string(),
        lines,
    })
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Read { addr, width } => write!(f, "read {addr:#010x} {width}"),
            Event::Write { addr, width, value } => write!(f, "write {addr:#010x} {width} {value:#x}"),
            Event::SmcSet(bv) => write!(f, "smc_set {bv:#010x}"),
            Event::SmcGet => write!(f, "smc_get"),
            Event::Key { key, pressed } => {
                write!(f, "key {} {}", key.name(), if *pressed { "press" } else { "release" })
            }
            Event::Wifi { direction, bytes } => {
                let d = match direction {
                    WifiDirection::Up => "up",
                    WifiDirection::Down => "down",
                };
                write!(f, "wifi {d} {bytes}")
            }
            Event::PsciReset => write!(f, "psci_reset"),
            Event::TamperBv(m) => write!(f, "tamper_bv {m:#010x}"),
            Event::Expect(e) => match e {
                Expectation::Get(v) => write!(f, "expect get {v:#010x}"),
                Expectation::Result(v) => write!(f, "expect result {v}"),
                Expectation::NsStatus(v) => write!(f, "expect ns_status {v}"),
                Expectation::DeniedCount(v) => write!(f, "expect denied_count {v}"),
            },
            Event::Map {
                base,
                size,
                strongly_ordered,
            } => write!(
                f,
                "map {base:#010x} {size:#x} {}",
                if *strongly_ordered { "som" } else { "normal" }
            ),
            Event::Set(s) => match s {
                Setting::WifiChunk(n) => write!(f, "set wifi_chunk {n}"),
                Setting::WifiRetries(n) => write!(f, "set wifi_retries {n}"),
                Setting::WifiLoads(n) => write!(f, "set wifi_loads {n}"),
                Setting::WifiStores(n) => write!(f, "set wifi_stores {n}"),
            },
            Event::Repeat { count, event } => write!(f, "repeat {count} {event}"),
        }
    }
}

impl Scenario {
    pub fn to_text(&self) -> String {
        self.lines.iter().map(|l| format!("{}\n", l.event)).collect()
    }
}
