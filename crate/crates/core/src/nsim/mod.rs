//! The untrusted world: NS register context, memory attributes, scripted
//! workloads and the scenario runner.

pub mod audit;
pub mod fuzz;
pub mod scenario;

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::decode::{self, Instr, Kind, NsContext, Offset, Width};
use crate::dtree::DeviceKind;
use crate::skernel::{
    AbortOutcome, ClassState, CloakResult, FatalReason, Key, PinDisposition, Skernel, SmcOutcome,
    CLOAK_APPLIED, CLOAK_BUSY, CLOAK_DENIED, CLOAK_INVALID, NS_LINEAR_VA, PSCI_RESET_OK, SMC_CLOAK_GET,
    SMC_CLOAK_SET, SMC_ERROR, SMC_PSCI_SYSTEM_RESET,
};
use crate::soc::cost::format_ratio;
use crate::soc::devices::wifi_reg;
use crate::soc::{BusAccess, BusOutcome, Category, Counters, DmaDirection, Op, SocEvent, World};
pub use audit::{AuditSummary, Auditor, Violation, ViolationKind};
pub use scenario::{parse_scenario, Event, Expectation, Scenario, ScenarioParseError, Setting, WifiDirection};

/// Where the simulated NS driver keeps its one faulting instruction.
pub const CODE_VA: u32 = NS_LINEAR_VA + 0x8000;
/// Physical offset into RAM of the NS network buffer.
pub const NET_BUFFER_OFFSET: u32 = 0x0200_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsMapping {
    pub base: u32,
    pub size: u32,
    pub strongly_ordered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NsStatus {
    Running,
    Crashed,
}

impl NsStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NsStatus::Running => "RUNNING",
            NsStatus::Crashed => "CRASHED",
        }
    }
}

/// WiFi driver model: per chunk, a fixed number of control loads and stores
/// around one DMA transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WifiDriver {
    pub chunk_bytes: u32,
    pub retries: u32,
    pub loads: u32,
    pub stores: u32,
}

impl Default for WifiDriver {
    fn default() -> Self {
        WifiDriver {
            chunk_bytes: 64 * 1024,
            retries: 3,
            loads: 12,
            stores: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WifiOutcome {
    Completed,
    DeviceUnavailable { attempts: u32 },
    DmaError { chunk: u64 },
    NsCrashed,
}

impl WifiOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            WifiOutcome::Completed => "OK",
            WifiOutcome::DeviceUnavailable { .. } => "DEVICE_UNAVAILABLE",
            WifiOutcome::DmaError { .. } => "DMA_ERROR",
            WifiOutcome::NsCrashed => "CRASHED",
        }
    }
}

/// How one NS access ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessResult {
    /// Admitted by the firewall and performed directly.
    Direct { category: Category, value: u32 },
    /// Precise abort, emulated by the secure kernel.
    Emulated { value: u32, deny: bool },
    /// Precise abort the secure kernel refused to emulate; NS halts.
    Fatal(FatalReason),
    /// Imprecise abort; NS halts.
    Crash,
    /// Nothing decodes the address; NS halts.
    Unmapped,
    /// NS had already halted.
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Scenario,
    WifiDriver,
}

/// One line of the run trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    Classes(Vec<String>),
    Access {
        origin: Origin,
        op: Op,
        addr: u32,
        width: u32,
        strongly_ordered: bool,
        result: AccessResult,
    },
    Dma {
        master: String,
        direction: DmaDirection,
        addr: u32,
        len: u32,
        admitted: bool,
    },
    Smc {
        call: String,
        arg: u32,
        ret: String,
    },
    Key {
        key: Key,
        pressed: bool,
        pins: Vec<(u32, PinDisposition)>,
    },
    Class {
        name: String,
        state: ClassState,
    },
    Ns(NsStatus),
    Reset(String),
    Wifi {
        direction: WifiDirection,
        bytes: u64,
        outcome: String,
        duration_ns: String,
    },
    Expect {
        line: usize,
        text: String,
        pass: bool,
        actual: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectResult {
    pub line: usize,
    pub text: String,
    pub expected: String,
    pub actual: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WifiResult {
    pub line: usize,
    pub direction: WifiDirection,
    pub bytes: u64,
    pub outcome: WifiOutcome,
    /// Exact modeled duration, `n` or `n/d` nanoseconds.
    pub duration_ns: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub trace: bool,
    pub audit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub events: u64,
    pub counters: Counters,
    pub modeled_time_ns: String,
    pub final_bv: u32,
    pub classes: BTreeMap<String, ClassState>,
    pub ns_status: NsStatus,
    pub last_result: Option<String>,
    pub expects: Vec<ExpectResult>,
    pub expect_failed: bool,
    pub wifi: Vec<WifiResult>,
    pub confirmations: Vec<crate::skernel::Confirmation>,
    pub audit: Option<AuditSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<TraceEvent>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        !self.expect_failed
    }

    /// Canonical serialized form; equal runs give equal bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

fn cloak_name(code: u32) -> String {
    match code {
        CLOAK_APPLIED => "APPLIED".into(),
        CLOAK_DENIED => "DENIED".into(),
        CLOAK_INVALID => "INVALID".into(),
        CLOAK_BUSY => "BUSY".into(),
        SMC_ERROR => "ERROR".into(),
        v => format!("{v:#x}"),
    }
}

fn result_name(r: CloakResult) -> String {
    match r.code() {
        Some(c) => cloak_name(c),
        None => "PENDING".into(),
    }
}

/// The NS world plus the secure kernel it runs on.
pub struct Machine {
    pub sk: Skernel,
    pub ns: NsStatus,
    mappings: Vec<NsMapping>,
    wifi: WifiDriver,
    tamper: u32,
    last_result: Option<String>,
    ctx: NsContext,
    code_word: Option<u32>,
    trace: Option<Vec<TraceEvent>>,
    auditor: Option<Auditor>,
    step: u64,
    secure_digest: [u8; 32],
    reported_mask: u32,
    wifi_results: Vec<WifiResult>,
}

impl Machine {
    pub fn new(mut sk: Skernel, opts: RunOptions) -> Self {
        let auditor = opts
            .audit
            .then(|| Auditor::new(&sk.tree, sk.classes(), sk.soc.map));
        if opts.audit {
            sk.soc.enable_log();
        }
        let trace = opts.trace.then(|| vec![TraceEvent::Classes(sk.classes().to_vec())]);
        let secure_digest = sk.soc.secure_ram_digest();
        let reported_mask = sk.disabled_mask();
        Machine {
            sk,
            ns: NsStatus::Running,
            mappings: Vec::new(),
            wifi: WifiDriver::default(),
            tamper: 0,
            last_result: None,
            ctx: NsContext::default(),
            code_word: None,
            trace,
            auditor,
            step: 0,
            secure_digest,
            reported_mask,
            wifi_results: Vec::new(),
        }
    }

    fn emit(&mut self, ev: impl FnOnce(&Skernel) -> TraceEvent) {
        if let Some(t) = &mut self.trace {
            t.push(ev(&self.sk));
        }
    }

    /// Memory attribute the NS world uses for `addr`. Device MMIO is mapped
    /// strongly ordered, RAM as normal memory, unless a mapping overrides it.
    pub fn strongly_ordered(&self, addr: u32) -> bool {
        self.mappings
            .iter()
            .rev()
            .find(|m| addr >= m.base && (addr as u64) < m.base as u64 + m.size as u64)
            .map_or(!self.sk.soc.map.is_ram(addr, 1), |m| m.strongly_ordered)
    }

    fn va_of(&self, pa: u32) -> u32 {
        let map = &self.sk.soc.map;
        if map.is_ram(pa, 1) {
            pa - map.ram_base + NS_LINEAR_VA
        } else {
            pa
        }
    }

    fn drain_dma_events(&mut self) {
        for ev in self.sk.soc.take_events() {
            if self.trace.is_none() {
                continue;
            }
            let SocEvent::Dma {
                master,
                direction,
                addr,
                len,
                admitted,
            } = ev;
            self.emit(|sk| TraceEvent::Dma {
                master: sk.soc.device(master).map_or_else(|| format!("node{}", master.0), |d| d.name.clone()),
                direction,
                addr,
                len,
                admitted,
            });
        }
    }

    /// One NS load or store at physical address `addr`, executed as a
    /// single LDR/STR through r1 with r0 as data.
    pub fn ns_step(&mut self, origin: Origin, op: Op, addr: u32, width: u32, value: u32) -> AccessResult {
        self.step += 1;
        if self.ns == NsStatus::Crashed {
            return AccessResult::Skipped;
        }
        let so = self.strongly_ordered(addr);
        let w = Width::from_bytes(width).expect("parser checks widths");
        let instr = Instr {
            kind: match op {
                Op::Read => Kind::Load,
                Op::Write => Kind::Store,
            },
            width: w,
            rt: 0,
            rn: 1,
            offset: Offset::Imm(0),
            add: true,
        };
        let word = decode::encode(&instr);
        if self.code_word != Some(word) {
            let pa = self.sk.translate(CODE_VA);
            self.sk.soc.ram_write_word(pa, word);
            self.code_word = Some(word);
        }
        let va = self.va_of(addr);
        self.ctx.r[0] = value;
        self.ctx.r[1] = va;
        self.ctx.pc = CODE_VA;
        let pre = self.auditor.as_ref().map(|a| a.pre_step(&self.sk));
        let fingerprint = (
            self.sk.soc.firewall_version(),
            self.sk.disabled_mask(),
            self.sk.policies().len(),
        );
        let acc = BusAccess {
            world: World::NonSecure,
            op,
            addr,
            width,
            value,
            strongly_ordered: so,
        };
        let result = match self.sk.soc.bus_access(acc) {
            Err(_) => AccessResult::Unmapped,
            Ok(BusOutcome::Ok(v)) => AccessResult::Direct {
                category: if so { Category::StronglyOrdered } else { Category::Plain },
                value: v,
            },
            Ok(BusOutcome::BusError) if !so => AccessResult::Crash,
            Ok(BusOutcome::BusError) => {
                self.ctx.dfar = va;
                self.ctx.abort_lr = CODE_VA;
                match self.sk.handle_data_abort(&mut self.ctx, true) {
                    AbortOutcome::Emulated { verdict, .. } => AccessResult::Emulated {
                        value: if op == Op::Read { self.ctx.r[0] } else { 0 },
                        deny: verdict.is_deny(),
                    },
                    AbortOutcome::Fatal(r) => AccessResult::Fatal(r),
                }
            }
        };
        let crashed = matches!(result, AccessResult::Crash | AccessResult::Fatal(_) | AccessResult::Unmapped);
        if crashed {
            self.ns = NsStatus::Crashed;
        }
        self.emit(|_| TraceEvent::Access {
            origin,
            op,
            addr,
            width,
            strongly_ordered: so,
            result,
        });
        if crashed {
            self.emit(|_| TraceEvent::Ns(NsStatus::Crashed));
        }
        self.drain_dma_events();
        if let Some(a) = &mut self.auditor {
            let records = self.sk.soc.take_log();
            let load = match (op, result) {
                (Op::Read, AccessResult::Direct { value, .. } | AccessResult::Emulated { value, .. }) => {
                    Some((addr, width, value))
                }
                _ => None,
            };
            a.check_ns_step(&self.sk, self.step, &records, load, pre.as_ref().expect("auditing"));
            if crashed {
                let after = (
                    self.sk.soc.firewall_version(),
                    self.sk.disabled_mask(),
                    self.sk.policies().len(),
                );
                if after != fingerprint || self.sk.soc.secure_ram_digest() != self.secure_digest {
                    a.crash_side_effect(self.step, format!("state changed across crash at {addr:#010x}"));
                }
            }
        }
        result
    }

    fn after_secure_step(&mut self) {
        self.drain_dma_events();
        if let Some(a) = &mut self.auditor {
            let records = self.sk.soc.take_log();
            a.check_other_step(&self.sk, self.step, &records);
            a.observe(&self.sk, self.step);
        }
        let mask = self.sk.disabled_mask();
        if mask != self.reported_mask && self.trace.is_some() {
            let names = self.sk.classes().to_vec();
            for (i, n) in names.iter().enumerate() {
                if (mask ^ self.reported_mask) >> i & 1 == 1 {
                    let state = if mask >> i & 1 == 1 {
                        ClassState::Disabled
                    } else {
                        ClassState::Enabled
                    };
                    self.emit(|_| TraceEvent::Class { name: n.clone(), state });
                }
            }
        }
        self.reported_mask = mask;
    }

    fn rebooted(&mut self, source: &str) {
        self.ns = NsStatus::Running;
        self.ctx = NsContext::default();
        self.code_word = None;
        self.emit(|_| TraceEvent::Reset(source.to_string()));
        self.emit(|_| TraceEvent::Ns(NsStatus::Running));
    }

    fn smc(&mut self, call: &str, fid: u32, arg: u32) -> Option<SmcOutcome> {
        self.step += 1;
        if self.ns == NsStatus::Crashed {
            return None;
        }
        let boots = self.sk.boots();
        let out = self.sk.smc(fid, arg);
        let ret = match out {
            SmcOutcome::Pending => "PENDING".to_string(),
            SmcOutcome::Return(v) if fid == SMC_CLOAK_SET => cloak_name(v),
            SmcOutcome::Return(v) if fid == SMC_PSCI_SYSTEM_RESET => {
                if v == PSCI_RESET_OK { "RESET".into() } else { "DENIED".into() }
            }
            SmcOutcome::Return(v) => format!("{v:#010x}"),
        };
        self.emit(|_| TraceEvent::Smc {
            call: call.to_string(),
            arg,
            ret,
        });
        if self.sk.boots() != boots {
            self.rebooted("ns_call");
        }
        self.after_secure_step();
        Some(out)
    }

    pub fn key(&mut self, key: Key, pressed: bool) {
        self.step += 1;
        let boots = self.sk.boots();
        let r = self.sk.key_event(key, pressed);
        self.emit(|_| TraceEvent::Key {
            key,
            pressed,
            pins: r.pins.iter().map(|(p, d)| (p.pin, *d)).collect(),
        });
        if let Some(c) = r.cloak {
            self.last_result = Some(result_name(c));
        }
        if self.sk.boots() != boots {
            self.rebooted("key_sequence");
        }
        self.after_secure_step();
    }

    pub fn cloak_set(&mut self, bv: u32) {
        let sent = bv ^ std::mem::take(&mut self.tamper);
        if let Some(out) = self.smc("cloak_set", SMC_CLOAK_SET, sent) {
            self.last_result = Some(match out {
                SmcOutcome::Pending => "PENDING".into(),
                SmcOutcome::Return(v) => cloak_name(v),
            });
        }
    }

    pub fn cloak_get(&mut self) -> Option<u32> {
        match self.smc("cloak_get", SMC_CLOAK_GET, 0)? {
            SmcOutcome::Return(v) => Some(v),
            SmcOutcome::Pending => None,
        }
    }

    pub fn psci_reset(&mut self) {
        if let Some(SmcOutcome::Return(v)) = self.smc("psci_system_reset", SMC_PSCI_SYSTEM_RESET, 0) {
            self.last_result = Some(if v == PSCI_RESET_OK { "RESET".into() } else { "DENIED".into() });
        }
    }

    fn ns_read(&mut self, addr: u32) -> Result<u32, ()> {
        match self.ns_step(Origin::WifiDriver, Op::Read, addr, 4, 0) {
            AccessResult::Direct { value, .. } | AccessResult::Emulated { value, .. } => Ok(value),
            _ => Err(()),
        }
    }

    fn ns_write(&mut self, addr: u32, value: u32) -> Result<(), ()> {
        match self.ns_step(Origin::WifiDriver, Op::Write, addr, 4, value) {
            AccessResult::Direct { .. } | AccessResult::Emulated { .. } => Ok(()),
            _ => Err(()),
        }
    }

    /// Modeled WiFi transfer through the NS driver. Returns the outcome and
    /// the exact modeled duration in nanoseconds.
    pub fn wifi_transfer(&mut self, direction: WifiDirection, bytes: u64) -> (WifiOutcome, Ratio<u128>) {
        let cost = self.sk.soc.cost_model;
        let start = self.sk.soc.counters.modeled_time_ns(&cost);
        let outcome = self.wifi_run(direction, bytes);
        let dur = self.sk.soc.counters.modeled_time_ns(&cost) - start;
        (outcome, dur)
    }

    fn wifi_run(&mut self, direction: WifiDirection, bytes: u64) -> WifiOutcome {
        let Some(base) = self
            .sk
            .soc
            .devices()
            .iter()
            .find(|d| d.kind == DeviceKind::Wifi)
            .map(|d| d.reg.base)
        else {
            return WifiOutcome::DeviceUnavailable { attempts: 0 };
        };
        let drv = self.wifi;
        let buf = self.sk.soc.map.ram_base + NET_BUFFER_OFFSET;
        let cmd = match direction {
            WifiDirection::Down => wifi_reg::CMD_RX,
            WifiDirection::Up => wifi_reg::CMD_TX,
        };
        let clear = wifi_reg::STATUS_DONE | wifi_reg::STATUS_ERROR;
        let reg = |r: u32| base + r;
        let mut left = bytes;
        let mut chunk = 0u64;
        while left > 0 {
            let len = left.min(drv.chunk_bytes as u64) as u32;
            let mut attempts = 0;
            loop {
                attempts += 1;
                let Ok(st) = self.ns_read(reg(wifi_reg::STATUS)) else { return WifiOutcome::NsCrashed };
                if st & wifi_reg::STATUS_READY != 0 {
                    break;
                }
                if attempts > drv.retries {
                    return WifiOutcome::DeviceUnavailable { attempts };
                }
            }
            let run = (|| -> Result<u32, ()> {
                self.ns_write(reg(wifi_reg::STATUS), clear)?;
                self.ns_write(reg(wifi_reg::CMD), cmd)?;
                self.ns_write(reg(wifi_reg::DMA_RING_BASE), buf)?;
                self.ns_read(reg(wifi_reg::CMD))?;
                self.ns_read(reg(wifi_reg::DMA_RING_BASE))?;
                self.ns_write(reg(wifi_reg::DMA_DOORBELL), len)?;
                let mut st = 0;
                for _ in 3..drv.loads {
                    st = self.ns_read(reg(wifi_reg::STATUS))?;
                }
                let tail = [
                    (wifi_reg::STATUS, clear),
                    (wifi_reg::CMD, 0),
                    (wifi_reg::DMA_RING_BASE, 0),
                    (wifi_reg::DMA_DOORBELL, 0),
                ];
                for i in 0..(drv.stores - 4) as usize {
                    let (r, v) = tail[i % tail.len()];
                    self.ns_write(reg(r), v)?;
                }
                Ok(st)
            })();
            match run {
                Err(()) => return WifiOutcome::NsCrashed,
                Ok(st) if st & wifi_reg::STATUS_DONE == 0 => return WifiOutcome::DmaError { chunk },
                Ok(_) => {}
            }
            left -= len as u64;
            chunk += 1;
        }
        WifiOutcome::Completed
    }

    fn current_get(&self) -> u32 {
        if self.sk.session_pending() {
            SMC_ERROR
        } else {
            self.sk.cloak_get()
        }
    }

    fn evaluate(&self, e: &Expectation) -> (String, String) {
        match e {
            Expectation::Get(v) => (format!("{v:#010x}"), format!("{:#010x}", self.current_get())),
            Expectation::Result(v) => (v.clone(), self.last_result.clone().unwrap_or_else(|| "NONE".into())),
            Expectation::NsStatus(v) => (v.clone(), self.ns.as_str().into()),
            Expectation::DeniedCount(v) => (v.to_string(), self.sk.soc.counters.denied.to_string()),
        }
    }

    fn run_event(&mut self, line: usize, ev: &Event, expects: &mut Vec<ExpectResult>) -> bool {
        match ev {
            Event::Read { addr, width } => {
                self.ns_step(Origin::Scenario, Op::Read, *addr, *width, 0);
            }
            Event::Write { addr, width, value } => {
                self.ns_step(Origin::Scenario, Op::Write, *addr, *width, *value);
            }
            Event::SmcSet(bv) => self.cloak_set(*bv),
            Event::SmcGet => {
                self.cloak_get();
            }
            Event::Key { key, pressed } => self.key(*key, *pressed),
            Event::Wifi { direction, bytes } => {
                if self.ns == NsStatus::Crashed {
                    return true;
                }
                let (outcome, dur) = self.wifi_transfer(*direction, *bytes);
                self.last_result = Some(outcome.as_str().into());
                let duration_ns = format_ratio(&dur);
                self.emit(|_| TraceEvent::Wifi {
                    direction: *direction,
                    bytes: *bytes,
                    outcome: outcome.as_str().into(),
                    duration_ns: duration_ns.clone(),
                });
                self.wifi_results.push(WifiResult {
                    line,
                    direction: *direction,
                    bytes: *bytes,
                    outcome,
                    duration_ns,
                });
            }
            Event::PsciReset => self.psci_reset(),
            Event::TamperBv(m) => self.tamper ^= m,
            Event::Expect(e) => {
                let (expected, actual) = self.evaluate(e);
                let pass = expected == actual;
                let text = ev.to_string();
                self.emit(|_| TraceEvent::Expect {
                    line,
                    text: text.clone(),
                    pass,
                    actual: actual.clone(),
                });
                expects.push(ExpectResult {
                    line,
                    text,
                    expected,
                    actual,
                    pass,
                });
                return pass;
            }
            Event::Map {
                base,
                size,
                strongly_ordered,
            } => self.mappings.push(NsMapping {
                base: *base,
                size: *size,
                strongly_ordered: *strongly_ordered,
            }),
            Event::Set(s) => match *s {
                Setting::WifiChunk(n) => self.wifi.chunk_bytes = n,
                Setting::WifiRetries(n) => self.wifi.retries = n,
                Setting::WifiLoads(n) => self.wifi.loads = n,
                Setting::WifiStores(n) => self.wifi.stores = n,
            },
            Event::Repeat { count, event } => {
                for _ in 0..*count {
                    self.run_event(line, event, expects);
                }
            }
        }
        true
    }

    pub fn finish(self, scenario: &str, events: u64, expects: Vec<ExpectResult>, failed: bool) -> RunReport {
        let sk = &self.sk;
        let classes = sk
            .classes()
            .iter()
            .map(|c| (c.clone(), sk.class_state(c).expect("listed")))
            .collect();
        RunReport {
            scenario: scenario.to_string(),
            events,
            counters: sk.soc.counters,
            modeled_time_ns: format_ratio(&sk.soc.counters.modeled_time_ns(&sk.soc.cost_model)),
            final_bv: self.current_get(),
            classes,
            ns_status: self.ns,
            last_result: self.last_result,
            expects,
            expect_failed: failed,
            wifi: self.wifi_results,
            confirmations: sk.confirmations().to_vec(),
            audit: self.auditor.map(|a| a.summary),
            trace: self.trace.unwrap_or_default(),
        }
    }

    pub fn auditor(&self) -> Option<&Auditor> {
        self.auditor.as_ref()
    }
}

fn count_events(ev: &Event) -> u64 {
    match ev {
        Event::Repeat { count, event } => count * count_events(event),
        _ => 1,
    }
}

/// Runs a scenario on a freshly booted secure kernel. Stops at the first
/// failed expectation.
pub fn run_scenario(sk: Skernel, sc: &Scenario, opts: RunOptions) -> RunReport {
    let mut m = Machine::new(sk, opts);
    let mut expects = Vec::new();
    let mut events = 0;
    let mut failed = false;
    for l in &sc.lines {
        events += count_events(&l.event);
        if !m.run_event(l.line, &l.event, &mut expects) {
            failed = true;
            break;
        }
    }
    m.finish(&sc.name, events, expects, failed)
}
