//! Command-line runner: verify and load a device tree, boot the secure
//! kernel, run scenario files or fuzz batches, write trace and metrics.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use cloaksim::dtree::{keyed_hash, parse_dts, parse_key_file, parse_signature, verify_signature};
use cloaksim::nsim::fuzz::{self, FuzzSummary};
use cloaksim::nsim::{parse_scenario, run_scenario, RunOptions, RunReport, Scenario};
use cloaksim::report::{format_trace, summary_line, Metrics};
use cloaksim::skernel::Skernel;
use cloaksim::soc::{CostModel, MemoryMap};
use rayon::prelude::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_EXPECT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cloaksim", version, about = "Simulate a TrustZone peripheral-cloaking secure kernel")]
pub struct Args {
    /// Device tree source.
    #[arg(long)]
    pub dtree: PathBuf,
    /// Signature sidecar for the device tree (64 hex characters).
    #[arg(long)]
    pub sig: Option<PathBuf>,
    /// Trusted keys, one hex key per line.
    #[arg(long)]
    pub keys: Option<PathBuf>,
    /// Scenario file; may be given more than once.
    #[arg(long)]
    pub scenario: Vec<PathBuf>,
    /// Write the event trace here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write flat JSON metrics here.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Write full run reports as JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Seed for generated scenarios.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Generate and audit this many random scenarios.
    #[arg(long)]
    pub fuzz: Option<u64>,
    /// Sign the device tree with the first key in --keys and write the
    /// signature to this file, then exit.
    #[arg(long)]
    pub write_sig: Option<PathBuf>,
    /// DMA bandwidth in bytes per microsecond.
    #[arg(long, default_value_t = 5)]
    pub dma_bandwidth: u64,
}

struct Failure(i32, String);

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn rejected(msg: impl std::fmt::Display) -> Failure {
    Failure(EXIT_USAGE, format!("device tree rejected: {msg}"))
}

fn load(args: &Args, diag: &mut dyn Write) -> Result<Skernel, Failure> {
    let text = read(&args.dtree)?;
    let keys = match &args.keys {
        Some(p) => Some(parse_key_file(&read(p)?).map_err(|e| Failure(EXIT_USAGE, format!("{}: {e}", p.display())))?),
        None => None,
    };
    if let Some(out) = &args.write_sig {
        let key = keys
            .as_ref()
            .and_then(|k| k.first())
            .ok_or_else(|| Failure(EXIT_USAGE, "--write-sig needs --keys with at least one key".into()))?;
        write(out, &format!("{}\n", hex_encode(&keyed_hash(key, text.as_bytes()))))?;
    }
    match (&args.sig, &keys) {
        (Some(sig), Some(keys)) => {
            let sig = parse_signature(&read(sig)?).map_err(rejected)?;
            if !verify_signature(text.as_bytes(), &sig, keys) {
                return Err(rejected("signature does not verify against any trusted key"));
            }
        }
        (None, None) => {
            let _ = writeln!(diag, "warning: {}: device tree is not signature-checked", args.dtree.display());
        }
        _ if args.write_sig.is_some() => {}
        _ => return Err(Failure(EXIT_USAGE, "--sig and --keys must be given together".into())),
    }
    let tree = parse_dts(&text).map_err(|e| rejected(format!("{}: {e}", args.dtree.display())))?;
    let cost = CostModel {
        dma_bytes_per_us: args.dma_bandwidth.max(1),
        ..CostModel::default()
    };
    Skernel::boot(tree, MemoryMap::default(), cost).map_err(rejected)
}

fn hex_encode(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure(EXIT_USAGE, format!("thread pool: {e}")))
}

fn run_fuzz(args: &Args, sk: &Skernel, count: u64, out: &mut dyn Write) -> Result<i32, Failure> {
    let outcomes: Vec<_> = pool(args.jobs)?.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| fuzz::run_one(sk, args.seed, i))
            .collect()
    });
    let summary = FuzzSummary::new(args.seed, outcomes);
    let json = serde_json::to_string_pretty(&summary).expect("plain data");
    if let Some(p) = &args.metrics {
        write(p, &json)?;
    }
    let _ = writeln!(
        out,
        "fuzz: {} scenarios, {} events, {} bus records, {} probes of disabled devices, {} violation(s)",
        summary.scenarios,
        summary.events,
        summary.records,
        summary.probes_of_disabled,
        summary.violations.len()
    );
    for (sc, v) in summary.violations.iter().take(20) {
        let _ = writeln!(out, "  {sc} step {}: {:?}: {}", v.step, v.kind, v.detail);
    }
    Ok(if summary.violations.is_empty() { EXIT_OK } else { EXIT_EXPECT })
}

fn run_scenarios(args: &Args, sk: &Skernel, out: &mut dyn Write, diag: &mut dyn Write) -> Result<i32, Failure> {
    let mut scenarios: Vec<Scenario> = Vec::new();
    for p in &args.scenario {
        let name = p.display().to_string();
        scenarios.push(parse_scenario(&name, &read(p)?).map_err(|e| Failure(EXIT_USAGE, e.to_string()))?);
    }
    let opts = RunOptions {
        trace: args.trace.is_some(),
        audit: true,
    };
    let reports: Vec<RunReport> = pool(args.jobs)?.install(|| {
        scenarios
            .par_iter()
            .map(|sc| run_scenario(sk.clone(), sc, opts))
            .collect()
    });

    if let Some(p) = &args.trace {
        let mut text = String::new();
        for r in &reports {
            text.push_str(&format!("# scenario {}\n", r.scenario));
            text.push_str(&format_trace(&r.trace));
        }
        write(p, &text)?;
    }
    let cost = sk.soc.cost_model;
    if let Some(p) = &args.metrics {
        let metrics: Vec<_> = reports.iter().map(|r| Metrics::from_report(r, &cost)).collect();
        let json = match metrics.as_slice() {
            [one] => one.to_json(),
            many => serde_json::to_string_pretty(&many.iter().map(|m| &m.0).collect::<Vec<_>>()).expect("plain data"),
        };
        write(p, &format!("{json}\n"))?;
    }
    if let Some(p) = &args.report {
        let json = serde_json::to_string_pretty(&reports).expect("plain data");
        write(p, &format!("{json}\n"))?;
    }

    let mut code = EXIT_OK;
    for r in &reports {
        let _ = writeln!(out, "{}", summary_line(r));
        for e in r.expects.iter().filter(|e| !e.pass) {
            let _ = writeln!(
                diag,
                "{}:{}: expectation failed: {}\n  - expected {}\n  + actual   {}",
                r.scenario, e.line, e.text, e.expected, e.actual
            );
        }
        let violations = r.audit.as_ref().map_or(&[][..], |a| &a.violations[..]);
        for v in violations {
            let _ = writeln!(diag, "{}: audit step {}: {:?}: {}", r.scenario, v.step, v.kind, v.detail);
        }
        if !r.passed() || !violations.is_empty() {
            code = EXIT_EXPECT;
        }
    }
    Ok(code)
}

/// Runs the command line; returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, diag: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(diag, "{e}") };
            return code;
        }
    };
    let result = (|| {
        let sk = load(&args, diag)?;
        if args.write_sig.is_some() && args.scenario.is_empty() && args.fuzz.is_none() {
            return Ok(EXIT_OK);
        }
        if args.scenario.is_empty() && args.fuzz.is_none() {
            return Err(Failure(EXIT_USAGE, "nothing to do: give --scenario or --fuzz".into()));
        }
        let mut code = EXIT_OK;
        if !args.scenario.is_empty() {
            code = code.max(run_scenarios(&args, &sk, out, diag)?);
        }
        if let Some(n) = args.fuzz {
            code = code.max(run_fuzz(&args, &sk, n, out)?);
        }
        Ok(code)
    })();
    match result {
        Ok(c) => c,
        Err(Failure(code, msg)) => {
            let _ = writeln!(diag, "error: {msg}");
            code
        }
    }
}
