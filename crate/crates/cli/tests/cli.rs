use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use cloaksim::report::metrics_from_trace;
use cloaksim::soc::CostModel;
use serde_json::Value;

fn data(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(rel)
        .display()
        .to_string()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["cloaksim".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cloaksim_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn signed(extra: &[&str]) -> (i32, String, String) {
    let (dts, sig, keys) = (data("board.dts"), data("board.sig"), data("keys.txt"));
    let mut args = vec!["--dtree", &dts, "--sig", &sig, "--keys", &keys];
    args.extend_from_slice(extra);
    run(&args)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn airplane_happy_path_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");
    let (code, _, err) = signed(&["--scenario", &data("scenarios/airplane.scn"), "--metrics", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(!err.contains("warning"), "{err}");
    let m: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(m["class.wifi"], "disabled");
    assert_eq!(m["class.bluetooth"], "disabled");
    assert_eq!(m["class.camera"], "enabled");
    // One read, one write and four driver attempts at the WiFi status register.
    assert_eq!(m["denied"], 6);
}

#[test]
fn every_shipped_scenario_passes() {
    let dir = fs::read_dir(data("scenarios")).unwrap();
    let mut n = 0;
    for e in dir {
        let p = e.unwrap().path();
        if p.extension().and_then(|x| x.to_str()) == Some("scn") && !p.ends_with("micro_overhead.scn") {
            let (code, out, err) = signed(&["--scenario", p.to_str().unwrap()]);
            assert_eq!(code, 0, "{}: {out}{err}", p.display());
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn failing_expect_exits_1_with_diff() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "f.scn", "smc_get\n\nexpect get 0x40\n");
    let (code, _, err) = signed(&["--scenario", s.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("f.scn:3: expectation failed"), "{err}");
    assert!(err.contains("- expected 0x00000040") && err.contains("+ actual   0x00000000"), "{err}");
}

#[test]
fn bad_signature_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write(dir.path(), "bad.sig", &"00".repeat(32));
    let (dts, keys) = (data("board.dts"), data("keys.txt"));
    let scn = data("scenarios/workflow.scn");
    let (code, _, err) = run(&["--dtree", &dts, "--sig", sig.to_str().unwrap(), "--keys", &keys, "--scenario", &scn]);
    assert_eq!(code, 2);
    assert!(err.contains("device tree rejected"), "{err}");

    // A one-byte change to the tree invalidates the shipped signature.
    let tree = fs::read_to_string(&dts).unwrap().replacen("wifi@2190000", "wifi@2190004", 1);
    let edited = write(dir.path(), "edited.dts", &tree);
    let (code, _, err) = run(&[
        "--dtree",
        edited.to_str().unwrap(),
        "--sig",
        &data("board.sig"),
        "--keys",
        &keys,
        "--scenario",
        &scn,
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("device tree rejected"), "{err}");
}

#[test]
fn unsigned_tree_runs_with_warning() {
    let (code, _, err) = run(&["--dtree", &data("board.dts"), "--scenario", &data("scenarios/tamper.scn")]);
    assert_eq!(code, 0);
    assert!(err.contains("warning") && err.contains("not signature-checked"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).0, 2);
    assert_eq!(run(&["--dtree", &data("board.dts"), "--bogus"]).0, 2);
    let (code, _, err) = run(&["--dtree", &data("board.dts"), "--keys", &data("keys.txt"), "--fuzz", "1"]);
    assert_eq!(code, 2);
    assert!(err.contains("together"), "{err}");
    let (code, _, err) = run(&["--dtree", &data("board.dts")]);
    assert_eq!(code, 2);
    assert!(err.contains("nothing to do"), "{err}");
    let (code, _, _) = signed(&["--scenario", "/nonexistent/x.scn"]);
    assert_eq!(code, 2);
}

#[test]
fn parse_errors_carry_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "p.scn", "smc_get\nread 0x10 3\n");
    let (code, _, err) = signed(&["--scenario", s.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("p.scn:2:"), "{err}");

    let d = write(dir.path(), "t.dts", "/dts-v1/;\n/ {\n\tfoo = <1\n};\n");
    let (code, _, err) = run(&["--dtree", d.to_str().unwrap(), "--fuzz", "1"]);
    assert_eq!(code, 2);
    assert!(err.contains("device tree rejected") && err.contains("t.dts"), "{err}");
}

#[test]
fn unwritable_sink_exits_2() {
    let (code, _, err) = signed(&["--scenario", &data("scenarios/tamper.scn"), "--metrics", "/nonexistent/dir/m.json"]);
    assert_eq!(code, 2);
    assert!(err.contains("/nonexistent/dir/m.json"), "{err}");
}

#[test]
fn trace_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (trace, metrics) = (dir.path().join("t.txt"), dir.path().join("m.json"));
    let (code, _, err) = signed(&[
        "--scenario",
        &data("scenarios/wifi_10mb.scn"),
        "--trace",
        trace.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let rebuilt = metrics_from_trace(&fs::read_to_string(&trace).unwrap(), &CostModel::default()).unwrap();
    let written: Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(serde_json::to_value(&rebuilt.0).unwrap(), written);
    assert!(rebuilt.get_u64("dma_transfers").unwrap() > 0);
}

#[test]
fn parallel_jobs_match_serial_output() {
    let dir = tempfile::tempdir().unwrap();
    let scns: Vec<String> = ["workflow", "tamper", "airplane", "reset", "wifi_10mb"]
        .iter()
        .map(|n| data(&format!("scenarios/{n}.scn")))
        .collect();
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let (m, r) = (dir.path().join(format!("m{jobs}")), dir.path().join(format!("r{jobs}")));
        let mut args = vec!["--jobs", jobs, "--metrics", m.to_str().unwrap(), "--report", r.to_str().unwrap()];
        for s in &scns {
            args.extend(["--scenario", s.as_str()]);
        }
        let (code, out, err) = signed(&args);
        assert_eq!(code, 0, "{err}");
        outputs.push((out, fs::read(&m).unwrap(), fs::read(&r).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let arr: Value = serde_json::from_slice(&outputs[0].1).unwrap();
    assert_eq!(arr.as_array().unwrap().len(), 5);
}

#[test]
fn fuzz_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let report = |seed: &str, jobs: &str| {
        let p = dir.path().join(format!("f{seed}-{jobs}.json"));
        let (code, _, err) = signed(&["--fuzz", "30", "--seed", seed, "--jobs", jobs, "--metrics", p.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        fs::read_to_string(p).unwrap()
    };
    assert_eq!(report("9", "1"), report("9", "2"));
    assert_ne!(report("9", "1"), report("10", "1"));
}

#[test]
fn write_sig_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let sig = dir.path().join("new.sig");
    let (code, _, err) = run(&[
        "--dtree",
        &data("board.dts"),
        "--keys",
        &data("keys.txt"),
        "--write-sig",
        sig.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read_to_string(&sig).unwrap(), fs::read_to_string(data("board.sig")).unwrap());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_cloaksim");
    let ok = Command::new(bin)
        .args(["--dtree", &data("board.dts"), "--scenario", &data("scenarios/reset.scn")])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("reset.scn"));
    let bad = Command::new(bin).arg("--nope").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
