use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use relocsim_core::amm::{Amount, AssetId, NumericMode};
use relocsim_core::calibration::ObservationSet;
use relocsim_core::engine::{execute_bundle, Action, Address, Bundle, Role, WorldState};
use relocsim_core::numeric::Scalar;

fn relocsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relocsim"))
        .args(args)
        .env("RELOCSIM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_trace_and_dot() {
    let dir = tempfile::tempdir().unwrap();
    let out = relocsim(&["simulate", "builtin:relocation_sym", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut files: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["trace.dot", "trace.json"]);
    assert!(stdout(&out).contains("\"config_hash\""));
}

#[test]
fn simulate_rejects_malformed_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "schema_version = 7\n[scenario]\nname = \"x\"\nrecipe = \"relocation_zero_fee\"\n[[assets]]\nsymbol = \"A\"\ndecimals = 18\n").unwrap();
    let out = relocsim(&["simulate", path(&cfg), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
}

#[test]
fn simulate_from_a_config_file_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("peb.toml");
    fs::write(&cfg, relocsim_core::scenario::builtin_source("peb_limit_order").unwrap()).unwrap();
    assert_eq!(relocsim(&["simulate", path(&cfg), "--out", path(&dir.path().join("a"))]).status.code(), Some(0));
    assert_eq!(relocsim(&["simulate", "builtin:peb_limit_order", "--out", path(&dir.path().join("b"))]).status.code(), Some(0));
    let a = fs::read(dir.path().join("a/trace.json")).unwrap();
    let b = fs::read(dir.path().join("b/trace.json")).unwrap();
    assert_eq!(a, b);
    let trace: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(trace["initiator"], "E");
}

#[test]
fn analyze_contrasts_the_two_observers() {
    let dir = tempfile::tempdir().unwrap();
    relocsim(&["simulate", "builtin:relocation_sym", "--out", path(dir.path())]);
    let out = relocsim(&["analyze", path(&dir.path().join("trace.json")), "--principal", "P", "--beneficiary", "B"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("transfer-layer: NOT RECOVERABLE"), "{text}");
    assert!(text.contains("semantic: MIGRATION P -> B 10 A"), "{text}");
}

#[test]
fn analyze_direct_transfer_is_recoverable_on_both_layers() {
    let a = AssetId::new("A", 18).unwrap();
    let (p, b) = (Address::new("P"), Address::new("B"));
    let mut w = WorldState::new(NumericMode::Exact);
    w.add_asset(a.clone());
    w.label(&p, Role::Principal);
    w.label(&b, Role::Beneficiary);
    w.set_balance(&p, &a, Amount::from_int(10));
    let bundle = Bundle {
        id: "direct".into(),
        initiator: p.clone(),
        actions: vec![Action::Transfer {
            from: p,
            to: b,
            asset: a,
            amount: Amount::from_int(10),
        }],
    };
    let (_, trace) = execute_bundle(&w, &bundle).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("trace.json");
    fs::write(&file, trace.to_json()).unwrap();
    let out = relocsim(&["analyze", path(&file)]);
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0));
    assert!(text.contains("transfer-layer: RECOVERABLE"), "{text}");
    assert!(text.contains("semantic: MIGRATION P -> B 10 A"), "{text}");
}

#[test]
fn analyze_missing_file_is_a_usage_error() {
    assert_eq!(relocsim(&["analyze", "/nonexistent/trace.json"]).status.code(), Some(2));
}

#[test]
fn calibrate_reference_and_inconsistent_observations() {
    let out = relocsim(&["calibrate", "--observations", "fork_reference"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("efficiency 0.935"));

    let dir = tempfile::tempdir().unwrap();
    let mut obs = ObservationSet::fork_reference();
    obs.a_prime = Scalar::parse("10.5").unwrap();
    let file = dir.path().join("obs.json");
    fs::write(&file, obs.to_json()).unwrap();
    assert_eq!(relocsim(&["calibrate", "--observations", path(&file)]).status.code(), Some(1));
    fs::write(&file, "{ not json").unwrap();
    assert_eq!(relocsim(&["calibrate", "--observations", path(&file)]).status.code(), Some(2));
}

#[test]
fn report_over_full_library_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = relocsim(&["simulate", "--all", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let first = relocsim(&["report", path(dir.path())]);
    assert_eq!(first.status.code(), Some(0));
    assert!(stdout(&first).contains("relocation_fork_calibrated"));
    let json1 = fs::read(dir.path().join("report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&json1).unwrap();
    assert_eq!(report["efficiency_table"].as_array().unwrap().len(), 10);
    relocsim(&["report", path(dir.path())]);
    assert_eq!(json1, fs::read(dir.path().join("report.json")).unwrap());
}

#[test]
fn report_on_empty_dir_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(relocsim(&["report", path(dir.path())]).status.code(), Some(2));
}

#[test]
fn selftest_passes_small_sample() {
    let out = relocsim(&["selftest", "--cases", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("PASS")).count(), 4);
}
