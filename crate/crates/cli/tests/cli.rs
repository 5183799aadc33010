use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn splitkit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitkit"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SPLITKIT_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The JSON summary on the last stdout line.
fn summary(o: &Output) -> Value {
    let out = stdout(o);
    let last = out.lines().last().expect("some output");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("{e}: {last}"))
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).expect("manifest exists")).unwrap()
}

#[test]
fn schemes_list_covers_registry() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["schemes", "list"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    for name in ["strang-2", "strang-4", "opt-4-5-pos", "opt-3-3-pos", "milne-3-partner"] {
        assert!(out.contains(name), "{name} missing");
    }
    assert_eq!(summary(&o)["ok"], true);
}

#[test]
fn check_strang4() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["schemes", "check", "strang-4"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("order 2 verified, LEM 2.62202"));
    let s = summary(&o);
    assert_eq!(s["verified_order"], 2);
    assert_eq!(s["negative_entries"], false);
}

#[test]
fn check_reports_negative_entries() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["schemes", "check", "opt-4-4-neg"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("negative entries present"));
    assert!(stdout(&o).contains("-0.092758759"));
}

#[test]
fn unknown_scheme_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["schemes", "show", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown scheme `bogus`"));
    assert_eq!(summary(&o)["ok"], false);
}

#[test]
fn shown_scheme_checks_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["schemes", "show", "opt-4-5-pos"], dir.path());
    assert!(o.status.success());
    let text: String = stdout(&o)
        .lines()
        .filter(|l| !l.starts_with('{'))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(dir.path().join("copy.scheme"), text).unwrap();
    let o = splitkit(&["schemes", "check", "copy.scheme"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let lem = summary(&o)["lem"].as_f64().unwrap();
    assert!((lem - 0.17424).abs() < 1e-4, "{lem}");
}

#[test]
fn missing_external_pair_names_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_splitkit"))
        .args(["schemes", "check", "milne-3-pair"])
        .current_dir(dir.path())
        .env("SPLITKIT_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SPLITKIT_DATA_DIR"));
}

#[test]
fn verify_strang2_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["verify", "--scheme", "strang-2", "--out-dir", "v"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let slope = summary(&o)["slope"].as_f64().unwrap();
    assert!((slope - 3.0).abs() < 0.05, "{slope}");
    let csv = fs::read_to_string(dir.path().join("v/verify.csv")).unwrap();
    assert!(csv.starts_with("h,error,constant\n"));
    assert_eq!(csv.lines().count(), 8);
    let m = manifest(&dir.path().join("v/manifest.json"));
    assert_eq!(m["ok"], true);
    assert_eq!(m["seeds"][0], 1);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 1);
}

#[test]
fn verify_order_mismatch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["verify", "--scheme", "lie-trotter-2", "--order", "2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let s = summary(&o);
    assert!((s["slope"].as_f64().unwrap() - 2.0).abs() < 0.05);
    assert_eq!(s["expected_slope"], 3.0);
}

#[test]
fn verify_published_table_with_restored_digits() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["verify", "--scheme", "opt-4-5-pos"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary(&o)["restored"], true);
}

#[test]
fn verify_derived_pair_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["verify", "--pair", "derived", "--gamma"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("algebraic gamma"));
    let s = summary(&o);
    let (a, e) = (
        s["algebraic_gamma"].as_f64().unwrap(),
        s["empirical_gamma"].as_f64().unwrap(),
    );
    assert!((a - e).abs() < 1e-3);
}

#[test]
fn optimize_three_operators() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "optimize", "--ops", "3", "--stages", "3", "--nonneg", "--budget", "16", "--seed", "1",
        "--out", "opt.scheme",
    ];
    let o = splitkit(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(&o);
    assert!(s["lem"].as_f64().unwrap() <= 0.35);
    assert_eq!(s["verified_order"], 2);
    let o = splitkit(&["schemes", "check", "opt.scheme"], dir.path());
    assert!(o.status.success());
    assert_eq!(summary(&o)["negative_entries"], false);
    let m = manifest(&dir.path().join("opt.scheme.manifest.json"));
    assert_eq!(m["seeds"][0], 1);
    assert_eq!(m["config"]["budget"], 16);
}

#[test]
fn optimize_milne_partner_writes_pair() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "optimize", "--ops", "2", "--stages", "3", "--nonneg", "--milne-of", "strang-2",
        "--budget", "4", "--out", "p.pair",
    ];
    let o = splitkit(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("gamma = "));
    let gamma = summary(&o)["gamma"].as_f64().unwrap();
    assert!((gamma - 1.0).abs() > 0.05);
    let o = splitkit(&["verify", "--pair", "p.pair", "--gamma"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn optimize_zero_budget_fails_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["optimize", "--ops", "2", "--stages", "2", "--budget", "0", "--out", "x.scheme"];
    let o = splitkit(&args, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("x.scheme").exists());
    let m = manifest(&dir.path().join("x.scheme.manifest.json"));
    assert_eq!(m["ok"], false);
    assert!(m["error"].as_str().unwrap().contains("budget"));
}

#[test]
fn converge_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        let args = ["burgers", "converge", "--n", "256", "--rows", "4", "--out-dir", out];
        let o = splitkit(&args, dir.path());
        fs::read(dir.path().join(out).join("study.csv")).unwrap_or_else(|_| panic!("{}", stderr(&o)))
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with(
        "h,err_basic,order_basic,const_basic,err_partner,order_partner,const_partner"
    ));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn converge_exit_code_follows_order_window() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["burgers", "converge"], dir.path());
    let s = summary(&o);
    let inside = s["min_order"].as_f64().unwrap() >= 2.8 && s["max_order"].as_f64().unwrap() <= 3.05;
    assert_eq!(o.status.success(), inside);
    let m = manifest(&dir.path().join("burgers-converge/manifest.json"));
    assert_eq!(m["ok"], inside);
    assert_eq!(m["config"]["n"], 1024);
}

#[test]
fn bad_grid_still_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["burgers", "converge", "--n", "1000", "--out-dir", "bad"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let m = manifest(&dir.path().join("bad/manifest.json"));
    assert_eq!(m["ok"], false);
    assert!(m["error"].as_str().unwrap().contains("power of two"));
}

#[test]
fn adaptive_loose_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["burgers", "adaptive", "--tol", "0.1", "--out-dir", "run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(&o);
    assert_eq!(s["floor_hit"], false);
    assert!(s["accepted"].as_u64().unwrap() < 20);
    let m = manifest(&dir.path().join("run/manifest.json"));
    let outputs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for f in ["trace.csv", "initial.csv", "final.csv", "plot.gp"] {
        assert!(outputs.iter().any(|o| o.ends_with(f)), "{f} not listed");
        assert!(dir.path().join("run").join(f).is_file());
    }
    let trace = fs::read_to_string(dir.path().join("run/trace.csv")).unwrap();
    assert!(trace.starts_with("t,h,inv_h,P,accepted\n"));
}

#[test]
fn adaptive_defaults_report_floor_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = splitkit(&["burgers", "adaptive"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(&o);
    assert!(s["floor_hit"].is_boolean());
    let (h0, hmax, hend) = (
        s["h_initial"].as_f64().unwrap(),
        s["h_max"].as_f64().unwrap(),
        s["h_final"].as_f64().unwrap(),
    );
    // grows while smooth, shrinks once the shock forms
    assert!(hmax >= 2.0 * h0);
    assert!(hmax >= 20.0 * hend);
}
