use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Shipped config with draw counts cut down and JSON-pointer overrides applied.
fn small_config(dir: &Path, name: &str, edits: &[(&str, Value)]) -> PathBuf {
    let text = std::fs::read_to_string(configs().join(format!("{name}.json"))).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    let defaults: [(&str, Value); 12] = [
        ("/stage1/n_chains", 2.into()),
        ("/stage1/hmc/n_warmup", 300.into()),
        ("/stage1/hmc/n_samples", 1000.into()),
        ("/flow/max_epochs", 3.into()),
        ("/stage2/n_chains", 2.into()),
        ("/stage2/hmc/n_warmup", 200.into()),
        ("/stage2/hmc/n_samples", 500.into()),
        ("/baseline/hmc/n_warmup", 300.into()),
        ("/baseline/n_chains", 2.into()),
        ("/baseline/hmc/n_samples", 1000.into()),
        ("/gates/ess_min", 50.into()),
        ("/gates/rhat_max", 1.05.into()),
    ];
    for (ptr, v) in defaults.iter().chain(edits) {
        *cfg.pointer_mut(ptr).unwrap_or_else(|| panic!("{ptr}")) = v.clone();
    }
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn mss(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mss")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn run(sub: &[&str], config: &Path, out: &Path) -> i32 {
    let mut args = sub.to_vec();
    args.extend(["--config", config.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()]);
    mss(&args).0
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_1() {
    let (code, text) = mss(&["frobnicate"]);
    assert_eq!(code, 1, "{text}");
    let (code, _) = mss(&["sample", "--out", "x"]);
    assert_eq!(code, 1);
    let (code, _) = mss(&["--help"]);
    assert_eq!(code, 0);
}

#[test]
fn missing_config_exits_1_with_error_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(run(&["sample"], &dir.path().join("absent.json"), &out), 1);
    let r = report(&out);
    assert_eq!(r["status"], "error");
    assert!(r["error"].as_str().unwrap().contains("absent.json"));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"model": {"kind": "classic_funnel"}, "stage1": {"n_chains": 1}}"#).unwrap();
    assert_eq!(run(&["mss"], &path, &dir.path().join("run")), 1);
}

#[test]
fn prs_sample_succeeds_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "classic_funnel", &[]);
    let out = dir.path().join("prs");
    assert_eq!(run(&["sample", "--scheme", "prs"], &cfg, &out), 0);
    for f in ["report.json", "samples.csv", "samples.json", "chains/chain_0.csv", "chains/chain_1.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let r = report(&out);
    assert_eq!(r["status"], "ok");
    assert_eq!(r["scheme"], "prs");
    assert!(r["timing"]["total"].as_f64().unwrap() > 0.0);
    assert!(r["result"]["ks"]["prs:ks[y]"].as_f64().unwrap() < 0.1);
}

#[test]
fn naive_sampling_of_the_funnel_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "classic_funnel", &[]);
    let out = dir.path().join("ns");
    assert_eq!(run(&["sample", "--scheme", "ns"], &cfg, &out), 2);
    let r = report(&out);
    assert_eq!(r["status"], "gate_failed");
    let failed: Vec<&str> = r["result"]["gates"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|g| g["pass"] == false)
        .map(|g| g["name"].as_str().unwrap())
        .collect();
    assert!(!failed.is_empty());
}

#[test]
fn mss_writes_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "likelihood_funnel", &[]);
    let out = dir.path().join("mss");
    let code = run(&["mss"], &cfg, &out);
    let r = report(&out);
    assert_eq!(code, if r["status"] == "ok" { 0 } else { 2 }, "{r}");
    for f in [
        "config.json",
        "stage1/chain_0.csv",
        "stage1/chain_1.json",
        "marginal.csv",
        "flow.json",
        "stage2.csv",
        "report.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(r["scheme"], "cprs");
    for k in ["stage1", "density", "stage2", "total"] {
        assert!(r["timing"][k].is_number(), "{k}");
    }
    let figures: Vec<&str> = r["figures"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert!(figures.contains(&"flow_training") && figures.contains(&"mss_marginal"), "{figures:?}");

    // The stage-1 marginal file feeds flow-train, and the run directory feeds diagnose.
    let ft = dir.path().join("ft");
    let marginal = out.join("marginal.csv");
    let mut args = vec!["flow-train", "--input", marginal.to_str().unwrap()];
    args.extend(["--config", cfg.to_str().unwrap(), "--out", ft.to_str().unwrap()]);
    assert_eq!(mss(&args).0, 0);
    assert!(ft.join("flow.json").exists());
    let dg = dir.path().join("dg");
    let mut args = vec!["diagnose", "--input", out.to_str().unwrap()];
    args.extend(["--config", cfg.to_str().unwrap(), "--out", dg.to_str().unwrap()]);
    let code = mss(&args).0;
    assert!(code == 0 || code == 2);
    assert!(report(&dg)["result"]["tv"]["input:tv"].is_number(), "{}", report(&dg));
}

#[test]
fn simulate_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "pta", &[("/model/data/simulate/n_samples", 120.into())]);
    let sim = dir.path().join("sim");
    assert_eq!(run(&["simulate"], &cfg, &sim), 0);
    assert!(sim.join("dataset.json").exists() && sim.join("dataset.csv").exists());

    let a = dir.path().join("cprs");
    assert!([0, 2].contains(&run(&["sample", "--scheme", "cprs"], &cfg, &a)));
    let cmp = dir.path().join("cmp");
    let mut args = vec!["compare", "--input", a.to_str().unwrap()];
    args.extend(["--config", cfg.to_str().unwrap(), "--out", cmp.to_str().unwrap()]);
    assert!([0, 2].contains(&mss(&args).0));
    let overlay = std::fs::read_to_string(cmp.join("overlay.csv")).unwrap();
    assert!(overlay.lines().next().unwrap().contains("oracle"), "{overlay}");
}
