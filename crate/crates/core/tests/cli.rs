use std::fs;
use std::process::{Command, Output};

use oam_dephasing::analytic::DecayCurve;
use oam_dephasing::fitting::FitModel;
use oam_dephasing::io::{CurveFile, ScanFile};

fn oamdeph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oamdeph")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn analytic_prints_lifetime() {
    let o = oamdeph(&["analytic", "--waist-mm", "2", "--l", "2", "--t-us", "0,1"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("tau_d_us       3.49"), "{s}");
    assert!(s.lines().any(|l| l.trim_start().starts_with("0.0000") && l.contains("1.000000")));
}

#[test]
fn analytic_zero_charge_is_infinite() {
    let o = oamdeph(&["analytic", "--waist-mm", "2", "--l", "0"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("infinite"));
}

#[test]
fn missing_flag_is_usage_error_without_output() {
    let o = oamdeph(&["analytic", "--l", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
}

#[test]
fn domain_error_exits_one() {
    let o = oamdeph(&["analytic", "--waist-mm", "-1", "--l", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("waist"));
}

#[test]
fn simulate_seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, r#"{"waist_mm": 2, "probe_charge": 1, "control_charge": 0, "time_grid_us": [0, 1, 2], "n_atoms": 2000, "seed": 1}"#)
        .unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = oamdeph(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("n_atoms=2000"));
        fs::read(out).unwrap()
    };
    let a = run("a.csv", &[]);
    assert_eq!(a, run("b.csv", &["--seed", "1"]));
    assert_ne!(a, run("c.csv", &["--seed", "2"]));
    assert!(a.starts_with(b"t_us,efficiency,stderr\n"));
}

#[test]
fn simulate_rejects_unknown_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, r#"{"waist_mm": 2, "probe_charge": 1, "control_charge": 0, "time_grid_us": [0], "n_atoms": 10, "seed": 1, "bogus": 3}"#)
        .unwrap();
    let out = dir.path().join("x.csv");
    let o = oamdeph(&["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn fit_recovers_synthetic_lifetime() {
    let dir = tempfile::tempdir().unwrap();
    let times: Vec<f64> = (0..25).map(|i| 0.25e-6 * f64::from(i)).collect();
    let eff = times.iter().map(|&t| FitModel::SingleGaussian.eval(&[0.01, 0.4, 2.5e-6], t)).collect();
    let data = dir.path().join("curve.csv");
    CurveFile::from_curve(&DecayCurve::new(times, eff, None).unwrap()).save(&data).unwrap();
    let out = dir.path().join("fit.json");
    let o = oamdeph(&[
        "fit", "--data", data.to_str().unwrap(), "--model", "single-gaussian", "--init", "tau_us=1",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out).unwrap()).unwrap();
    assert_eq!(json["converged"], true);
    assert!(stdout(&o).contains("2.500000"), "{}", stdout(&o));
}

#[test]
fn fit_joint_with_per_dataset_fix() {
    let dir = tempfile::tempdir().unwrap();
    let times: Vec<f64> = (0..30).map(|i| 6e-6 * f64::from(i) / 29.0).collect();
    let mut paths = Vec::new();
    for (k, tau_d) in [f64::INFINITY, 1.6e-6, 0.74e-6].into_iter().enumerate() {
        let p = [0.02, 0.30, tau_d, 1.81e-6, 3.78e-6];
        let eff = times.iter().map(|&t| FitModel::Eq6GaussianTau0.eval(&p, t)).collect();
        let path = dir.path().join(format!("l{k}.csv"));
        CurveFile::from_curve(&DecayCurve::new(times.clone(), eff, None).unwrap()).save(&path).unwrap();
        paths.push(path.to_str().unwrap().to_string());
    }
    let out = dir.path().join("joint.json");
    let o = oamdeph(&[
        "fit", "--data", &paths[0], &paths[1], &paths[2], "--model", "eq6-gaussian-tau0", "--share", "tau0_us",
        "--share", "tau1", "--fix", "0:tau_d_us=inf", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out).unwrap()).unwrap();
    let shared = json["shared"].as_array().unwrap();
    let tau1 = shared.iter().find(|p| p["name"] == "tau1").unwrap()["value"].as_f64().unwrap();
    assert!((tau1 / 3.78e-6 - 1.0).abs() < 1e-6);
}

#[test]
fn fit_guard_refuses_unidentifiable_problem() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("c.csv");
    fs::write(&data, "t_us,efficiency\n0,1\n1,0.5\n2,0.2\n3,0.1\n4,0.05\n5,0.02\n6,0.01\n").unwrap();
    let o = oamdeph(&["fit", "--data", data.to_str().unwrap(), "--model", "eq6-gaussian-tau0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
}

#[test]
fn fit_reports_parse_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "t_us,efficiency\n0,1\n1,oops\n").unwrap();
    let o = oamdeph(&["fit", "--data", data.to_str().unwrap(), "--model", "single-gaussian"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fit_non_convergence_exits_three_and_writes_result() {
    let dir = tempfile::tempdir().unwrap();
    let ms: Vec<i32> = (-5..=5).collect();
    let eff = ms.iter().map(|&m| FitModel::EtaOam.eval(&[0.0, 1.0, 0.05, 0.3], f64::from(m))).collect();
    let data = dir.path().join("scan.csv");
    ScanFile { m: ms, efficiency: eff, stderr: None }.save(&data).unwrap();
    let out = dir.path().join("r.json");
    let o = oamdeph(&[
        "fit", "--data", data.to_str().unwrap(), "--model", "eta-oam", "--init", "center=-4", "--max-iterations", "2",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(json["converged"], false);
}

#[test]
fn scenario_requires_name_or_config() {
    let o = oamdeph(&["scenario"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn scenario_fig3_writes_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig3");
    let o = oamdeph(&["scenario", "fig3", "--seed", "3", "--n-atoms", "5000", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("fitted center, n=20"));
    for f in ["report.json", "comparison.txt", "scan_n0.csv", "fit_n20.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn workers_flag_overrides_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, r#"{"waist_mm": 2, "probe_charge": 1, "control_charge": 0, "time_grid_us": [0, 1], "n_atoms": 100, "seed": 1}"#)
        .unwrap();
    let out = dir.path().join("c.csv");
    let run = |flag: &[&str]| {
        let mut args = flag.to_vec();
        args.extend(["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        let o = Command::new(env!("CARGO_BIN_EXE_oamdeph")).args(&args).env("OAMDEPH_WORKERS", "3").output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    assert!(run(&[]).contains("workers=3"));
    assert!(run(&["--workers", "2"]).contains("workers=2"));
}
