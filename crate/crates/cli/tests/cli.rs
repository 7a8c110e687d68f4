use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hbtsim::report::Report;
use hbtsim_core::PhotonStream;

fn hbtsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbtsim")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(out: &Path, seed: &str, time: &str) -> Output {
    hbtsim(&["simulate", "--preset", "nanocrystal", "--power-mw", "2.7", "--time-per-point-s", time, "--seed", seed, "--out", p(out)])
}

#[test]
fn simulate_writes_streams_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), "5", "1");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["p0_det1.bin", "p0_det2.bin", "p0_background_det1.bin", "p0_background_det2.bin", "metadata.json"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let s1 = PhotonStream::read_file(&dir.path().join("p0_det1.bin")).unwrap();
    assert_eq!(s1.duration(), 1_000_000_000_000);
    assert!(s1.len() > 10_000 && s1.len() < 40_000, "{} clicks", s1.len());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["points"][0]["power"]["unit"], "mW");
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert!(simulate(a.path(), "9", "1").status.success());
    assert!(simulate(b.path(), "9", "1").status.success());
    assert!(simulate(c.path(), "10", "1").status.success());
    let read = |d: &Path| fs::read(d.join("p0_det1.bin")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
    assert_eq!(fs::read(a.path().join("metadata.json")).unwrap(), fs::read(b.path().join("metadata.json")).unwrap());
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[i].parse().unwrap()).collect()
}

#[test]
fn correlate_columns_and_modes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simulate(dir.path(), "3", "20").status.success());
    let (s1, s2) = (dir.path().join("p0_det1.bin"), dir.path().join("p0_det2.bin"));
    let plain = dir.path().join("plain");
    let out = hbtsim(&["correlate", p(&s1), p(&s2), "--out", p(&plain)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(header(&plain.join("correlation.csv")), ["tau_ns", "counts", "C_N", "sigma"]);
    let tau = column(&plain.join("correlation.csv"), "tau_ns");
    assert_eq!(tau.len(), 401);
    assert_eq!(tau[200], 0.0);

    let with_rho = dir.path().join("rho");
    assert!(hbtsim(&["correlate", p(&s1), p(&s2), "--rho", "0.95", "--out", p(&with_rho)]).status.success());
    let csv = with_rho.join("correlation.csv");
    assert_eq!(header(&csv), ["tau_ns", "counts", "C_N", "sigma", "g2_corrected", "g2_corrected_sigma"]);
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(with_rho.join("correlation.json")).unwrap()).unwrap();
    assert_eq!(sidecar["rho"]["value"], 0.95);
    assert_eq!(sidecar["mode"], "all-pairs");

    let tac = dir.path().join("tac");
    let out = hbtsim(&["correlate", p(&s1), p(&s2), "--mode", "tac", "--tac-delay-ns", "200", "--out", p(&tac)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // At ~2e4 /s the chance of a second stop inside the window is ~1%.
    let a: f64 = column(&plain.join("correlation.csv"), "counts").iter().sum();
    let t: f64 = column(&tac.join("correlation.csv"), "counts").iter().sum();
    assert!((a - t).abs() <= 5.0 * (a + t).sqrt(), "all-pairs {a} vs tac {t}");
    let cn_a = column(&plain.join("correlation.csv"), "C_N");
    let cn_t = column(&tac.join("correlation.csv"), "C_N");
    let sig = column(&plain.join("correlation.csv"), "sigma");
    let near: Vec<usize> = (150..=250).collect();
    let mean = |v: &[f64]| near.iter().map(|&i| v[i]).sum::<f64>() / near.len() as f64;
    let se = (near.iter().map(|&i| sig[i] * sig[i]).sum::<f64>()).sqrt() / near.len() as f64;
    assert!((mean(&cn_a) - mean(&cn_t)).abs() <= 5.0 * se * 2f64.sqrt());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = \"x\"\nnot_a_field = 1\n").unwrap();
    let out = hbtsim(&["simulate", "--config", p(&bad), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_field"));

    assert_eq!(hbtsim(&["simulate", "--preset", "nonsense", "--out", "x"]).status.code(), Some(1));
    assert_eq!(hbtsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hbtsim(&["--help"]).status.code(), Some(0));

    let short = dir.path().join("short.csv");
    fs::write(&short, "tau_ns,counts,C_N,sigma\n0,1,0.1,0.1\n1,1,0.5,0.1\n").unwrap();
    assert_eq!(hbtsim(&["fit", "--model", "dip", p(&short)]).status.code(), Some(2));
    let missing = dir.path().join("missing.csv");
    assert_eq!(hbtsim(&["fit", "--model", "dip", p(&missing)]).status.code(), Some(2));
}

#[test]
fn fit_dip_recovers_rate_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dip.csv");
    let mut text = String::from("tau_ns,counts,C_N,sigma\n");
    for i in -100..=100 {
        let t = i as f64;
        let g = 1.0 - 0.8 * (-0.07 * t.abs()).exp();
        text.push_str(&format!("{t},0,{g},0.01\n"));
    }
    fs::write(&path, text).unwrap();
    let json = dir.path().join("fit.json");
    let out = hbtsim(&["fit", "--model", "dip", p(&path), "--out", p(&json)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    let k = fit["parameters"]["k_per_ns"]["value"].as_f64().unwrap();
    assert!((k - 0.07).abs() < 1e-6, "k = {k}");
    assert_eq!(fit["parameters"]["k_per_ns"]["unit"], "ns^-1");
}

#[test]
fn report_defaults_and_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = hbtsim(&["report", "--g2-zero", "0.05", "--out", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = Report::from_json(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let predicted = report.lifetime_table.iter().find(|r| r.label.contains("index-corrected")).unwrap();
    assert!((predicted.lifetime.value - 22.7).abs() < 0.05);
    assert_eq!(predicted.lifetime.unit, "ns");
    assert_eq!(report.emitter_count.as_ref().unwrap().rounded, 1);
    let nc = report.multiphoton.iter().find(|r| r.cn_zero.value == 0.17).unwrap();
    assert!((nc.improvement.value - 1.0 / 0.17).abs() < 1e-12);
    assert!((nc.improvement.value - 5.9).abs() < 0.05);
    assert!(String::from_utf8_lossy(&out.stdout).contains("22.7"));

    let out = hbtsim(&["report", "--cn-zero", "0.5", "--lifetime-ns", "25"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("C_N(0) = 0.5"), "{text}");
    assert!(!text.contains("nanocrystal reference"));
}

#[test]
fn report_rejects_unit_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    assert!(hbtsim(&["report", "--out", p(dir.path())]).status.success());
    let path = dir.path().join("report.json");
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    json["multiphoton"][0]["cn_zero"]["unit"] = "ns".into();
    fs::write(&path, serde_json::to_string(&json).unwrap()).unwrap();
    let out = hbtsim(&["report", "--input", p(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ns"));
}
