use std::path::{Path, PathBuf};
use std::process::Command;

fn gflc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gflc"))
}

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.conf")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn strip_timings(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("timings");
            m.values_mut().for_each(strip_timings);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

#[test]
fn malformed_config_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "sb = 100e6\nub = banana\n").unwrap();
    let out = dir.path().join("out");
    let status = gflc()
        .args(["analyze", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&status.stderr);
    assert!(stderr.contains("configuration") && stderr.contains("hint"), "{stderr}");
    assert!(!out.exists());
}

#[test]
fn unknown_phi_is_a_configuration_error() {
    let status = gflc()
        .args(["analyze", "--phi", "7", "--config"])
        .arg(config())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn analyze_writes_report_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = gflc()
            .args(["analyze", "--seed-count", "500", "--config"])
            .arg(config())
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success());
        for f in ["report.json", "manifest.json", "energy.txt", "slice.csv", "contour.csv", "trajectory.csv", "events.log"] {
            assert!(out.join(f).exists(), "missing {f}");
        }
        let mut r = json(&out.join("report.json"));
        strip_timings(&mut r);
        reports.push(r);
    }
    assert_eq!(reports[0], reports[1]);
    let r = &reports[0];
    let c1 = r["c1"].as_f64().unwrap();
    let est = r["estimate"]["value"].as_f64().unwrap();
    assert!(c1 > 0.5 && c1 < 0.65, "c1 {c1}");
    assert!(est > 0.2 && est < 0.236, "estimate {est}");
    assert!(r["zubov_residual"].as_f64().unwrap() < 1e-8);
    assert!(r["v2_min_eigenvalue"].as_f64().unwrap() > 0.0);

    let m = json(&dir.path().join("a/manifest.json"));
    assert_eq!(m["order"], 16);
    assert_eq!(m["taylor_order"], 30);
    assert_eq!(m["phi"], "phi1");
    assert!(m["timings"].as_array().unwrap().iter().any(|t| t["stage"] == "energy-build"));
    let traj = std::fs::read_to_string(dir.path().join("a/trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,delta,omega,omega_g,phase"));
}

#[test]
fn low_order_warns() {
    let out = gflc()
        .args(["analyze", "--order", "6", "--seed-count", "300", "--config"])
        .arg(config())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("degraded accuracy"));
}

#[test]
fn oracle_bracket_is_honest() {
    let dir = tempfile::tempdir().unwrap();
    let status = gflc()
        .args(["oracle", "--precision", "0.05", "--config"])
        .arg(config())
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    let r = json(&dir.path().join("report.json"));
    let lo = r["bracket"][0].as_f64().unwrap();
    let hi = r["bracket"][1].as_f64().unwrap();
    assert!(hi - lo <= 0.05 + 1e-12);
    assert!((r["bracket_width"].as_f64().unwrap() - (hi - lo)).abs() < 1e-12);
    let probes = r["probes"].as_array().unwrap();
    let verdict_at = |t: f64| {
        probes
            .iter()
            .find(|p| (p["clearing_time"].as_f64().unwrap() - t).abs() < 1e-12)
            .map(|p| p["verdict"].as_str().unwrap().to_string())
    };
    assert_eq!(verdict_at(lo).as_deref(), Some("stable"));
    assert_eq!(verdict_at(hi).as_deref(), Some("unstable"));
    assert!(lo <= 0.2365 && 0.2365 <= hi);
}

#[test]
fn empty_sweep_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let status = gflc()
        .args(["sweep", "--sweep", "jg=", "--config"])
        .arg(config())
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv, "params,c1,estimated_cct,oracle_cct,error_pct,conservative,error\n");
}

#[test]
fn sweep_keeps_order_and_records_row_errors() {
    let dir = tempfile::tempdir().unwrap();
    let status = gflc()
        .args(["sweep", "--seed-count", "300", "--sweep", "rf=10,-1", "--config"])
        .arg(config())
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("\"rf=10\""));
    assert!(lines[1].contains(",true,"));
    assert!(lines[2].starts_with("\"rf=-1\""));
    assert!(lines[2].contains("configuration"));
}

#[test]
fn baseline_flags_radical_error() {
    let dir = tempfile::tempdir().unwrap();
    let status = gflc()
        .args(["baseline", "--seed-count", "500", "--config"])
        .arg(config())
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    let r = json(&dir.path().join("report.json"));
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let first = &rows[0];
    assert_eq!(first["traditional"], "stable");
    assert_eq!(first["zubov"], "unstable");
    assert_eq!(first["actual"], "unstable");
    assert_eq!(first["radical_error"], true);
    for row in &rows[1..] {
        assert_eq!(row["zubov"], "stable");
        assert_eq!(row["actual"], "stable");
        assert_eq!(row["radical_error"], false);
    }
}
