use std::fs;
use std::process::Command;

fn hornlab(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hornlab")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

const HORN2: &str = r#"{"factors":[{"kind":"horn"},{"kind":"horn"}]}"#;
const H2: &str = r#"{"factors":[{"kind":"hyperbolic"}]}"#;
const Z4: &str = r#"{"factor_actions":[{"kind":"mobius","m":[[2,0],[0,0.5]]}]}"#;

#[test]
fn usage_errors_exit_3() {
    assert_eq!(hornlab(&["experiment", "nonesuch"]).0, 3);
    assert_eq!(hornlab(&["--no-such-flag"]).0, 3);
    assert_eq!(hornlab(&["distance", "--from", "{}", "--to", "{}"]).0, 3);
    assert_eq!(hornlab(&["classify", "--space", H2]).0, 3);
    assert_eq!(hornlab(&["--help"]).0, 0);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"parameters":{"xi":0.3,"unknown":1}}"#).unwrap();
    assert_eq!(hornlab(&["experiment", "corners", "--config", cfg.to_str().unwrap()]).0, 3);
    fs::write(&cfg, r#"{"name":"masur"}"#).unwrap();
    assert_eq!(hornlab(&["experiment", "corners", "--config", cfg.to_str().unwrap()]).0, 3);
}

#[test]
fn config_parameters_reach_the_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let out = dir.path().join("run");
    // ξ = ξ′: margin 2ξ(2 − √2)
    fs::write(
        &cfg,
        format!(r#"{{"name":"corners","parameters":{{"xi":0.25,"xi2":0.25,"nodes":8}},"out":{:?}}}"#, out),
    )
    .unwrap();
    let (code, _) = hornlab(&["experiment", "corners", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let margin = report["assertions"].as_array().unwrap().iter().find(|a| a["name"] == "margin").unwrap();
    let want = 0.5 * (2.0 - 2f64.sqrt());
    assert!((margin["expected"].as_f64().unwrap() - want).abs() < 1e-12);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!(report["tolerances"]["margin"].is_number());
    for a in report["artifacts"].as_array().unwrap() {
        let text = fs::read_to_string(out.join(a.as_str().unwrap())).unwrap();
        assert!(!text.contains('\r') && text.lines().next().unwrap().starts_with('x'));
    }
    assert!(out.join("timing.json").exists());
}

#[test]
fn degenerate_corner_is_the_corner_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"parameters":{"xi":0.3,"xi2":0.0}}"#).unwrap();
    let (code, out) = hornlab(&["experiment", "corners", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("geodesic_is_corner_path"));
}

#[test]
fn tools_report_and_write_tables() {
    let p = r#"{"blocks":[{"kind":"interior","theta":0,"xi":0.3},{"kind":"boundary"}]}"#;
    let q = r#"{"blocks":[{"kind":"boundary"},{"kind":"interior","theta":1,"xi":0.4}]}"#;
    let (code, out) = hornlab(&["distance", "--space", HORN2, "--from", p, "--to", q]);
    assert_eq!(code, 0);
    let r: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((r["data"]["distance"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("axis");
    let (code, _) = hornlab(&["axis", "--space", H2, "--iso", Z4, "--growth", "0,1,2,3", "--out", run.to_str().unwrap()]);
    assert_eq!(code, 0);
    let growth = fs::read_to_string(run.join("growth.csv")).unwrap();
    assert_eq!(growth.lines().next(), Some("d,f"));
    assert_eq!(growth.lines().count(), 5);

    let (code, out) = hornlab(&["classify", "--space", H2, "--iso", Z4]);
    assert_eq!(code, 0);
    assert!(out.contains("pseudoAnosov-analog"));
}

#[test]
fn escaping_relaxation_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seed.csv");
    fs::write(&path, "x,theta_0,xi_0,boundary_0\n0,0,0.1,0\n0.5,0.5,0.1,0\n1,1,0.1,0\n").unwrap();
    let (code, out) = hornlab(&[
        "relax",
        "--space",
        r#"{"factors":[{"kind":"horn"}]}"#,
        "--iso",
        r#"{"factor_actions":[{"kind":"horn_translate","a":1}]}"#,
        "--path",
        path.to_str().unwrap(),
        "--max-iter",
        "5000",
    ]);
    assert_eq!(code, 2, "{out}");
    assert!(out.contains("\"escaped\": true"));
}
