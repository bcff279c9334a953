use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> Value {
    let text = std::fs::read_to_string(configs().join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

struct Run {
    code: i32,
    stderr: String,
    out: PathBuf,
}

fn run_value(dir: &Path, sub: &str, cfg: &Value, extra: &[&str]) -> Run {
    let cfg_path = dir.join(format!("{sub}.config.json"));
    std::fs::write(&cfg_path, serde_json::to_vec(cfg).unwrap()).unwrap();
    let out = dir.join("out");
    let o: Output = Command::new(env!("CARGO_BIN_EXE_nonhol"))
        .arg(sub)
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    Run {
        code: o.status.code().unwrap(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
        out,
    }
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn max_abs(v: &Value) -> f64 {
    match v {
        Value::Number(n) => n.as_f64().unwrap().abs(),
        Value::Array(a) => a.iter().map(max_abs).fold(0.0, f64::max),
        Value::Object(o) => o.values().map(max_abs).fold(0.0, f64::max),
        _ => 0.0,
    }
}

#[test]
fn flat_lagrangian_report_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_value(dir.path(), "geom", &load("flat_lagrangian.json"), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for i in 0..2 {
        let rep = json_file(&r.out.join(format!("geometry_{i:03}.json")));
        for key in ["N", "Omega", "Gamma", "Torsion", "Curvature", "Ricci"] {
            assert_eq!(max_abs(&rep[key]), 0.0, "{key}");
        }
    }
}

#[test]
fn flat_metric_with_constant_potential_has_zero_n() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("em_constant_b.json");
    cfg["space"]["potential"] = json!([0.7, -1.3]);
    let r = run_value(dir.path(), "geom", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = json_file(&r.out.join("geometry_000.json"));
    assert_eq!(max_abs(&rep["N"]), 0.0);
}

#[test]
fn constant_magnetic_field_gives_the_rotation_connection() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_value(dir.path(), "geom", &load("em_constant_b.json"), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = json_file(&r.out.join("geometry_000.json"));
    // A = (−x2, x1), e0 = 2, m0 = 1: F_12 = (e0/4)(∂_2 A_1 − ∂_1 A_2) = −1,
    // F^1_2 = F_21 = 1 and N^1_2 = −F^1_2
    let n = &rep["N"];
    assert!((n[0][1].as_f64().unwrap() + 1.0).abs() < 1e-14);
    assert!((n[1][0].as_f64().unwrap() - 1.0).abs() < 1e-14);
}

#[test]
fn invalid_level_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("flow_mkdv.json");
    cfg["flow"]["level"] = json!(5);
    let r = run_value(dir.path(), "flow", &cfg, &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("flow.level"), "{}", r.stderr);
    assert!(!r.out.exists());
}

#[test]
fn config_errors_report_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (json!({"flow": {"level": "one"}}), "flow.level"),
        (json!({"space": {"kind": "flat_lift", "n": 2}}), "space.g_base"),
        (json!({"space": {"kind": "lagrangian_expr", "n": 2, "lagrangian": "y1^2", "g_base": [[1]]}}), "space.g_base"),
        (json!({"space": {"kind": "lagrangian_expr", "n": 2, "lagrangian": "m0*y1^2"},
                "geometry": {"points": [{"x": [0, 0], "y": [1, 1]}, {"x": [0, 0], "y": [1, 2]}]}}), "space.lagrangian"),
        (json!({"space": {"kind": "lagrangian_expr", "n": 2, "lagrangian": "y1^2"},
                "geometry": {"points": [{"x": [0], "y": [1, 1]}]}}), "geometry.points[0].x"),
        (json!({"space": {"kind": "lagrangian_expr", "n": 2, "lagrangian": "y1^2"}, "bogus": 1}), "bogus"),
    ];
    for (cfg, path) in cases {
        let r = run_value(dir.path(), "check-constant", &cfg, &[]);
        assert_eq!(r.code, 2, "{cfg}: {}", r.stderr);
        assert!(r.stderr.contains(path), "{path}: {}", r.stderr);
    }
    let mut cfg = load("flow_mkdv.json");
    cfg["flow"]["n_pts"] = json!(100);
    let r = run_value(dir.path(), "flow", &cfg, &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("flow.n_pts"));
    let mut cfg = load("flow_mkdv.json");
    cfg["flow"]["initial"] = json!(["1", "2"]);
    let r = run_value(dir.path(), "flow", &cfg, &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("flow.initial"));
}

#[test]
fn check_constant_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_value(dir.path(), "check-constant", &load("flat_lift.json"), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = json_file(&r.out.join("constant_curvature.json"));
    assert_eq!(rep["constant"], json!(true));
    assert_eq!(rep["samples"].as_array().unwrap().len(), 16);

    let mut generic = load("curved_lagrangian.json");
    generic["geometry"] = json!({"points": [{"x": [0.1, 0.2], "y": [1.0, 0.5]}, {"x": [0.8, -0.5], "y": [0.3, 1.0]}]});
    let r = run_value(dir.path(), "check-constant", &generic, &[]);
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert_eq!(json_file(&r.out.join("constant_curvature.json"))["constant"], json!(false));

    let mut one = load("flat_lift.json");
    one["geometry"]["sampling"]["count"] = json!(1);
    let r = run_value(dir.path(), "check-constant", &one, &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("geometry.sampling.count"));
}

#[test]
fn degenerate_lagrangian_is_a_geometry_error_naming_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "space": {"kind": "lagrangian_expr", "n": 2, "lagrangian": "y1^4 + y2^2"},
        "geometry": {"points": [{"x": [0, 0], "y": [1, 1]}, {"x": [0, 0], "y": [0, 1]}]}
    });
    let r = run_value(dir.path(), "geom", &cfg, &[]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("sample 1"), "{}", r.stderr);
    let r = run_value(dir.path(), "check-constant", &cfg, &[]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("sample 1"), "{}", r.stderr);
}

#[test]
fn level_zero_flow_translates_the_initial_field() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_value(dir.path(), "flow", &load("flow_translation.json"), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (header, rows) = read_csv(&r.out.join("snapshot_00001.csv"));
    assert_eq!(header, ["l", "v_1", "v_2"]);
    let tau = 1.0;
    let worst = rows
        .iter()
        .map(|row| {
            let s = row[0] + tau;
            let e1 = (row[1] - (s.sin() + 0.3 * (2.0 * s).cos())).abs();
            let e2 = (row[2] - 0.5 * (3.0 * s).cos()).abs();
            e1.max(e2)
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-8, "{worst}");
    assert!(!r.out.join("flow.json").exists());
}

#[test]
fn mkdv_flow_conserves_h0_and_h1() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_value(dir.path(), "flow", &load("flow_mkdv.json"), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (header, rows) = read_csv(&r.out.join("diagnostics.csv"));
    assert_eq!(
        header,
        ["tau", "H0", "H1", "H2_printed", "H2_periodic", "mass_projection", "H2_squared"]
    );
    let taus: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(taus, [0.0, 0.25, 0.5, 0.75, 1.0]);
    let (first, last) = (&rows[0], rows.last().unwrap());
    for c in [1, 2, 6] {
        assert!(((last[c] - first[c]) / first[c]).abs() < 1e-6, "column {}", header[c]);
    }
    let run = json_file(&r.out.join("run.json"));
    assert_eq!(run["integrator"], json!("rk4"));
    assert_eq!(run["dt_rule"], json!("auto"));
}

#[test]
fn sine_gordon_flow_reports_constraint_columns() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_value(dir.path(), "flow", &load("flow_sine_gordon.json"), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (header, rows) = read_csv(&r.out.join("diagnostics.csv"));
    assert_eq!(header[7], "constraint_residual");
    assert_eq!(header[8], "closure_mismatch");
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r[7] < 1e-6));
}

#[test]
fn curvature_from_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_value(dir.path(), "flow", &load("flow_flat_lift_from_geometry.json"), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let run = json_file(&r.out.join("run.json"));
    assert_eq!(run["r_const"].as_f64().unwrap().abs(), 0.0);
    assert!(r.out.join("constant_curvature.json").exists());

    let mut curved = load("flow_flat_lift_from_geometry.json");
    curved["space"] = json!({"kind": "lagrangian_expr", "n": 3,
        "lagrangian": "y1^2 + exp(2*x1*x2)*y2^2 + y3^2"});
    let r = run_value(dir.path(), "flow", &curved, &[]);
    assert_eq!(r.code, 4, "{}", r.stderr);
}

#[test]
fn divergence_exits_5_with_the_last_finite_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("flow_mkdv.json");
    cfg["flow"]["dt"] = json!(0.05);
    let r = run_value(dir.path(), "flow", &cfg, &[]);
    assert_eq!(r.code, 5, "{}", r.stderr);
    let manifest = json_file(&r.out.join("manifest.json"));
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    let last = files.iter().filter(|f| f.starts_with("snapshot_")).max().unwrap();
    let (_, rows) = read_csv(&r.out.join(last));
    assert!(rows.iter().flatten().all(|x| x.is_finite()));
    assert_eq!(json_file(&r.out.join("run.json"))["status"], json!("diverged"));
    assert_eq!(manifest["exit_code"], json!(5));
}

#[test]
fn identity_check_passes_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_value(dir.path(), "identity-check", &load("identities.json"), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = json_file(&r.out.join("identities.json"));
    assert_eq!(rep["pass"], json!(true));
    assert_eq!(rep["identities"].as_array().unwrap().len(), 6);
}

#[test]
fn identity_check_fails_on_a_coarse_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("identities.json");
    cfg["flow"]["n_pts"] = json!(16);
    let r = run_value(dir.path(), "identity-check", &cfg, &[]);
    assert_eq!(r.code, 4);
    assert!(r.stderr.contains("identity `recursion` failed"), "{}", r.stderr);
}

#[test]
fn identity_check_scalar_case_notes_trivial_wedges() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("identities.json");
    cfg["flow"]["p"] = json!(1);
    cfg["flow"]["initial"] = json!(["0"]);
    let r = run_value(dir.path(), "identity-check", &cfg, &["--seed", "5"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = json_file(&r.out.join("identities.json"));
    assert_eq!(rep["seed"], json!(5));
    let notes: Vec<&str> = rep["identities"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|i| i["note"].as_str())
        .collect();
    assert!(notes.iter().filter(|n| n.contains("vanish identically")).count() >= 2);
}

#[test]
fn tolerance_override_applies() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_value(dir.path(), "identity-check", &load("identities.json"), &["--tol", "1e-30"]);
    assert_eq!(r.code, 4);
    let r = run_value(dir.path(), "check-constant", &load("flat_lift.json"), &["--tol", "1e-300"]);
    let rep = json_file(&r.out.join("constant_curvature.json"));
    assert_eq!(rep["tol"], json!(1e-300));
}

#[test]
fn outputs_are_deterministic_and_verifiable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for cfg in ["flow_sine_gordon.json", "flat_lift.json"] {
        let sub = if cfg.starts_with("flow") { "flow" } else { "geom" };
        let ra = run_value(a.path(), sub, &load(cfg), &[]);
        let rb = run_value(b.path(), sub, &load(cfg), &[]);
        assert_eq!(ra.code, 0);
        let ma = json_file(&ra.out.join("manifest.json"));
        let mb = json_file(&rb.out.join("manifest.json"));
        assert_eq!(ma["files"], mb["files"]);
        for f in ma["files"].as_array().unwrap() {
            let p = f["path"].as_str().unwrap();
            let bytes = std::fs::read(ra.out.join(p)).unwrap();
            assert_eq!(bytes, std::fs::read(rb.out.join(p)).unwrap(), "{p}");
            assert_eq!(bytes.len() as u64, f["bytes"].as_u64().unwrap());
            assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
        }
        let v = run_value(a.path(), sub, &load(cfg), &["--verify"]);
        assert_eq!(v.code, 0, "{}", v.stderr);
    }
    // tamper with one file: verify fails and names it
    let out = a.path().join("out");
    std::fs::write(out.join("geometry_003.json"), b"{}").unwrap();
    let v = run_value(a.path(), "geom", &load("flat_lift.json"), &["--verify"]);
    assert_eq!(v.code, 4);
    assert!(v.stderr.contains("geometry_003.json"), "{}", v.stderr);
}

#[test]
fn seed_override_changes_sampled_points() {
    let a = tempfile::tempdir().unwrap();
    let r1 = run_value(a.path(), "geom", &load("flat_lift.json"), &[]);
    let p1 = json_file(&r1.out.join("geometry_000.json"))["point"].clone();
    let r2 = run_value(a.path(), "geom", &load("flat_lift.json"), &["--seed", "99"]);
    let p2 = json_file(&r2.out.join("geometry_000.json"))["point"].clone();
    assert_ne!(p1, p2);
    assert_eq!(json_file(&r2.out.join("manifest.json"))["seed_override"], json!(99));
}

#[test]
fn missing_config_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_nonhol")).args(["geom", "--config", "/nonexistent.json"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_nonhol")).args(["geom"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
