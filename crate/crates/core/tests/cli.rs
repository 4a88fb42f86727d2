//! Binary-level checks: exit codes, stream separation, file round trips.
//!
//! Reports always go to stdout; stderr carries only error diagnostics, so
//! scripted callers can pipe reports without filtering.

use liefield::expr::{parse, ScalarExpr};
use liefield::fields::{FieldConfiguration, Grid, GridAxis};
use liefield::presets::{preset_by_name, PRESET_NAMES};
use liefield::specfile::{load_spec, save_field, save_spec, spec_to_string};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_liefield"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn presets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn temp_path(tag: &str) -> PathBuf {
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!("liefield-cli-{}-{n}-{tag}", std::process::id()))
}

#[test]
fn shipped_spec_files_match_presets() {
    let dir = presets_dir();
    for name in PRESET_NAMES {
        let model = preset_by_name(name).unwrap().model;
        let canonical = spec_to_string(&model).unwrap();
        let shipped = std::fs::read_to_string(dir.join(format!("{name}.json")))
            .unwrap_or_else(|e| panic!("missing shipped spec for {name}: {e}"));
        assert_eq!(shipped, canonical, "shipped spec for {name} is stale");
    }
}

#[test]
fn validate_exit_codes_and_stream_separation() {
    let so3 = presets_dir().join("so3.json");
    let so3 = so3.to_str().unwrap();
    let (code, out, err) = run(&["validate", so3]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("result: PASS"));
    assert!(err.is_empty(), "stderr carried payload: {err}");

    // A perturbed structure constant fails with the report still on stdout.
    let mut bad = load_spec(so3).unwrap();
    bad.fib.c_vert[0][1][2] = ScalarExpr::float(1.001);
    let bad_path = temp_path("bad-spec.json");
    save_spec(&bad, &bad_path).unwrap();
    let (code, out, err) = run(&["validate", bad_path.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(out.contains("result: FAIL"));
    assert!(out.contains("jacobi_max:"));
    assert!(err.is_empty(), "stderr carried payload: {err}");

    // Malformed input is a usage error: diagnostics on stderr, empty stdout.
    let broken = temp_path("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    let (code, out, err) = run(&["validate", broken.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(out.is_empty());
    assert!(!err.is_empty());

    let (code, _, err) = run(&["validate", "/nonexistent/nowhere.json"]);
    assert_eq!(code, 2);
    assert!(!err.is_empty());

    let _ = std::fs::remove_file(&bad_path);
    let _ = std::fs::remove_file(&broken);
}

#[test]
fn export_load_derive_round_trip() {
    let exported = temp_path("export.json");
    let (code, _, err) = run(&["preset", "export", "so3", exported.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let (code, first, err) = run(&["derive", exported.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(err.is_empty());

    // Loading and saving again is byte-stable, and so is the derivation.
    let model = load_spec(&exported).unwrap();
    let resaved = temp_path("resaved.json");
    save_spec(&model, &resaved).unwrap();
    assert_eq!(
        std::fs::read_to_string(&exported).unwrap(),
        std::fs::read_to_string(&resaved).unwrap()
    );
    let (code, second, _) = run(&["derive", resaved.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(first, second);

    let _ = std::fs::remove_file(&exported);
    let _ = std::fs::remove_file(&resaved);
}

#[test]
fn derive_binary_output_matches_golden() {
    let spec = presets_dir().join("standard-connection.json");
    let spec = spec.to_str().unwrap();
    let (code, out, err) = run(&["derive", spec]);
    assert_eq!(code, 0, "{err}");
    assert!(err.is_empty());
    assert_eq!(out, include_str!("golden/standard-connection.el.txt"));

    let (code, out, _) = run(&["derive", spec, "--format", "latex"]);
    assert_eq!(code, 0);
    assert!(out.contains("\\begin{align}"));
    assert!(out.contains("y^{1}_{1|1}"));

    // Requesting a side the model lacks is a check failure, not a usage error.
    let sigma = presets_dir().join("poisson-sigma.json");
    let (code, _, err) = run(&["derive", sigma.to_str().unwrap(), "--side", "hamilton"]);
    assert_eq!(code, 1);
    assert!(err.contains("hamiltonian"));
}

#[test]
fn residual_command_exit_codes_and_csv() {
    // A field that satisfies nothing: u^1 = x1 with a vanishing y block.
    let axis = GridAxis {
        min: 0.0,
        max: 1.0,
        count: 5,
    };
    let grid = Grid::new(vec![axis.clone(), axis]).unwrap();
    let n = grid.len();
    let mut u = vec![vec![0.0; n]; 2];
    for node in 0..n {
        u[0][node] = grid.coords(node)[0];
    }
    let field = FieldConfiguration {
        grid,
        u,
        y: Some(vec![vec![vec![0.0; n]; 2]; 2]),
        mu: None,
    };
    let field_path = temp_path("field.json");
    save_field(&field, &field_path).unwrap();
    let field_file = field_path.to_str().unwrap();
    let spec = presets_dir().join("poisson-sigma.json");
    let spec = spec.to_str().unwrap();

    // Default tolerance fails; a loose one passes.
    let (code, out, err) = run(&["residual", spec, field_file]);
    assert_eq!(code, 1, "{err}");
    assert!(out.contains("result: FAIL"));
    assert!(err.is_empty());
    let (code, out, _) = run(&["residual", spec, field_file, "--tol", "2"]);
    assert_eq!(code, 0);
    assert!(out.contains("result: PASS"));

    // JSON report parses and carries the verdict.
    let (code, out, _) = run(&["residual", spec, field_file, "--json"]);
    assert_eq!(code, 1);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["pass"], serde_json::Value::Bool(false));

    // Per-node CSV dump.
    let csv_path = temp_path("residuals.csv");
    let (code, _, _) = run(&[
        "residual",
        spec,
        field_file,
        "--tol",
        "2",
        "--csv",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.lines().count() > 1);
    assert!(csv.lines().next().unwrap().contains(','));

    // Field shape against the wrong model is a usage error.
    let so3 = presets_dir().join("so3.json");
    let (code, out, err) = run(&["residual", so3.to_str().unwrap(), field_file]);
    assert_eq!(code, 2);
    assert!(out.is_empty());
    assert!(!err.is_empty());

    let _ = std::fs::remove_file(&field_path);
    let _ = std::fs::remove_file(&csv_path);
}

#[test]
fn simulate_rejects_singular_hessian() {
    let mut model = load_spec(presets_dir().join("oscillator.json")).unwrap();
    model.lagrangian = Some(parse("y1_1").unwrap());
    model.name = "linear-density".into();
    let spec_path = temp_path("linear.json");
    save_spec(&model, &spec_path).unwrap();
    let (code, _, err) = run(&[
        "simulate",
        spec_path.to_str().unwrap(),
        "--t",
        "1",
        "--dt",
        "0.01",
    ]);
    assert_eq!(code, 1);
    assert!(err.to_lowercase().contains("singular"), "{err}");
    let _ = std::fs::remove_file(&spec_path);
}

#[test]
fn preset_list_and_json_validate() {
    let (code, out, err) = run(&["preset", "list"]);
    assert_eq!(code, 0);
    assert!(err.is_empty());
    for name in PRESET_NAMES {
        assert!(out.contains(name), "preset list misses {name}");
    }
    let so3 = presets_dir().join("so3.json");
    let (code, out, _) = run(&["validate", so3.to_str().unwrap(), "--json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["pass"], serde_json::Value::Bool(true));
}
