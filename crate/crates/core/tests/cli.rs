use std::path::Path;
use std::process::{Command, Output};

use amech::expr::parse_system;
use amech::presets;
use serde_json::Value;

fn amech(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amech")).args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name} in {header:?}"));
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn validate_preset_succeeds() {
    let out = amech(&["validate", "--preset", "so3_rigid_body"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert!(v["result"]["structure"]["r2"].as_f64().unwrap() < 1e-10);
    assert!(v["manifest"]["command"]["validate"].is_object());
}

#[test]
fn broken_jacobi_identity_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("broken.amech");
    // [e1,e2] = e3, [e2,e3] = e3, [e3,e1] = e2 violates the Jacobi identity.
    std::fs::write(&file, "system broken\nbase []\nfiber [e1, e2, e3]\nanchor zero\nbracket { [e1,e2] = e3; [e2,e3] = e3; [e3,e1] = e2 }\nlagrangian = 0.5*(e1^2 + e2^2 + e3^2)\n").unwrap();
    let out = amech(&["validate", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v = json_of(&out);
    let r2 = v["result"]["detail"]["structure"]["r2"].as_f64().unwrap();
    assert!(r2 > 0.5, "r2 = {r2}");
}

#[test]
fn malformed_file_reports_position_and_exits_with_parse_status() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.amech");
    std::fs::write(&file, "system bad\nbase [q]\nfiber [e1]\nanchor { e1 -> (1) }\nlagrangian = 0.5*e1^^2\n").unwrap();
    let out = amech(&["validate", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5"), "{err}");
    assert!(err.contains("column"), "{err}");
}

#[test]
fn singular_lagrangian_exits_with_singular_status() {
    let out = amech(&["simulate", "--preset", "capri_kobayashi", "--mode", "el", "--t1", "0.1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("constrain"));
}

#[test]
fn unknown_preset_and_unknown_init_are_rejected() {
    assert_eq!(amech(&["validate", "--preset", "nope"]).status.code(), Some(1));
    let out = amech(&["simulate", "--preset", "tq_pendulum", "--mode", "el", "--init", "zz=1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn martinet_pendulum_monitor_stays_small() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("m.csv");
    let out = amech(&["simulate", "--preset", "martinet", "--mode", "vakonomic", "--t1", "10", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&out_path).unwrap();
    let worst = column(&csv, "pendulum").iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(worst < 1e-4, "{worst}");
    assert!(dir.path().join("m.csv.manifest.json").exists());
}

#[test]
fn euler_lagrange_and_vakonomic_pipelines_agree_without_constraints() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("el.csv");
    let b = dir.path().join("vak.csv");
    for (mode, path) in [("el", &a), ("vakonomic", &b)] {
        let out = amech(&["simulate", "--preset", "tq_pendulum", "--mode", mode, "--t1", "5", "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ca, cb) = (std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
    for name in ["q", "e1"] {
        let err = column(&ca, name).iter().zip(column(&cb, name)).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(err < 1e-8, "{name}: {err}");
    }
}

#[test]
fn sode_mode_stays_on_the_second_order_set() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let out = amech(&["simulate", "--preset", "capri_kobayashi", "--mode", "sode", "--t1", "2", "--init", "x1=0.3", "e1=0.2", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&path).unwrap();
    for name in ["x1", "y1", "e1", "e2"] {
        let worst = column(&csv, name).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst < 1e-9, "{name}: {worst}");
    }
}

#[test]
fn constraint_reports() {
    let capri = amech(&["constrain", "--preset", "capri_kobayashi", "--side", "lagrangian"]);
    assert_eq!(capri.status.code(), Some(0), "{}", String::from_utf8_lossy(&capri.stderr));
    let v = json_of(&capri);
    assert_eq!(v["result"]["final_level"], 1);
    assert!(v["result"]["final_solve_residual"].as_f64().unwrap() < 1e-9);

    let ham = amech(&["constrain", "--preset", "capri_kobayashi", "--side", "hamiltonian"]);
    assert_eq!(json_of(&ham)["result"]["final_level"], 1);

    for side in ["lagrangian", "hamiltonian"] {
        let reg = amech(&["constrain", "--preset", "so3_rigid_body", "--side", side]);
        assert_eq!(reg.status.code(), Some(0));
        assert_eq!(json_of(&reg)["result"]["final_level"], 0, "{side}");
    }
}

#[test]
fn plate_ball_bracket() {
    let out = amech(&["bracket", "--preset", "plate_ball", "--F", "p3", "--G", "p4", "--at", "p5=2", "x1=0.3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_of(&out);
    assert_eq!(v["result"]["value"].as_f64().unwrap(), -2.0);
    assert_eq!(v["result"]["antisymmetry_residual"].as_f64().unwrap(), 0.0);
    assert!(v["result"]["jacobi_residual"].as_f64().unwrap().abs() < 1e-9);

    let same = amech(&["bracket", "--preset", "plate_ball", "--F", "x1*p3 + p5^2", "--G", "x1*p3 + p5^2", "--at", "p3=1", "p4=-0.5", "p5=0.7"]);
    assert_eq!(json_of(&same)["result"]["value"].as_f64().unwrap(), 0.0);
}

#[test]
fn exported_presets_reparse() {
    for id in presets::IDS {
        let out = amech(&["export-preset", id]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(parse_system(&text).unwrap(), presets::load(id).unwrap().spec, "{id}");
    }
}

#[test]
fn rerun_from_file_input_uses_the_recorded_text() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("osc.amech");
    std::fs::write(&file, "system osc\nbase [q]\nfiber [e1]\nanchor { e1 -> (1) }\nparams { k = 2 }\nlagrangian = 0.5*e1^2 - 0.5*k*q^2\n").unwrap();
    let out_path = dir.path().join("osc.csv");
    let out = amech(&["simulate", file.to_str().unwrap(), "--mode", "el", "--t1", "1", "--init", "q=1", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(&out_path).unwrap();
    let manifest = dir.path().join("osc.csv.manifest.json");
    let m = read_json(&manifest);
    assert_eq!(m["resolved"]["initial"]["q"], 1.0);
    assert_eq!(m["resolved"]["initial"]["e1"], 0.0);
    std::fs::remove_file(&file).unwrap();
    let again = dir.path().join("again.csv");
    let out = amech(&["rerun", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&again).unwrap(), first);
}

#[test]
fn rank_tolerance_comes_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_amech")).env("AMECH_TOL", "1e-6").args(["validate", "--preset", "tq_pendulum"]).output().unwrap();
    assert_eq!(json_of(&out)["result"]["regularity"]["tolerance"].as_f64().unwrap(), 1e-6);
}
