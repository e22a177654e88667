use std::process::{Command, Output};

use serde_json::Value;

fn varode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varode"))
        .args(args)
        .env_remove("VARODE_SEED")
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn ok(args: &[&str]) -> Value {
    let out = varode(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    report(&out)
}

#[test]
fn el_examples() {
    let r = ok(&["el", "--lagrangian", "y3^(1/3)", "--n", "3"]);
    assert_eq!(r["rhs"], "5*y4*y5/y3 - (40/9)*y4^3/y3^2");
    assert_eq!(r["order"], 6);
    assert_eq!(r["weighted_degree"]["pass"], true);
    assert_eq!(ok(&["el", "--lagrangian", "y3^2", "--n", "3"])["rhs"], "0");
    assert_eq!(varode(&["el", "--lagrangian", "x*y3", "--n", "3"]).status.code(), Some(3));
    assert_eq!(varode(&["el", "--lagrangian", "y3^^2"]).status.code(), Some(2));
    assert_eq!(varode(&["el", "--ode", "y0", "--order", "6"]).status.code(), Some(2));
}

#[test]
fn classify_examples() {
    let r = ok(&["classify", "--lagrangian", "y3^2", "--n", "3"]);
    assert_eq!(r["verdict"], "maximally_symmetric");
    assert_eq!(r["expected_symmetry_dims"]["equation"], 10);
    let r = ok(&["classify", "--lagrangian", "y3^2 + y0^2", "--n", "3"]);
    assert_eq!(r["verdict"], "not_maximally_symmetric");
    let r = ok(&["classify", "--lagrangian", "y2^(1/3)", "--n", "2"]);
    assert_eq!(r["verdict"], "inconclusive");
    let notes = r["notes"].as_array().unwrap();
    assert!(notes.iter().any(|n| n.as_str().unwrap().contains("n = 2")));
    let r = ok(&["classify", "--ode", "0", "--order", "8"]);
    assert_eq!(r["verdict"], "maximally_symmetric");
}

#[test]
fn invariants_trivial_and_constant_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("w.csv");
    let r = ok(&["invariants", "--ode", "0", "--order", "6", "--csv", csv.to_str().unwrap()]);
    for k in 3..=6 {
        assert!(r["sup"][format!("W{k}")].as_f64().unwrap() < 1e-9);
    }
    assert_eq!(r["flat"], true);
    let body = std::fs::read_to_string(dir.path().join("w-0.csv")).unwrap();
    assert!(body.starts_with("x,W3,W4,W5,W6\n"));
    assert!(!body.contains('\r'));
    assert_eq!(body.lines().count(), 65);

    let r = ok(&["invariants", "--ode", "y0", "--order", "6", "--solutions", "1", "--csv", csv.to_str().unwrap()]);
    assert_eq!(r["odd_vanish"], true);
    assert_eq!(r["flat"], false);
    let body = std::fs::read_to_string(&csv).unwrap();
    for line in body.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[1].abs() < 1e-6 && cols[3].abs() < 1e-6);
        assert!((cols[4] - 30240.0).abs() < 1e-3, "{line}");
    }
}

#[test]
fn invariants_singular_start_is_an_integration_failure() {
    let out = varode(&["invariants", "--lagrangian", "y3^(1/3)", "--init", "0,0,0,0,0,0"]);
    assert_eq!(out.status.code(), Some(4));
    let r = report(&out);
    assert!(r["error"].as_str().unwrap().contains("singular"));
}

#[test]
fn geometry_of_flat_model() {
    let r = ok(&["geometry", "--lagrangian", "y3^2", "--n", "3"]);
    // Chart (x, y0..y3, z) has dimension 6.
    assert_eq!(r["growth"], serde_json::json!([2, 3, 5, 6]));
    assert_eq!(r["class"], 3);
    assert_eq!(r["omega"], serde_json::json!({"0,5": -2, "1,4": 2, "2,3": -2}));
    assert_eq!(r["z_symmetry"], true);
    assert_eq!(r["omega_checks"]["failures"], serde_json::json!([]));
    assert_eq!(r["anderson_thompson"]["pass"], true);
    assert!(r["jacobi_vs_lin_residual"].as_f64().unwrap() < 1e-5);
}

#[test]
fn geometry_of_curved_lagrangian() {
    let r = ok(&["geometry", "--lagrangian", "y3^2 + y0^2", "--n", "3", "--grid", "0:1:16"]);
    assert!(r["jacobi_vs_lin_residual"].as_f64().unwrap() < 1e-5);
    assert!(r["legendre_pushforward_residual"].as_f64().unwrap() < 1e-7);
    assert_eq!(varode(&["geometry", "--lagrangian", "y2*y3"]).status.code(), Some(3));
}

#[test]
fn geometry_partial_report_on_singular_start() {
    let out = varode(&["geometry", "--lagrangian", "y3^(1/3)", "--init", "0,0,0,0,0,0"]);
    assert_eq!(out.status.code(), Some(4));
    let r = report(&out);
    assert!(r["growth"].is_array());
    assert!(r["omega"].is_object());
    assert!(r.get("jacobi_vs_lin_residual").is_none());
    assert!(r["error"].is_string());
}

#[test]
fn syzygy_reports() {
    let r = ok(&["syzygy", "--lagrangian", "y3^4"]);
    assert_eq!(r["status"], "zero");
    let r = ok(&["syzygy", "--lagrangian", "y4^2 + y4^3"]);
    assert_eq!(r["n"], 4);
    assert_eq!(r["status"], "zero");
    assert_eq!(varode(&["syzygy", "--lagrangian", "y5^2"]).status.code(), Some(2));
}

#[test]
fn selfdual_separates_variational_from_generic() {
    let r = ok(&["selfdual", "--lagrangian", "y3^2 + y1*y3^3", "--solutions", "2"]);
    assert_eq!(r["selfdual"], true);
    assert_eq!(r["solutions"][0]["form"]["kind"], "skew");
    let r = ok(&["selfdual", "--ode", "y5", "--order", "6", "--solutions", "1"]);
    assert_eq!(r["selfdual"], false);
    assert!(r["solutions"][0]["form"].is_null());
}

#[test]
fn output_is_deterministic() {
    let args = ["classify", "--lagrangian", "y3^2 + y0^2", "--seed", "11", "--grid", "0:1:16"];
    let a = varode(&args);
    let b = varode(&args);
    assert_eq!(a.stdout, b.stdout);
    let env = Command::new(env!("CARGO_BIN_EXE_varode"))
        .args(["classify", "--lagrangian", "y3^2 + y0^2", "--grid", "0:1:16"])
        .env("VARODE_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(env.stdout, a.stdout);
}

#[test]
fn json_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("el.json");
    let out = varode(&["el", "--lagrangian", "y4^2", "--json", path.to_str().unwrap()]);
    let file = std::fs::read(&path).unwrap();
    assert_eq!(file, out.stdout);
}
