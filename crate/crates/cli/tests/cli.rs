use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn eot(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eot"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_input(dir: &TempDir, name: &str, json: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, json).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TABLE_ONE: &str = r#"{
  "marginals": [{ "grid": { "lo": 0, "hi": 1, "n": 100 } }, { "grid": { "lo": 0, "hi": 1, "n": 100 } }],
  "cost": { "kind": "expr", "name": "squared_distance" },
  "eta": 0.002,
  "reference": { "value": 0.0, "entropy": 4.605170185988092 }
}"#;

#[test]
fn compare_reproduces_the_quadratic_table() {
    let dir = TempDir::new().unwrap();
    let input = write_input(&dir, "table1.json", TABLE_ONE);
    let out = eot(&["compare", "--input", &input], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&dir.path().join("report.json"));
    let ode = report["ode"]["value"].as_f64().unwrap();
    let sinkhorn = report["sinkhorn"]["value"].as_f64().unwrap();
    assert!((ode - 0.0050).abs() <= 5e-4, "{ode}");
    assert!((sinkhorn - 0.0052).abs() <= 5e-4, "{sinkhorn}");
    assert_eq!(report["bracket"]["ode_inside"], Value::Bool(true));
    assert_eq!(report["bracket"]["sinkhorn_inside"], Value::Bool(true));
    assert!((report["bracket"]["upper"].as_f64().unwrap() - 0.0092).abs() < 1e-4);
    assert_eq!(report["family"], "two_marginal");
    let rows = fs::read_to_string(dir.path().join("curve.csv")).unwrap().lines().count();
    assert_eq!(rows, 102);
}

#[test]
fn curve_writes_the_requested_snapshots() {
    let dir = TempDir::new().unwrap();
    let out = eot(&["curve", "--steps", "30"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let snapshots = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("coupling_"))
        .count();
    assert_eq!(snapshots, 16);
    let header = fs::read_to_string(dir.path().join("coupling_0.csv")).unwrap();
    assert!(header.starts_with("flat_index,i0,i1,gamma\n"));
}

#[test]
fn derivs_agree_between_closed_form_and_differences() {
    let dir = TempDir::new().unwrap();
    let out = eot(&["derivs"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let d = read_json(&dir.path().join("derivs.json"));
    assert!(d["c_second_zero_rel_err"].as_f64().unwrap() <= 1e-3);
    assert!(d["sherman_morrison_gap"].as_f64().unwrap() <= 1e-10);
    assert_eq!(d["closed_form_zero"]["method"], "closed_form_zero");
    let closed = d["closed_form_zero"]["c_prime"].as_f64().unwrap();
    let along = d["along_curve"]["c_prime"].as_f64().unwrap();
    assert!((closed - along).abs() < 1e-9);
}

#[test]
fn schema_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let broken = write_input(&dir, "broken.json", "{ \"marginals\": [");
    let out = eot(&["solve-ode", "--input", &broken], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let unknown = write_input(
        &dir,
        "unknown.json",
        r#"{ "marginals": [{ "points": [0, 1], "wieghts": [0.5, 0.5] }, { "points": [0, 1] }],
             "cost": { "kind": "table", "slope": [0, 1, 1, 0] }, "eta": 0.1 }"#,
    );
    let out = eot(&["solve-ode", "--input", &unknown], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("marginals[0]"), "{}", stderr(&out));

    let out = eot(&["solve-ode", "--steps", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failures_exit_with_three() {
    // the only martingale coupling sits on the boundary, so no entropic solution exists
    let dir = TempDir::new().unwrap();
    let input = write_input(
        &dir,
        "boundary.json",
        r#"{ "marginals": [{ "points": [-0.5, 0.5] }, { "points": [-1, 0, 1], "weights": [0.25, 0.5, 0.25] }],
             "cost": { "kind": "table", "slope": [0.3, 0.1, 0.7, 0.2, 0.9, 0.4] },
             "constraints": { "kind": "martingale" }, "eta": 0.2 }"#,
    );
    let out = eot(&["solve-ode", "--input", &input], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("martingale"), "{}", stderr(&out));
}

#[test]
fn runs_are_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        let out = eot(&["solve-ode", "--seed", "11"], dir.path());
        assert!(out.status.success());
    }
    for name in ["curve.csv", "coupling_100.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn reported_value_matches_the_written_coupling() {
    let dir = TempDir::new().unwrap();
    let (mu, nu) = ([0.2, 0.3, 0.5], [0.6, 0.4]);
    let cost = [0.0, 1.0, 0.5, 0.25, 1.0, 0.0];
    let eta = 0.3;
    let input = write_input(
        &dir,
        "small.json",
        &format!(
            r#"{{ "marginals": [{{ "points": [0, 1, 2], "weights": {mu:?} }}, {{ "points": [0, 1], "weights": {nu:?} }}],
                 "cost": {{ "kind": "table", "slope": {cost:?} }}, "eta": {eta} }}"#
        ),
    );
    let out = eot(&["solve-sinkhorn", "--input", &input, "--tol", "1e-12"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("coupling_sinkhorn.csv")).unwrap();
    let mut value = 0.0;
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let (i, j): (usize, usize) = (fields[1].parse().unwrap(), fields[2].parse().unwrap());
        let g: f64 = fields[3].parse().unwrap();
        value += g * cost[i * 2 + j] + eta * g * (g / (mu[i] * nu[j])).ln();
    }
    let report = read_json(&dir.path().join("report.json"));
    let reported = report["sinkhorn"]["value"].as_f64().unwrap();
    assert!((value - reported).abs() <= 1e-10, "{value} vs {reported}");
}

#[test]
fn geodesic_writes_normalized_z_marginals() {
    let dir = TempDir::new().unwrap();
    let out = eot(&["geodesic", "--steps", "20", "--snapshots", "3"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("z_marginals.csv")).unwrap();
    let mut mass = [0.0; 3];
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let k: usize = fields[0].parse().unwrap();
        let slot = [0, 10, 20].iter().position(|s| *s == k).unwrap();
        mass[slot] += fields[4].parse::<f64>().unwrap();
    }
    for m in mass {
        assert!((m - 1.0).abs() < 1e-12);
    }

    let out = eot(&["barycenter", "--input", &write_input(&dir, "t.json", TABLE_ONE)], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
