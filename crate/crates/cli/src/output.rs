use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use eot_ode::ode::SolutionCurve;
use eot_ode::Problem;
use serde::Serialize;

/// 17 significant digits, enough to round-trip an `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn curve_csv(curve: &SolutionCurve) -> String {
    let mut out = String::from("eps,dual_value,primal_value,grad_inf_norm,transport_cost\n");
    for s in &curve.samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            num(s.eps),
            num(s.dual_value),
            num(s.primal_value),
            num(s.grad_inf_norm),
            num(s.transport_cost)
        );
    }
    out
}

pub fn coupling_csv(problem: &Problem, gamma: &[f64]) -> String {
    let grid = problem.grid();
    let mut out = String::from("flat_index");
    for axis in 0..grid.arity() {
        let _ = write!(out, ",i{axis}");
    }
    out.push_str(",gamma\n");
    for (l, g) in gamma.iter().enumerate() {
        let _ = write!(out, "{l}");
        for i in grid.unflatten(l) {
            let _ = write!(out, ",{i}");
        }
        let _ = writeln!(out, ",{}", num(*g));
    }
    out
}

/// One row per snapshot and support point of the given axis.
pub fn marginal_csv(problem: &Problem, curve: &SolutionCurve, axis: usize) -> String {
    let mut out = String::from("sample,eps,index,point,mass\n");
    let points = problem.marginals()[axis].points();
    for (k, s) in curve.snapshots() {
        let gamma = s.coupling.as_ref().expect("snapshots carry couplings");
        for (i, mass) in problem.marginal_of(gamma, axis).iter().enumerate() {
            let point: Vec<String> = points[i].iter().map(|v| num(*v)).collect();
            let _ = writeln!(out, "{k},{},{i},{},{}", num(s.eps), point.join(";"), num(*mass));
        }
    }
    out
}

pub fn write(dir: &Path, name: &str, contents: &str) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    write(dir, name, &(text + "\n"))
}
