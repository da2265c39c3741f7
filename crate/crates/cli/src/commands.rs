use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use eot_ode::derivatives::{
    c_second_zero, report_along_curve, report_finite_difference, report_zero, sherman_morrison_direction,
    DerivativeReport,
};
use eot_ode::families::{make_barycenter, default_lambda_path, make_geodesic, random_two_marginal};
use eot_ode::kernels::TwoMarginalKernel;
use eot_ode::linalg::{inf_norm, SpdFactor};
use eot_ode::ode::{integrate, OdeConfig, SolutionCurve};
use eot_ode::problem::{linspace, DiscreteMarginal};
use eot_ode::sinkhorn::{sinkhorn_solve, SinkhornConfig, SinkhornResult};
use eot_ode::{DualModel, Family, Problem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::output::{coupling_csv, curve_csv, marginal_csv, write, write_json};
use crate::schema::{load, Reference, SchemaError};

#[derive(Debug, Parser)]
#[command(name = "eot", version, about = "Entropic optimal transport curves via the dual ODE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub config: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Integrate the ODE and report the endpoint.
    SolveOde,
    /// Solve at ε = eps-max with Sinkhorn.
    SolveSinkhorn,
    /// Integrate the ODE and export coupling snapshots.
    Curve,
    /// Derivatives of the optimal value C(ε).
    Derivs,
    /// ODE and Sinkhorn side by side, with the bracket when a reference is given.
    Compare,
    /// Entropic interpolant between two measures.
    Geodesic,
    /// Entropic barycenter path.
    Barycenter,
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Problem file (JSON); a built-in instance is used when omitted.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the file's η.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// RK4 steps; 25 for martingale families and 100 otherwise when omitted.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Sinkhorn stopping tolerance on ‖Aᵀγ - b‖∞.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// One Newton step after every this many RK4 steps.
    #[arg(long, global = true)]
    pub polish_every: Option<usize>,
    /// Newton-correct the ODE endpoint to this gradient norm.
    #[arg(long, global = true)]
    pub endpoint_tol: Option<f64>,
    #[arg(long, global = true, default_value_t = 16)]
    pub snapshots: usize,
    /// Seed for built-in random instances.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Integrate the generic objective instead of the family kernel.
    #[arg(long, global = true)]
    pub generic: bool,
    #[arg(long, global = true, default_value_t = 1.0)]
    pub eps_max: f64,
    /// Point at which `derivs` evaluates along the curve.
    #[arg(long, global = true, default_value_t = 0.0)]
    pub eps: f64,
    /// Finite-difference step for `derivs`.
    #[arg(long, global = true, default_value_t = 1e-2)]
    pub fd_step: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("solver failure ({family}): {source}")]
    Solver {
        family: &'static str,
        source: eot_ode::Error,
    },
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Schema(_) | Self::Usage(_) => 2,
            Self::Solver { .. } => 3,
            Self::Io(_) => 1,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct OdeReport {
    pub value: f64,
    pub transport_cost: f64,
    pub steps: usize,
    pub eps_max: f64,
    pub wall_ms: f64,
    pub grad_inf_norm: f64,
    pub model: &'static str,
    pub jittered_solves: usize,
}

#[derive(Debug, Serialize)]
pub struct SinkhornReport {
    pub value: f64,
    pub transport_cost: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Serialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
    pub ode_inside: Option<bool>,
    pub sinkhorn_inside: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub family: &'static str,
    pub eta: f64,
    pub cells: usize,
    pub dim: usize,
    pub ode: Option<OdeReport>,
    pub sinkhorn: Option<SinkhornReport>,
    pub bracket: Option<Bracket>,
}

#[derive(Debug, Serialize)]
pub struct DerivsOutput {
    pub family: &'static str,
    pub eta: f64,
    pub closed_form_zero: Option<DerivativeReport>,
    pub finite_difference: DerivativeReport,
    pub along_curve: DerivativeReport,
    /// `|closed form - finite difference| / |closed form|` for `C''(0)`.
    pub c_second_zero_rel_err: Option<f64>,
    /// Largest gap between the Sherman–Morrison and dense solves of `[-D²Φ]⁻¹∇∂εΦ` at 0.
    pub sherman_morrison_gap: Option<f64>,
}

struct Loaded {
    problem: Problem,
    reference: Option<Reference>,
}

fn solver(problem: &Problem) -> impl Fn(eot_ode::Error) -> CliError + '_ {
    move |source| CliError::Solver {
        family: problem.family().name(),
        source,
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), CliError> {
        if self.steps == Some(0) {
            return Err(CliError::Usage("--steps must be at least 1".into()));
        }
        if matches!(self.eta, Some(e) if !(e > 0.0 && e.is_finite())) {
            return Err(CliError::Usage("--eta must be positive".into()));
        }
        if !(self.eps_max > 0.0 && self.eps_max.is_finite()) {
            return Err(CliError::Usage("--eps-max must be positive".into()));
        }
        if matches!(self.tol, Some(t) if !(t > 0.0)) {
            return Err(CliError::Usage("--tol must be positive".into()));
        }
        Ok(())
    }

    fn load(&self, command: Command) -> Result<Loaded, CliError> {
        if let Some(path) = &self.input {
            let spec = load(path)?.with_eta(self.eta);
            if !(spec.eta > 0.0 && spec.eta.is_finite()) {
                return Err(CliError::Usage("η must be positive".into()));
            }
            return Ok(Loaded {
                problem: spec.build()?,
                reference: spec.reference,
            });
        }
        let problem = match command {
            Command::Geodesic => default_geodesic(self.eta.unwrap_or(0.01)),
            Command::Barycenter => default_barycenter(self.eta.unwrap_or(0.01)),
            _ => random_two_marginal(&mut ChaCha8Rng::seed_from_u64(self.seed), 5, 4, self.eta.unwrap_or(0.5)),
        }
        .map_err(|e| CliError::Usage(format!("built-in instance: {e}")))?;
        Ok(Loaded {
            problem,
            reference: None,
        })
    }

    fn ode_config(&self, problem: &Problem, snapshots: usize) -> OdeConfig {
        let default_steps = match problem.family() {
            Family::Martingale | Family::MultiPeriodMartingale => 25,
            _ => 100,
        };
        OdeConfig {
            steps: self.steps.unwrap_or(default_steps),
            eps_max: self.eps_max,
            snapshots,
            polish_every: self.polish_every,
            endpoint_tol: self.endpoint_tol,
            generic: self.generic,
            ..OdeConfig::default()
        }
    }
}

/// A uniform measure on `[0, 1]` and a two-bump mixture, 40 points each.
fn default_geodesic(eta: f64) -> eot_ode::Result<Problem> {
    let points = linspace(0.0, 1.0, 40);
    let bumps: Vec<f64> = points
        .iter()
        .map(|x| (-((x - 0.25) / 0.07).powi(2) / 2.0).exp() + (-((x - 0.75) / 0.07).powi(2) / 2.0).exp() + 1e-6)
        .collect();
    let total: f64 = bumps.iter().sum();
    let weights: Vec<f64> = bumps.iter().map(|w| w / total).collect();
    let mu1 = DiscreteMarginal::uniform_grid(0.0, 1.0, 40)?;
    let mu2 = DiscreteMarginal::from_scalars(&points, &weights)?;
    make_geodesic(mu1, mu2, points.iter().map(|x| vec![*x]).collect(), eta)
}

/// Three bumps at 0.2, 0.5 and 0.8 on a 20-point grid.
fn default_barycenter(eta: f64) -> eot_ode::Result<Problem> {
    let points = linspace(0.0, 1.0, 20);
    let bump = |c: f64| -> eot_ode::Result<DiscreteMarginal> {
        let raw: Vec<f64> = points.iter().map(|x| (-((x - c) / 0.08).powi(2) / 2.0).exp() + 1e-6).collect();
        let total: f64 = raw.iter().sum();
        DiscreteMarginal::from_scalars(&points, &raw.iter().map(|w| w / total).collect::<Vec<_>>())
    };
    let marginals = vec![bump(0.2)?, bump(0.5)?, bump(0.8)?];
    make_barycenter(marginals, points.iter().map(|x| vec![*x]).collect(), default_lambda_path(3), eta)
}

fn transport_cost(problem: &Problem, gamma: &[f64], eps: f64) -> f64 {
    problem.cost().value(eps).iter().zip(gamma).map(|(c, g)| c * g).sum()
}

fn run_ode(problem: &Problem, config: &OdeConfig) -> Result<SolutionCurve, CliError> {
    integrate(problem, config).map_err(solver(problem))
}

fn run_sinkhorn(problem: &Problem, config: &RunConfig) -> Result<(SinkhornResult, SinkhornReport, Vec<f64>), CliError> {
    let tol = config.tol.unwrap_or(1e-6);
    let start = Instant::now();
    let result = sinkhorn_solve(problem, config.eps_max, &SinkhornConfig::default().with_tol(tol), None)
        .map_err(solver(problem))?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let gamma = eot_ode::dual::recover_primal(problem, &result.potentials, config.eps_max).map_err(solver(problem))?;
    let report = SinkhornReport {
        value: problem.primal_value(&gamma, config.eps_max),
        transport_cost: transport_cost(problem, &gamma, config.eps_max),
        iterations: result.iterations,
        wall_ms,
        residual: result.residual,
        converged: result.converged,
    };
    Ok((result, report, gamma))
}

fn ode_report(curve: &SolutionCurve) -> OdeReport {
    let last = curve.last();
    OdeReport {
        value: last.primal_value,
        transport_cost: last.transport_cost,
        steps: curve.steps,
        eps_max: curve.eps_max,
        wall_ms: curve.wall_ms,
        grad_inf_norm: last.grad_inf_norm,
        model: curve.model,
        jittered_solves: curve.jittered_solves,
    }
}

fn report(problem: &Problem, reference: Option<Reference>, ode: Option<OdeReport>, sinkhorn: Option<SinkhornReport>) -> Report {
    let bracket = reference.map(|r| {
        let (lower, upper) = r.bracket(problem.eta());
        let inside = |v: f64| lower <= v && v <= upper;
        Bracket {
            lower,
            upper,
            ode_inside: ode.as_ref().map(|o| inside(o.value)),
            sinkhorn_inside: sinkhorn.as_ref().map(|s| inside(s.value)),
        }
    });
    Report {
        family: problem.family().name(),
        eta: problem.eta(),
        cells: problem.cells(),
        dim: problem.system().dim(),
        ode,
        sinkhorn,
        bracket,
    }
}

fn write_snapshots(out: &Path, problem: &Problem, curve: &SolutionCurve) -> std::io::Result<()> {
    for (k, s) in curve.snapshots() {
        let gamma = s.coupling.as_ref().expect("snapshots carry couplings");
        write(out, &format!("coupling_{k}.csv"), &coupling_csv(problem, gamma))?;
    }
    Ok(())
}

fn sherman_morrison_gap(problem: &Problem) -> eot_ode::Result<f64> {
    let fast = sherman_morrison_direction(problem)?;
    let kernel = TwoMarginalKernel::new(problem)?;
    let local = kernel.local(&vec![0.0; kernel.dim()], 0.0)?;
    let dense = SpdFactor::new(local.hessian)?.solve(&local.mixed);
    Ok(fast.iter().zip(&dense).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max))
}

fn derivs(problem: &Problem, config: &RunConfig) -> eot_ode::Result<DerivsOutput> {
    let tol = config.tol.unwrap_or(1e-11);
    let closed = report_zero(problem).ok();
    let finite_difference = report_finite_difference(problem, config.eps, config.fd_step, tol)?;
    let along_curve = report_along_curve(problem, config.eps, tol)?;
    let c_second_zero_rel_err = match (config.eps == 0.0, c_second_zero(problem)) {
        (true, Ok(exact)) => Some((exact - finite_difference.c_second).abs() / exact.abs().max(1e-300)),
        _ => None,
    };
    Ok(DerivsOutput {
        family: problem.family().name(),
        eta: problem.eta(),
        closed_form_zero: closed,
        finite_difference,
        along_curve,
        c_second_zero_rel_err,
        sherman_morrison_gap: sherman_morrison_gap(problem).ok(),
    })
}

/// Runs one subcommand, writing its files under `config.out`.
pub fn run(command: Command, config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let Loaded { problem, reference } = config.load(command)?;
    let out = &config.out;
    match command {
        Command::SolveOde => {
            let curve = run_ode(&problem, &config.ode_config(&problem, 1))?;
            write(out, "curve.csv", &curve_csv(&curve))?;
            write_snapshots(out, &problem, &curve)?;
            write_json(out, "report.json", &report(&problem, reference, Some(ode_report(&curve)), None))?;
        }
        Command::SolveSinkhorn => {
            let (_, sk, gamma) = run_sinkhorn(&problem, config)?;
            write(out, "coupling_sinkhorn.csv", &coupling_csv(&problem, &gamma))?;
            write_json(out, "report.json", &report(&problem, reference, None, Some(sk)))?;
        }
        Command::Curve => {
            let curve = run_ode(&problem, &config.ode_config(&problem, config.snapshots))?;
            write(out, "curve.csv", &curve_csv(&curve))?;
            write_snapshots(out, &problem, &curve)?;
        }
        Command::Compare => {
            let curve = run_ode(&problem, &config.ode_config(&problem, 0))?;
            let (_, sk, _) = run_sinkhorn(&problem, config)?;
            write(out, "curve.csv", &curve_csv(&curve))?;
            write_json(out, "report.json", &report(&problem, reference, Some(ode_report(&curve)), Some(sk)))?;
        }
        Command::Derivs => {
            let result = derivs(&problem, config).map_err(solver(&problem))?;
            write_json(out, "derivs.json", &result)?;
        }
        Command::Geodesic | Command::Barycenter => {
            let expected = if command == Command::Geodesic { Family::Geodesic } else { Family::Barycenter };
            if problem.family() != expected {
                return Err(CliError::Usage(format!(
                    "input describes a {} problem, not {}",
                    problem.family().name(),
                    expected.name()
                )));
            }
            let curve = run_ode(&problem, &config.ode_config(&problem, config.snapshots))?;
            let axis = problem.free().iter().position(|f| *f).expect("free-marginal family");
            write(out, "curve.csv", &curve_csv(&curve))?;
            write(out, "z_marginals.csv", &marginal_csv(&problem, &curve, axis))?;
            write_snapshots(out, &problem, &curve)?;
            let mass = curve
                .snapshots()
                .map(|(_, s)| (s.coupling.as_ref().unwrap().iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
            let residual = inf_norm(&[curve.last().grad_inf_norm, mass]);
            eprintln!("max |mass - 1| {mass:.2e}, final residual {residual:.2e}");
        }
    }
    Ok(())
}

pub fn main_with(cli: Cli) -> u8 {
    match run(cli.command, &cli.config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("eot: {e}");
            e.exit_code()
        }
    }
}
