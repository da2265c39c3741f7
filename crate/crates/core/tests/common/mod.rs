#![allow(dead_code)]

use eot_ode::families::{
    cost_table, make_barycenter, make_geodesic, make_martingale, make_multi_period, make_three_marginal,
    make_two_marginal, random_marginal, default_lambda_path,
};
use eot_ode::problem::{build_system, linspace, DiscreteMarginal, Family};
use eot_ode::{DualModel, Problem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cost(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.gen_range(0.0..1.0)).collect()
}

pub fn two_marginal(rng: &mut ChaCha8Rng, n1: usize, n2: usize, eta: f64) -> Problem {
    let mu = random_marginal(rng, n1).unwrap();
    let nu = random_marginal(rng, n2).unwrap();
    let cost = random_cost(rng, n1 * n2);
    make_two_marginal(mu, nu, cost, eta).unwrap()
}

pub fn three_marginal(rng: &mut ChaCha8Rng, sizes: [usize; 3], eta: f64) -> Problem {
    let m = [
        random_marginal(rng, sizes[0]).unwrap(),
        random_marginal(rng, sizes[1]).unwrap(),
        random_marginal(rng, sizes[2]).unwrap(),
    ];
    let cost = random_cost(rng, sizes.iter().product());
    make_three_marginal(m, cost, eta).unwrap()
}

pub fn martingale(rng: &mut ChaCha8Rng, n1: usize, n2: usize, eta: f64) -> Problem {
    let mu = DiscreteMarginal::uniform_grid(-0.3, 0.3, n1).unwrap();
    let nu = DiscreteMarginal::uniform_grid(-1.0, 1.0, n2).unwrap();
    let cost = random_cost(rng, n1 * n2);
    make_martingale(mu, nu, cost, eta).unwrap()
}

pub fn multi_period(rng: &mut ChaCha8Rng, sizes: [usize; 3], eta: f64) -> Problem {
    let mu = DiscreteMarginal::uniform_grid(-0.1, 0.1, sizes[0]).unwrap();
    let theta = DiscreteMarginal::uniform_grid(-0.4, 0.4, sizes[1]).unwrap();
    let nu = DiscreteMarginal::uniform_grid(-1.0, 1.0, sizes[2]).unwrap();
    let cost = random_cost(rng, sizes.iter().product());
    make_multi_period(mu, theta, nu, cost, eta).unwrap()
}

pub fn geodesic(rng: &mut ChaCha8Rng, n: usize, nz: usize, eta: f64) -> Problem {
    let a = random_marginal(rng, n).unwrap();
    let b = random_marginal(rng, n + 1).unwrap();
    let z = (0..nz).map(|k| vec![k as f64 / (nz - 1) as f64]).collect();
    make_geodesic(a, b, z, eta).unwrap()
}

pub fn barycenter(rng: &mut ChaCha8Rng, n: usize, nz: usize, eta: f64) -> Problem {
    let ms = vec![
        random_marginal(rng, n).unwrap(),
        random_marginal(rng, n + 1).unwrap(),
        random_marginal(rng, n).unwrap(),
    ];
    let z = (0..nz).map(|k| vec![k as f64 / (nz - 1) as f64]).collect();
    make_barycenter(ms, z, default_lambda_path(3), eta).unwrap()
}

/// Geometric-looking two-marginal instance whose cost is a function of positions.
pub fn positional(rng: &mut ChaCha8Rng, n1: usize, n2: usize, eta: f64, f: fn(f64, f64) -> f64) -> Problem {
    let mu = random_marginal(rng, n1).unwrap();
    let nu = random_marginal(rng, n2).unwrap();
    let cost = cost_table(&[mu.clone(), nu.clone()], |p| f(p[0][0], p[1][0]));
    make_two_marginal(mu, nu, cost, eta).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Largest entry of `a - b` relative to the largest entry of `b` (floored).
pub fn rel(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(floor);
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn fd_gradient(model: &dyn DualModel, x: &[f64], eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + x[i].abs());
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (model.value(&up, eps).unwrap() - model.value(&down, eps).unwrap()) / (2.0 * h)
        })
        .collect()
}

pub fn fd_hessian(model: &dyn DualModel, x: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        let h = 1e-6 * (1.0 + x[j].abs());
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[j] += h;
        down[j] -= h;
        let gu = model.gradient(&up, eps).unwrap();
        let gd = model.gradient(&down, eps).unwrap();
        for i in 0..n {
            out[j * n + i] = (gu[i] - gd[i]) / (2.0 * h);
        }
    }
    out
}

pub fn fd_mixed(model: &dyn DualModel, x: &[f64], eps: f64) -> Vec<f64> {
    let h = 1e-6;
    let gu = model.gradient(x, eps + h).unwrap();
    let gd = model.gradient(x, eps - h).unwrap();
    gu.iter().zip(&gd).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

/// Total-variation distance between two couplings.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Discretized Gaussian bump on `n` uniform points of `[0, 1]`.
pub fn bump(n: usize, center: f64, width: f64) -> DiscreteMarginal {
    let x = linspace(0.0, 1.0, n);
    let w: Vec<f64> = x.iter().map(|v| (-(v - center).powi(2) / (2.0 * width * width)).exp()).collect();
    let total: f64 = w.iter().sum();
    DiscreteMarginal::from_scalars(&x, &w.iter().map(|v| v / total).collect::<Vec<_>>()).unwrap()
}

pub fn z_grid(n: usize) -> Vec<Vec<f64>> {
    linspace(0.0, 1.0, n).into_iter().map(|v| vec![v]).collect()
}

/// Relative errors of a model's derivatives against finite differences.
pub struct CalculusErrors {
    pub gradient: f64,
    pub hessian: f64,
    pub mixed: f64,
}

pub fn calculus_errors(model: &dyn DualModel, x: &[f64], eps: f64) -> CalculusErrors {
    let local = model.local(x, eps).unwrap();
    CalculusErrors {
        gradient: rel(&local.gradient, &fd_gradient(model, x, eps), 1e-3),
        hessian: rel(local.hessian.as_slice(), &fd_hessian(model, x, eps), 1e-3),
        mixed: rel(&local.mixed, &fd_mixed(model, x, eps), 1e-3),
    }
}

/// Unreduced columns that a kernel retains and eliminates.
fn kernel_columns(problem: &Problem) -> (Vec<usize>, Vec<usize>) {
    let sizes: Vec<usize> = problem.marginals().iter().map(|m| m.len()).collect();
    match problem.family() {
        Family::TwoMarginal => ((1..sizes[0]).collect(), (sizes[0]..sizes[0] + sizes[1]).collect()),
        Family::ThreeMarginal => {
            let (a, b) = (sizes[0], sizes[1]);
            let retained = (1..a).chain(a + 1..a + b).collect();
            (retained, (a + b..a + b + sizes[2]).collect())
        }
        Family::Martingale => {
            let (n, k) = (sizes[0], sizes[1]);
            let retained = (n + 1..n + k).chain(n + k + 1..n + k + n).collect();
            (retained, (0..n).collect())
        }
        Family::MultiPeriodMartingale => {
            let [n1, n2, n3] = [sizes[0], sizes[1], sizes[2]];
            let total = n1 + n2 + n3 + n1 + n1 * n2;
            let pinned = [n1, n1 + n2, n1 + n2 + n3, n1 + n2 + n3 + n1];
            let retained = (n1..total).filter(|c| !pinned.contains(c)).collect();
            (retained, (0..n1).collect())
        }
        Family::Geodesic | Family::Barycenter => {
            let kept = &problem.system().reduction().unwrap().kept;
            (kept[sizes[0]..].to_vec(), (0..sizes[0]).collect())
        }
        Family::Generic => unreachable!(),
    }
}

/// Relative errors of a kernel's Hessian and mixed gradient against the generic
/// unreduced ones contracted over the eliminated block by a Schur complement.
pub fn contraction_errors(problem: &Problem, model: &dyn DualModel, x: &[f64], eps: f64) -> (f64, f64) {
    let local = model.local(x, eps).unwrap();
    let gamma = model.coupling(x, eps).unwrap();

    let parent = build_system(problem.marginals(), problem.free(), problem.basis()).unwrap();
    let a = parent.rows().to_dense();
    let eta = problem.eta();
    let dc = problem.cost().derivative(eps);
    let h_full = a.transpose() * DMatrix::from_diagonal(&DVector::from_column_slice(&gamma)) * &a / eta;
    let weighted: Vec<f64> = gamma.iter().zip(&dc).map(|(g, c)| -g * c / eta).collect();
    let m_full = a.transpose() * DVector::from_column_slice(&weighted);

    let (keep, elim) = kernel_columns(problem);
    let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| h_full[(rows[i], cols[j])]);
    let h_rr = pick(&keep, &keep);
    let h_re = pick(&keep, &elim);
    let h_ee = pick(&elim, &elim);
    let solve = h_ee.cholesky().unwrap();
    let schur = &h_rr - &h_re * solve.solve(&h_re.transpose());
    let m_r = DVector::from_iterator(keep.len(), keep.iter().map(|&c| m_full[c]));
    let m_e = DVector::from_iterator(elim.len(), elim.iter().map(|&c| m_full[c]));
    let contracted = m_r - &h_re * solve.solve(&m_e);
    (
        rel(local.hessian.as_slice(), schur.as_slice(), 1e-300),
        rel(&local.mixed, contracted.as_slice(), 1e-300),
    )
}
