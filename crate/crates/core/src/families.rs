//! Constructors for the concrete problem families: plain two- and three-marginal
//! transport, one- and two-period martingale transport, entropic geodesics and
//! barycenters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::problem::{ConstraintBasis, CostPath, DiscreteMarginal, Family, Problem, SparseVector, WeightPath};

/// Evaluates `f` on every grid cell, in row-major order.
pub fn cost_table<F>(marginals: &[DiscreteMarginal], f: F) -> Vec<f64>
where
    F: Fn(&[&[f64]]) -> f64,
{
    let sizes: Vec<usize> = marginals.iter().map(DiscreteMarginal::len).collect();
    let m: usize = sizes.iter().product();
    let mut out = Vec::with_capacity(m);
    let mut index = vec![0usize; sizes.len()];
    let mut points: Vec<&[f64]> = marginals.iter().map(|mu| mu.point(0)).collect();
    for _ in 0..m {
        out.push(f(&points));
        for axis in (0..sizes.len()).rev() {
            index[axis] += 1;
            if index[axis] < sizes[axis] {
                points[axis] = marginals[axis].point(index[axis]);
                break;
            }
            index[axis] = 0;
            points[axis] = marginals[axis].point(0);
        }
    }
    out
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// `-log(0.1 + |x - y|)`.
pub fn repulsive(a: &[f64], b: &[f64]) -> f64 {
    -(0.1 + distance(a, b)).ln()
}

/// Built-in cost functions, addressed by name from problem files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// `|x - y|²`, summed over all pairs of marginals.
    SquaredDistance,
    /// `-log(0.1 + |x - y|)`, summed over all pairs of marginals.
    Repulsive,
    /// `e^{-x} y²` for two marginals, `e^{-x}(y² + z²)` for three.
    SpenceMirrlees,
}

impl CostKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "squared_distance" | "attractive" | "quadratic" => Some(Self::SquaredDistance),
            "repulsive" | "pairwise_repulsive" => Some(Self::Repulsive),
            "spence_mirrlees" => Some(Self::SpenceMirrlees),
            _ => None,
        }
    }

    pub fn table(self, marginals: &[DiscreteMarginal]) -> Result<Vec<f64>> {
        Ok(match self {
            Self::SquaredDistance => cost_table(marginals, |p| pairwise(p, squared_distance)),
            Self::Repulsive => cost_table(marginals, |p| pairwise(p, repulsive)),
            Self::SpenceMirrlees => {
                if marginals.iter().any(|m| m.dim() != 1) || !(2..=3).contains(&marginals.len()) {
                    return Err(Error::Unsupported(
                        "the e^{-x}y² cost needs two or three scalar marginals".into(),
                    ));
                }
                cost_table(marginals, |p| (-p[0][0]).exp() * p[1..].iter().map(|q| q[0] * q[0]).sum::<f64>())
            }
        })
    }
}

fn pairwise(points: &[&[f64]], f: fn(&[f64], &[f64]) -> f64) -> f64 {
    let mut total = 0.0;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            total += f(points[i], points[j]);
        }
    }
    total
}

fn check_cost_len(cost: &[f64], marginals: &[DiscreteMarginal]) -> Result<()> {
    let m: usize = marginals.iter().map(DiscreteMarginal::len).product();
    if cost.len() == m {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: m,
            got: cost.len(),
        })
    }
}

/// Unconstrained two-marginal transport with cost path `ε·c`.
pub fn make_two_marginal(mu: DiscreteMarginal, nu: DiscreteMarginal, cost: Vec<f64>, eta: f64) -> Result<Problem> {
    let marginals = vec![mu, nu];
    check_cost_len(&cost, &marginals)?;
    let m = cost.len();
    Problem::new(marginals, vec![false; 2], CostPath::scaled(cost), ConstraintBasis::empty(m), eta)?
        .with_family(Family::TwoMarginal)
}

/// Unconstrained three-marginal transport with cost path `ε·c`.
pub fn make_three_marginal(marginals: [DiscreteMarginal; 3], cost: Vec<f64>, eta: f64) -> Result<Problem> {
    let marginals = marginals.to_vec();
    check_cost_len(&cost, &marginals)?;
    let m = cost.len();
    Problem::new(marginals, vec![false; 3], CostPath::scaled(cost), ConstraintBasis::empty(m), eta)?
        .with_family(Family::ThreeMarginal)
}

/// Whether `mu ⪯ nu` in convex order, for one-dimensional discrete measures.
///
/// Equal means (to 1e-10) and `E_μ[(X - k)₊] ≤ E_ν[(Y - k)₊] + 1e-12` at every
/// support point `k` of either measure.
pub fn check_convex_order(mu: &DiscreteMarginal, nu: &DiscreteMarginal) -> Result<bool> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::Unsupported("convex-order check unsupported in d>1".into()));
    }
    if (mu.mean()[0] - nu.mean()[0]).abs() > 1e-10 {
        return Ok(false);
    }
    let call = |m: &DiscreteMarginal, k: f64| -> f64 {
        m.scalars().iter().zip(m.weights()).map(|(x, w)| w * (x - k).max(0.0)).sum()
    };
    let strikes = mu.scalars().into_iter().chain(nu.scalars());
    for k in strikes {
        if call(mu, k) > call(nu, k) + 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Columns `g_i(x)(y - x)` of the one-period martingale constraint, one per `x_i`.
pub fn martingale_basis(x: &DiscreteMarginal, y: &DiscreteMarginal) -> ConstraintBasis {
    let (xs, ys) = (x.scalars(), y.scalars());
    let k = ys.len();
    let vectors = xs
        .iter()
        .enumerate()
        .map(|(i, xi)| SparseVector {
            indices: (i * k..(i + 1) * k).collect(),
            values: ys.iter().map(|y| y - xi).collect(),
        })
        .collect();
    let labels = xs.iter().map(|xi| format!("martingale g at x={xi}")).collect();
    ConstraintBasis::from_sparse(xs.len() * k, vectors, labels).expect("indices are in range by construction")
}

/// Columns `g_i(x)(y - x)` then `h_ij(x, y)(z - y)` of the two-period martingale constraint.
pub fn multi_period_basis(x: &DiscreteMarginal, y: &DiscreteMarginal, z: &DiscreteMarginal) -> ConstraintBasis {
    let (xs, ys, zs) = (x.scalars(), y.scalars(), z.scalars());
    let (n2, n3) = (ys.len(), zs.len());
    let block = n2 * n3;
    let mut vectors = Vec::with_capacity(xs.len() * (1 + n2));
    let mut labels = Vec::with_capacity(vectors.capacity());
    for (i, xi) in xs.iter().enumerate() {
        let indices: Vec<usize> = (i * block..(i + 1) * block).collect();
        let values = indices.iter().map(|l| ys[(l % block) / n3] - xi).collect();
        vectors.push(SparseVector { indices, values });
        labels.push(format!("martingale g at x={xi}"));
    }
    for (i, xi) in xs.iter().enumerate() {
        for (j, yj) in ys.iter().enumerate() {
            let start = i * block + j * n3;
            vectors.push(SparseVector {
                indices: (start..start + n3).collect(),
                values: zs.iter().map(|z| z - yj).collect(),
            });
            labels.push(format!("martingale h at x={xi}, y={yj}"));
        }
    }
    ConstraintBasis::from_sparse(xs.len() * block, vectors, labels).expect("indices are in range by construction")
}

fn require_convex_order(mu: &DiscreteMarginal, nu: &DiscreteMarginal) -> Result<()> {
    if check_convex_order(mu, nu)? {
        Ok(())
    } else {
        Err(Error::Infeasible("μ not dominated in convex order".into()))
    }
}

/// One-period martingale transport `E[Y | X] = X` with cost path `ε·c`.
pub fn make_martingale(mu: DiscreteMarginal, nu: DiscreteMarginal, cost: Vec<f64>, eta: f64) -> Result<Problem> {
    require_convex_order(&mu, &nu)?;
    let basis = martingale_basis(&mu, &nu);
    let marginals = vec![mu, nu];
    check_cost_len(&cost, &marginals)?;
    Problem::new(marginals, vec![false; 2], CostPath::scaled(cost), basis, eta)?.with_family(Family::Martingale)
}

/// Two-period martingale transport `E[Y | X] = X`, `E[Z | X, Y] = Y`.
pub fn make_multi_period(
    mu: DiscreteMarginal,
    theta: DiscreteMarginal,
    nu: DiscreteMarginal,
    cost: Vec<f64>,
    eta: f64,
) -> Result<Problem> {
    require_convex_order(&mu, &theta)?;
    require_convex_order(&theta, &nu)?;
    let basis = multi_period_basis(&mu, &theta, &nu);
    let marginals = vec![mu, theta, nu];
    check_cost_len(&cost, &marginals)?;
    Problem::new(marginals, vec![false; 3], CostPath::scaled(cost), basis, eta)?
        .with_family(Family::MultiPeriodMartingale)
}

/// Entropic interpolation between `mu1` and `mu2` on the free grid `grid_z`.
///
/// The grid is `X¹ × Z × X²` with cost path `(1 - ε)|x¹ - z|² + ε|z - x²|²`.
pub fn make_geodesic(mu1: DiscreteMarginal, mu2: DiscreteMarginal, grid_z: Vec<Vec<f64>>, eta: f64) -> Result<Problem> {
    if grid_z.is_empty() {
        return Err(Error::InvalidMarginal("grid_z must be nonempty".into()));
    }
    let z = DiscreteMarginal::uniform(grid_z)?;
    let marginals = vec![mu1, z, mu2];
    let base = cost_table(&marginals, |p| squared_distance(p[0], p[1]));
    let end = cost_table(&marginals, |p| squared_distance(p[1], p[2]));
    let slope = end.iter().zip(&base).map(|(e, b)| e - b).collect();
    let m = base.len();
    Problem::new(
        marginals,
        vec![false, true, false],
        CostPath::affine(base, slope)?,
        ConstraintBasis::empty(m),
        eta,
    )?
    .with_family(Family::Geodesic)
}

/// `λ(ε) = (1 - ε, ε/(n-1), …, ε/(n-1))`, starting at the first marginal.
pub fn default_lambda_path(n: usize) -> WeightPath {
    let mut from = vec![0.0; n];
    from[0] = 1.0;
    let mut to = vec![1.0 / (n - 1).max(1) as f64; n];
    to[0] = if n == 1 { 1.0 } else { 0.0 };
    WeightPath::linear(from, to)
}

/// Barycenter of `marginals` with weights `λ(ε)` on the free grid `grid_z`.
///
/// The grid is `X¹ × … × Xⁿ × Z`; `λ(0)` must be the first vertex of the simplex.
pub fn make_barycenter(
    marginals: Vec<DiscreteMarginal>,
    grid_z: Vec<Vec<f64>>,
    lambda: WeightPath,
    eta: f64,
) -> Result<Problem> {
    let n = marginals.len();
    if n < 1 || lambda.arity() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: lambda.arity(),
        });
    }
    let samples: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    lambda.validate(&samples)?;
    let (start, _) = lambda.eval(0.0);
    if (start[0] - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidWeightPath {
            eps: 0.0,
            reason: "λ(0) must put all weight on the first marginal".into(),
        });
    }
    if grid_z.is_empty() {
        return Err(Error::InvalidMarginal("grid_z must be nonempty".into()));
    }
    let mut all = marginals;
    all.push(DiscreteMarginal::uniform(grid_z)?);
    let components: Vec<Vec<f64>> = (0..n)
        .map(|i| cost_table(&all, |p| squared_distance(p[i], p[n])))
        .collect();
    let m = components[0].len();
    let mut free = vec![false; n];
    free.push(true);
    Problem::new(all, free, CostPath::mixture(components, lambda)?, ConstraintBasis::empty(m), eta)?
        .with_family(Family::Barycenter)
}

/// A random unconstrained two-marginal instance with scalar supports in `[0, 1]`,
/// positive weights and a smooth random cost.
pub fn random_two_marginal<R: Rng>(rng: &mut R, n1: usize, n2: usize, eta: f64) -> Result<Problem> {
    let mu = random_marginal(rng, n1)?;
    let nu = random_marginal(rng, n2)?;
    let cost: Vec<f64> = (0..n1 * n2).map(|_| rng.gen_range(0.0..1.0)).collect();
    make_two_marginal(mu, nu, cost, eta)
}

/// Sorted distinct points in `[0, 1]` with weights bounded away from zero.
pub fn random_marginal<R: Rng>(rng: &mut R, n: usize) -> Result<DiscreteMarginal> {
    let mut points: Vec<f64> = (0..n).map(|i| (i as f64 + rng.gen_range(0.05..0.95)) / n as f64).collect();
    points.sort_by(f64::total_cmp);
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // push the rounding residue onto the largest weight so the sum is 1 to the last bit
    let residue = 1.0 - weights.iter().sum::<f64>();
    let big = (0..n).max_by(|a, b| weights[*a].total_cmp(&weights[*b])).unwrap_or(0);
    weights[big] += residue;
    DiscreteMarginal::from_scalars(&points, &weights)
}
