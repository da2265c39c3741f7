//! JSON problem files.
//!
//! ```json
//! {
//!   "marginals": [{ "points": [0.0, 0.5, 1.0], "weights": [0.2, 0.3, 0.5] },
//!                 { "grid": { "lo": 0, "hi": 1, "n": 4 } }],
//!   "cost": { "kind": "expr", "name": "squared_distance" },
//!   "constraints": { "kind": "none" },
//!   "eta": 0.01,
//!   "reference": { "value": 0.0, "entropy": 1.386 }
//! }
//! ```
//!
//! Points may be scalars or vectors; weights default to uniform. Table costs and
//! custom constraint vectors are flat over the row-major grid.

use std::path::Path;

use eot_ode::families::{
    default_lambda_path, make_barycenter, make_geodesic, make_martingale, make_multi_period, multi_period_basis,
    martingale_basis, CostKind,
};
use eot_ode::problem::{linspace, ConstraintBasis, CostPath, DiscreteMarginal};
use eot_ode::{Family, Problem};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub marginals: Vec<MarginalSpec>,
    pub cost: CostSpec,
    #[serde(default)]
    pub constraints: ConstraintSpec,
    pub eta: f64,
    /// Unregularized optimal value and entropy of an optimizer, for the bracket.
    #[serde(default)]
    pub reference: Option<Reference>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalSpec {
    #[serde(default)]
    pub points: Option<Vec<Point>>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub free: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Point {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// `c(ε) = base + ε·slope`, both flat over the grid.
    Table {
        #[serde(default)]
        base: Option<Vec<f64>>,
        slope: Vec<f64>,
    },
    /// A built-in cost scaled by `ε`.
    Expr { name: String },
    /// `(1 - ε)|x¹ - z|² + ε|z - x²|²` on marginals `[μ¹, z (free), μ²]`.
    Geodesic,
    /// `Σ λᵢ(ε)|xⁱ - z|²` on marginals `[μ¹, …, μⁿ, z (free)]` with the default path.
    Barycenter,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    #[default]
    None,
    Martingale,
    MultiPeriodMartingale,
    Custom {
        vectors: Vec<Vec<f64>>,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub value: f64,
    pub entropy: f64,
}

impl Reference {
    /// `[value, value + η·entropy]`.
    pub fn bracket(&self, eta: f64) -> (f64, f64) {
        (self.value, self.value + eta * self.entropy)
    }
}

/// Parse failures, with the JSON path of the offending field.
#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Syntax {
        path: String,
        message: String,
        line: usize,
        column: usize,
    },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> SchemaError {
    SchemaError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

pub fn parse_str(text: &str) -> Result<ProblemSpec, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        SchemaError::Syntax {
            path: e.path().to_string(),
            message: inner.to_string(),
            line: inner.line(),
            column: inner.column(),
        }
    })
}

pub fn load(path: &Path) -> Result<ProblemSpec, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_str(&text)
}

impl MarginalSpec {
    fn build(&self, field: &str) -> Result<DiscreteMarginal, SchemaError> {
        let points: Vec<Vec<f64>> = match (&self.points, &self.grid) {
            (Some(points), None) => points
                .iter()
                .map(|p| match p {
                    Point::Scalar(v) => vec![*v],
                    Point::Vector(v) => v.clone(),
                })
                .collect(),
            (None, Some(g)) => linspace(g.lo, g.hi, g.n).into_iter().map(|v| vec![v]).collect(),
            _ => return Err(invalid(field, "give exactly one of `points` or `grid`")),
        };
        let result = match &self.weights {
            Some(w) => DiscreteMarginal::new(points, w.clone()),
            None => DiscreteMarginal::uniform(points),
        };
        result.map_err(|e| invalid(field, e))
    }
}

impl ProblemSpec {
    pub fn with_eta(mut self, eta: Option<f64>) -> Self {
        if let Some(eta) = eta {
            self.eta = eta;
        }
        self
    }

    /// Assembles the problem; family constructors validate family-specific structure.
    pub fn build(&self) -> Result<Problem, SchemaError> {
        let marginals = self
            .marginals
            .iter()
            .enumerate()
            .map(|(i, m)| m.build(&format!("marginals[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let free: Vec<bool> = self.marginals.iter().map(|m| m.free).collect();
        let m: usize = marginals.iter().map(DiscreteMarginal::len).product();
        let eta = self.eta;
        let to_schema = |field: &'static str| move |e: eot_ode::Error| invalid(field, e);

        match &self.cost {
            CostSpec::Geodesic => {
                if marginals.len() != 3 || free != [false, true, false] {
                    return Err(invalid("cost", "geodesic needs marginals [μ¹, z (free), μ²]"));
                }
                self.require_no_constraints()?;
                let [a, z, b]: [DiscreteMarginal; 3] = marginals.try_into().expect("length checked");
                return make_geodesic(a, b, z.points().to_vec(), eta).map_err(to_schema("cost"));
            }
            CostSpec::Barycenter => {
                let n = marginals.len();
                if n < 2 || !free[n - 1] || free[..n - 1].iter().any(|f| *f) {
                    return Err(invalid("cost", "barycenter needs constrained marginals followed by a free z grid"));
                }
                self.require_no_constraints()?;
                let mut marginals = marginals;
                let z = marginals.pop().expect("length checked");
                let lambda = default_lambda_path(n - 1);
                return make_barycenter(marginals, z.points().to_vec(), lambda, eta).map_err(to_schema("cost"));
            }
            _ => {}
        }

        let cost = match &self.cost {
            CostSpec::Table { base, slope } => {
                check_len("cost.slope", slope.len(), m)?;
                match base {
                    Some(base) => {
                        check_len("cost.base", base.len(), m)?;
                        CostPath::affine(base.clone(), slope.clone()).map_err(to_schema("cost"))?
                    }
                    None => CostPath::scaled(slope.clone()),
                }
            }
            CostSpec::Expr { name } => {
                let kind = CostKind::parse(name).ok_or_else(|| invalid("cost.name", format!("unknown cost `{name}`")))?;
                CostPath::scaled(kind.table(&marginals).map_err(to_schema("cost"))?)
            }
            CostSpec::Geodesic | CostSpec::Barycenter => unreachable!(),
        };

        let any_free = free.iter().any(|f| *f);
        match &self.constraints {
            ConstraintSpec::Martingale | ConstraintSpec::MultiPeriodMartingale if any_free => {
                Err(invalid("constraints", "martingale families have no free marginals"))
            }
            ConstraintSpec::Martingale => {
                let [mu, nu]: [DiscreteMarginal; 2] = marginals
                    .try_into()
                    .map_err(|_| invalid("constraints", "martingale needs two marginals"))?;
                match scaled_slope(&cost) {
                    Some(c) => make_martingale(mu, nu, c, eta).map_err(to_schema("constraints")),
                    None => {
                        let basis = martingale_basis(&mu, &nu);
                        build_generic(vec![mu, nu], free, cost, basis, eta, Some(Family::Martingale))
                    }
                }
            }
            ConstraintSpec::MultiPeriodMartingale => {
                let [mu, theta, nu]: [DiscreteMarginal; 3] = marginals
                    .try_into()
                    .map_err(|_| invalid("constraints", "multi-period martingale needs three marginals"))?;
                match scaled_slope(&cost) {
                    Some(c) => make_multi_period(mu, theta, nu, c, eta).map_err(to_schema("constraints")),
                    None => {
                        let basis = multi_period_basis(&mu, &theta, &nu);
                        build_generic(vec![mu, theta, nu], free, cost, basis, eta, Some(Family::MultiPeriodMartingale))
                    }
                }
            }
            ConstraintSpec::Custom { vectors, labels } => {
                for (j, v) in vectors.iter().enumerate() {
                    check_len(&format!("constraints.vectors[{j}]"), v.len(), m)?;
                }
                let labels = labels
                    .clone()
                    .unwrap_or_else(|| (0..vectors.len()).map(|j| format!("q{j}")).collect());
                let basis = ConstraintBasis::from_dense(m, vectors, labels).map_err(to_schema("constraints"))?;
                build_generic(marginals, free, cost, basis, eta, None)
            }
            ConstraintSpec::None => {
                let family = match (marginals.len(), any_free) {
                    (2, false) => Some(Family::TwoMarginal),
                    (3, false) => Some(Family::ThreeMarginal),
                    _ => None,
                };
                build_generic(marginals, free, cost, ConstraintBasis::empty(m), eta, family)
            }
        }
    }

    fn require_no_constraints(&self) -> Result<(), SchemaError> {
        match self.constraints {
            ConstraintSpec::None => Ok(()),
            _ => Err(invalid("constraints", "free-marginal families take no extra constraints")),
        }
    }
}

/// The table `c` of a path `ε·c`; other paths skip the family constructors' checks.
fn scaled_slope(cost: &CostPath) -> Option<Vec<f64>> {
    if cost.vanishes_at_zero() {
        cost.affine_slope().map(<[f64]>::to_vec)
    } else {
        None
    }
}

fn check_len(field: &str, got: usize, expected: usize) -> Result<(), SchemaError> {
    if got == expected {
        Ok(())
    } else {
        Err(invalid(field, format!("expected {expected} entries (grid size), got {got}")))
    }
}

fn build_generic(
    marginals: Vec<DiscreteMarginal>,
    free: Vec<bool>,
    cost: CostPath,
    basis: ConstraintBasis,
    eta: f64,
    family: Option<Family>,
) -> Result<Problem, SchemaError> {
    let problem = Problem::new(marginals, free, cost, basis, eta).map_err(|e| invalid("problem", e))?;
    match family {
        Some(f) => problem.with_family(f).map_err(|e| invalid("problem", e)),
        None => Ok(problem),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_and_grid_marginals_parse() {
        let spec = parse_str(
            r#"{ "marginals": [{ "points": [0, 1], "weights": [0.25, 0.75] }, { "grid": { "lo": 0, "hi": 1, "n": 3 } }],
                 "cost": { "kind": "expr", "name": "quadratic" }, "eta": 0.5 }"#,
        )
        .unwrap();
        let p = spec.build().unwrap();
        assert_eq!(p.cells(), 6);
        assert_eq!(p.family(), Family::TwoMarginal);
        assert_eq!(p.cost().value(1.0)[2], 1.0);
    }

    #[test]
    fn unknown_field_reports_path_and_line() {
        let err = parse_str("{\n \"marginals\": [{ \"pionts\": [0] }], \"cost\": { \"kind\": \"expr\", \"name\": \"x\" }, \"eta\": 1 }")
            .unwrap_err();
        match err {
            SchemaError::Syntax { path, line, .. } => {
                assert!(path.starts_with("marginals[0]"), "{path}");
                assert_eq!(line, 2);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn table_length_is_checked() {
        let spec = parse_str(
            r#"{ "marginals": [{ "points": [0, 1] }, { "points": [0, 1] }],
                 "cost": { "kind": "table", "slope": [0, 1, 1] }, "eta": 0.5 }"#,
        )
        .unwrap();
        assert!(matches!(spec.build(), Err(SchemaError::Invalid { field, .. }) if field == "cost.slope"));
    }

    #[test]
    fn martingale_requires_convex_order() {
        let spec = parse_str(
            r#"{ "marginals": [{ "points": [-1, 1] }, { "points": [0] }],
                 "cost": { "kind": "expr", "name": "spence_mirrlees" },
                 "constraints": { "kind": "martingale" }, "eta": 0.5 }"#,
        )
        .unwrap();
        let err = spec.build().unwrap_err().to_string();
        assert!(err.contains("convex order"), "{err}");
    }

    #[test]
    fn geodesic_layout_is_checked() {
        let spec = parse_str(
            r#"{ "marginals": [{ "points": [0, 1] }, { "points": [0, 0.5, 1], "free": true }, { "points": [0.2, 0.8] }],
                 "cost": { "kind": "geodesic" }, "eta": 0.1 }"#,
        )
        .unwrap();
        assert_eq!(spec.build().unwrap().family(), Family::Geodesic);
    }
}
