//! Stochastic treatment-allocation policies.
//!
//! A [`PolicySpec`] describes a counterfactual policy `Q(a | X, N)`. Binding
//! it to one cluster (covariates, fitted propensities and the observed
//! treatment vector) yields a [`BoundPolicy`] that evaluates the joint
//! probability, its leave-one-out marginal, and the influence-function
//! term `φ_Q(A, X, N; a)` describing how `Q` moves with the observed-data
//! distribution.

mod delta;
mod product;
mod tpb;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use delta::{Delta, DeltaExpr};
pub use product::ProductPolicy;
pub use tpb::{min_admissible, poisson_binomial, TpbPolicy};

use crate::data::{ClusterObservation, TreatmentVector};
use crate::error::{Error, Result};

/// Floor applied to the admissible-set mass of the treated-proportion policy.
pub const TPB_MASS_FLOOR: f64 = 1e-6;

/// Which identification weight an estimand uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightKind {
    Mu,
    MuTreated,
    MuUntreated,
}

impl WeightKind {
    pub fn treatment(self) -> Option<u8> {
        match self {
            WeightKind::Mu => None,
            WeightKind::MuTreated => Some(1),
            WeightKind::MuUntreated => Some(0),
        }
    }
}

/// A counterfactual policy and its parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    /// Independent Bernoulli(α) treatment.
    TypeB { alpha: f64 },
    /// Odds of treatment multiplied by `δ(X, N)`.
    Cips { delta: Delta },
    /// Units with `X* = 1` get propensity `1 − λ + λπ`.
    Cms {
        lambda: f64,
        x_star: usize,
        x_star_name: String,
    },
    /// Observed joint distribution conditioned on treated share ≥ ρ.
    Tpb { rho: f64 },
}

impl PolicySpec {
    pub fn type_b(alpha: f64) -> Self {
        PolicySpec::TypeB { alpha }
    }

    pub fn cips(delta0: f64) -> Self {
        PolicySpec::Cips {
            delta: Delta::Constant(delta0),
        }
    }

    pub fn cips_varying(delta0: f64) -> Self {
        PolicySpec::Cips {
            delta: Delta::Varying(delta0),
        }
    }

    pub fn cms(lambda: f64, x_star: usize, x_star_name: impl Into<String>) -> Self {
        PolicySpec::Cms {
            lambda,
            x_star,
            x_star_name: x_star_name.into(),
        }
    }

    pub fn tpb(rho: f64) -> Self {
        PolicySpec::Tpb { rho }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::TypeB { .. } => "typeb",
            PolicySpec::Cips { .. } => "cips",
            PolicySpec::Cms { .. } => "cms",
            PolicySpec::Tpb { .. } => "tpb",
        }
    }

    /// The scalar that indexes this policy within its family.
    pub fn param(&self) -> f64 {
        match self {
            PolicySpec::TypeB { alpha } => *alpha,
            PolicySpec::Cips { delta } => delta.delta0(),
            PolicySpec::Cms { lambda, .. } => *lambda,
            PolicySpec::Tpb { rho } => *rho,
        }
    }

    /// Same family with its scalar parameter replaced.
    pub fn with_param(&self, value: f64) -> Self {
        match self {
            PolicySpec::TypeB { .. } => PolicySpec::TypeB { alpha: value },
            PolicySpec::Cips { delta } => PolicySpec::Cips {
                delta: match delta {
                    Delta::Constant(_) => Delta::Constant(value),
                    Delta::Varying(_) => Delta::Varying(value),
                    Delta::Expr(e) => {
                        let mut e = e.clone();
                        e.set_delta0(value);
                        Delta::Expr(e)
                    }
                },
            },
            PolicySpec::Cms {
                x_star, x_star_name, ..
            } => PolicySpec::Cms {
                lambda: value,
                x_star: *x_star,
                x_star_name: x_star_name.clone(),
            },
            PolicySpec::Tpb { .. } => PolicySpec::Tpb { rho: value },
        }
    }

    /// Check parameter ranges that do not depend on data.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(msg));
        match self {
            PolicySpec::TypeB { alpha } if !(*alpha > 0.0 && *alpha < 1.0) => {
                bad(format!("type B alpha must lie in (0, 1), got {alpha}"))
            }
            PolicySpec::Cips { delta } if !matches!(delta, Delta::Expr(_)) && !(delta.delta0() > 0.0) => {
                bad(format!("delta0 must be positive, got {}", delta.delta0()))
            }
            PolicySpec::Cms { lambda, .. } if !(0.0..=1.0).contains(lambda) => {
                bad(format!("lambda must lie in [0, 1], got {lambda}"))
            }
            PolicySpec::Tpb { rho } if !(0.0..=1.0).contains(rho) => {
                bad(format!("rho must lie in [0, 1], got {rho}"))
            }
            _ => Ok(()),
        }
    }

    /// Check that the policy can be evaluated on every cluster: the `X*`
    /// column exists and is binary, and `δ` is positive.
    pub fn check_against(&self, clusters: &[ClusterObservation]) -> Result<()> {
        self.check()?;
        match self {
            PolicySpec::Cms {
                x_star, x_star_name, ..
            } => {
                for c in clusters {
                    if *x_star >= c.p() {
                        return Err(Error::MissingColumn(x_star_name.clone()));
                    }
                    if let Some(v) = (0..c.n())
                        .map(|j| c.x_row(j)[*x_star])
                        .find(|&v| v != 0.0 && v != 1.0)
                    {
                        return Err(Error::Domain(format!(
                            "X* column `{x_star_name}` must be binary, found {v} in cluster {}",
                            c.id
                        )));
                    }
                }
                Ok(())
            }
            PolicySpec::Cips { delta } => {
                for c in clusters {
                    let d = delta.eval(c.x(), c.p(), c.n());
                    if !(d > 0.0 && d.is_finite()) {
                        return Err(Error::Domain(format!(
                            "delta evaluates to {d} on cluster {}",
                            c.id
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Bind to one cluster. `propensity` holds the (clipped) unit-level
    /// propensity scores and `observed` the cluster's observed treatments.
    pub fn bind(&self, ctx: &ClusterContext<'_>) -> Result<BoundPolicy> {
        match self {
            PolicySpec::Tpb { rho } => Ok(BoundPolicy::Tpb(TpbPolicy::new(
                *rho,
                ctx.propensity,
                ctx.observed,
            )?)),
            _ => Ok(BoundPolicy::Product(ProductPolicy::new(self, ctx)?)),
        }
    }

    /// Parse the policy grammar, e.g. `cips:delta0=2,mode=varying`.
    pub fn parse(text: &str, columns: &[String]) -> Result<Self> {
        let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
        let mut fields = std::collections::BTreeMap::new();
        for part in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in policy `{text}`, got `{part}`")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |key: &str| -> Result<f64> {
            let raw = fields
                .get(key)
                .ok_or_else(|| Error::Config(format!("policy `{text}` is missing `{key}`")))?;
            raw.parse()
                .map_err(|_| Error::Config(format!("policy `{text}`: `{key}` is not a number")))
        };
        let allow = |keys: &[&str]| -> Result<()> {
            match fields.keys().find(|k| !keys.contains(&k.as_str())) {
                Some(k) => Err(Error::Config(format!("policy `{text}`: unknown key `{k}`"))),
                None => Ok(()),
            }
        };
        let spec = match kind.trim().to_ascii_lowercase().as_str() {
            "typeb" => {
                allow(&["alpha"])?;
                PolicySpec::TypeB { alpha: num("alpha")? }
            }
            "cips" => {
                allow(&["delta0", "mode", "expr"])?;
                let d0 = num("delta0")?;
                let delta = match (fields.get("mode").map(String::as_str), fields.get("expr")) {
                    (_, Some(expr)) => Delta::Expr(DeltaExpr::parse(expr, d0, columns)?),
                    (None | Some("constant"), None) => Delta::Constant(d0),
                    (Some("varying"), None) => Delta::Varying(d0),
                    (Some(other), None) => {
                        return Err(Error::Config(format!("unknown cips mode `{other}`")))
                    }
                };
                PolicySpec::Cips { delta }
            }
            "cms" => {
                allow(&["lambda", "xstar"])?;
                let name = fields
                    .get("xstar")
                    .ok_or_else(|| Error::Config(format!("policy `{text}` is missing `xstar`")))?;
                let x_star = columns
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::MissingColumn(name.clone()))?;
                PolicySpec::Cms {
                    lambda: num("lambda")?,
                    x_star,
                    x_star_name: name.clone(),
                }
            }
            "tpb" => {
                allow(&["rho"])?;
                PolicySpec::Tpb { rho: num("rho")? }
            }
            other => return Err(Error::Config(format!("unknown policy `{other}`"))),
        };
        spec.check()?;
        Ok(spec)
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::TypeB { alpha } => write!(f, "typeb:alpha={alpha}"),
            PolicySpec::Cips { delta } => match delta {
                Delta::Expr(e) => write!(f, "cips:delta0={},expr={}", e.delta0(), e.source()),
                d => write!(f, "cips:delta0={},mode={}", d.delta0(), d.mode()),
            },
            PolicySpec::Cms {
                lambda, x_star_name, ..
            } => write!(f, "cms:lambda={lambda},xstar={x_star_name}"),
            PolicySpec::Tpb { rho } => write!(f, "tpb:rho={rho}"),
        }
    }
}

/// Everything a policy needs to know about one cluster.
#[derive(Debug, Clone, Copy)]
pub struct ClusterContext<'a> {
    pub n: usize,
    pub p: usize,
    /// Row-major `n × p` covariates.
    pub x: &'a [f64],
    /// Unit-level propensity scores, already clipped into (0, 1).
    pub propensity: &'a [f64],
    pub observed: TreatmentVector,
}

impl<'a> ClusterContext<'a> {
    pub fn new(cluster: &'a ClusterObservation, propensity: &'a [f64]) -> Self {
        assert_eq!(propensity.len(), cluster.n());
        Self {
            n: cluster.n(),
            p: cluster.p(),
            x: cluster.x(),
            propensity,
            observed: cluster.treatments(),
        }
    }
}

/// Operations every policy provides once bound to a cluster. `φ_Q` is
/// always evaluated at the cluster's observed treatment vector `A`.
pub trait ClusterPolicy {
    fn n(&self) -> usize;

    /// `ln Q(a)`; `-inf` when `a` has zero probability.
    fn ln_prob(&self, a: TreatmentVector) -> f64;

    fn prob(&self, a: TreatmentVector) -> f64 {
        self.ln_prob(a).exp()
    }

    /// `Q(a_(-j)) = Q(1, a_(-j)) + Q(0, a_(-j))`; the `j`-th bit of `a` is ignored.
    fn prob_marginal(&self, a: TreatmentVector, j: usize) -> f64;

    /// `φ_Q(A, X, N; a)`.
    fn phi(&self, a: TreatmentVector) -> f64;

    /// `φ_Q(A, X, N; a_(-j))`, the sum of `φ_Q` over both completions.
    fn phi_marginal(&self, a: TreatmentVector, j: usize) -> f64;

    /// Returns `(Q(a), φ_Q(a))` and writes `Q(a_(-j)) + φ_Q(a_(-j))` into
    /// `marginal[j]` for every unit. This is the estimator's inner loop;
    /// implementations override it with an O(n) pass.
    fn visit(&self, a: TreatmentVector, marginal: &mut [f64]) -> (f64, f64) {
        for (j, m) in marginal.iter_mut().enumerate() {
            *m = self.prob_marginal(a, j) + self.phi_marginal(a, j);
        }
        (self.prob(a), self.phi(a))
    }

    /// Coefficient `c` of a point mass `c·1{a = A}` inside `φ_Q(A; a)`.
    /// Uniform lattice draws almost never land on `A`, so subsampled sums
    /// take this part out and add it back exactly.
    fn point_mass(&self) -> f64 {
        0.0
    }

    /// Identification weight `w(a)` (or `w_t(a)`) as a length-`n` vector.
    fn weight(&self, kind: WeightKind, a: TreatmentVector) -> Vec<f64> {
        let n = self.n();
        let nf = n as f64;
        match kind.treatment() {
            None => vec![self.prob(a) / nf; n],
            Some(t) => (0..n)
                .map(|j| {
                    if a.get(j) == t {
                        self.prob_marginal(a, j) / nf
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }

    /// Influence-function term of the weight, `φ(A; a)` or `φ_t(A; a)`.
    fn phi_weight(&self, kind: WeightKind, a: TreatmentVector) -> Vec<f64> {
        let n = self.n();
        let nf = n as f64;
        match kind.treatment() {
            None => vec![self.phi(a) / nf; n],
            Some(t) => (0..n)
                .map(|j| {
                    if a.get(j) == t {
                        self.phi_marginal(a, j) / nf
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }
}

/// A policy bound to one cluster.
#[derive(Debug, Clone)]
pub enum BoundPolicy {
    Product(ProductPolicy),
    Tpb(TpbPolicy),
}

impl BoundPolicy {
    /// Whether the admissible-set mass was floored (treated-proportion policy only).
    pub fn flagged(&self) -> bool {
        matches!(self, BoundPolicy::Tpb(t) if t.floored())
    }
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            BoundPolicy::Product($p) => $e,
            BoundPolicy::Tpb($p) => $e,
        }
    };
}

impl ClusterPolicy for BoundPolicy {
    fn n(&self) -> usize {
        dispatch!(self, p => p.n())
    }
    fn ln_prob(&self, a: TreatmentVector) -> f64 {
        dispatch!(self, p => p.ln_prob(a))
    }
    fn prob(&self, a: TreatmentVector) -> f64 {
        dispatch!(self, p => p.prob(a))
    }
    fn prob_marginal(&self, a: TreatmentVector, j: usize) -> f64 {
        dispatch!(self, p => p.prob_marginal(a, j))
    }
    fn phi(&self, a: TreatmentVector) -> f64 {
        dispatch!(self, p => p.phi(a))
    }
    fn phi_marginal(&self, a: TreatmentVector, j: usize) -> f64 {
        dispatch!(self, p => p.phi_marginal(a, j))
    }
    fn visit(&self, a: TreatmentVector, marginal: &mut [f64]) -> (f64, f64) {
        dispatch!(self, p => p.visit(a, marginal))
    }
    fn point_mass(&self) -> f64 {
        dispatch!(self, p => p.point_mass())
    }
}

/// Incremental-propensity shift `δπ / (δπ + 1 − π)`.
pub fn shifted_propensity_cips(pi: f64, delta: f64) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::Domain(format!("propensity {pi} outside (0, 1)")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("delta {delta} must be positive")));
    }
    Ok(delta * pi / (delta * pi + 1.0 - pi))
}

/// Multiplicative shift `(1 − λ + λπ) X* + π (1 − X*)`.
pub fn shifted_propensity_cms(pi: f64, lambda: f64, x_star: f64) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::Domain(format!("propensity {pi} outside (0, 1)")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda {lambda} outside [0, 1]")));
    }
    if x_star != 0.0 && x_star != 1.0 {
        return Err(Error::Domain(format!("X* value {x_star} is not binary")));
    }
    Ok((1.0 - lambda + lambda * pi) * x_star + pi * (1.0 - x_star))
}

/// `Q(a | X, N)` for a policy on one cluster.
pub fn policy_prob(spec: &PolicySpec, a: TreatmentVector, ctx: &ClusterContext<'_>) -> Result<f64> {
    Ok(spec.bind(ctx)?.prob(a))
}

/// `Q(a_(-j) | X, N)`; `a_minus_j` has length `n − 1`.
pub fn policy_prob_marginal(
    spec: &PolicySpec,
    a_minus_j: TreatmentVector,
    j: usize,
    ctx: &ClusterContext<'_>,
) -> Result<f64> {
    Ok(spec.bind(ctx)?.prob_marginal(insert_unit(a_minus_j, j), j))
}

/// `φ_Q(A, X, N; a)` with `A` taken from the context.
pub fn phi_q(spec: &PolicySpec, a: TreatmentVector, ctx: &ClusterContext<'_>) -> Result<f64> {
    Ok(spec.bind(ctx)?.phi(a))
}

pub fn weight(
    spec: &PolicySpec,
    kind: WeightKind,
    a: TreatmentVector,
    ctx: &ClusterContext<'_>,
) -> Result<Vec<f64>> {
    Ok(spec.bind(ctx)?.weight(kind, a))
}

pub fn phi_weight(
    spec: &PolicySpec,
    kind: WeightKind,
    a: TreatmentVector,
    ctx: &ClusterContext<'_>,
) -> Result<Vec<f64>> {
    Ok(spec.bind(ctx)?.phi_weight(kind, a))
}

/// Expand a length `n − 1` vector to length `n` with a zero at position `j`.
pub fn insert_unit(a_minus_j: TreatmentVector, j: usize) -> TreatmentVector {
    let bits = a_minus_j.bits();
    let low = bits & ((1u64 << j) - 1);
    let high = (bits >> j) << (j + 1);
    TreatmentVector::new(low | high, a_minus_j.len() + 1)
}

/// Numerically safe `Q(A) / H(A)` from log values: structural zeros give 0,
/// and both logs are floored at −30 before exponentiating.
#[inline]
pub fn density_ratio(ln_q: f64, ln_h: f64) -> f64 {
    if ln_q == f64::NEG_INFINITY {
        0.0
    } else {
        (ln_q.max(-30.0) - ln_h.max(-30.0)).exp()
    }
}

#[cfg(test)]
mod tests;
