//! Cross-fitted estimation of policy-indexed means and effects.
//!
//! For every split the clusters are shuffled and dealt into `K` folds;
//! nuisances are fitted on each fold's complement and the uncentered
//! influence function is averaged over the held-out fold. Points are the
//! average of fold means, with the median taken across repeated splits.

mod eif;
mod report;

use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

pub use eif::{evaluate_cluster, exact_for, uncentered_eif_mu, uncentered_eif_mu_t, ClusterEif, ClusterEval, Lattice};
pub use report::{
    write_report, ClusterFlags, Diagnostics, EstimateReport, EstimateResult, ReportMeta, REPORT_SCHEMA,
};

use crate::data::{ClusterObservation, Dataset};
use crate::error::{Error, Result};
use crate::nuisance::{fit_propensity, ln_cluster_h, LearnerSpec, Nuisance, NuisanceModel};
use crate::policies::{density_ratio, ClusterContext, ClusterPolicy, PolicySpec};
use crate::rng;

/// Lattice draw budget: a number of uniform draws, or exact enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Draws {
    Exact,
    Subsample(usize),
}

impl Draws {
    pub fn budget(self) -> Option<usize> {
        match self {
            Draws::Exact => None,
            Draws::Subsample(r) => Some(r),
        }
    }
}

impl fmt::Display for Draws {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Draws::Exact => f.write_str("exact"),
            Draws::Subsample(r) => write!(f, "{r}"),
        }
    }
}

impl Serialize for Draws {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Draws::Exact => s.serialize_str("exact"),
            Draws::Subsample(r) => s.serialize_u64(*r as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Draws {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(r) => Ok(Draws::Subsample(r as usize)),
            Raw::Word(w) if w == "exact" => Ok(Draws::Exact),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "r must be a positive integer or \"exact\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub r: Draws,
    #[serde(rename = "S")]
    pub s: usize,
    pub seed: u64,
    pub alpha_level: f64,
    pub clip_eps: f64,
    pub learner: LearnerSpec,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            k: 2,
            r: Draws::Subsample(100),
            s: 1,
            seed: 0,
            alpha_level: 0.05,
            clip_eps: 0.01,
            learner: LearnerSpec::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("K must be at least 2, got {}", self.k)));
        }
        if self.s < 1 {
            return Err(Error::Config("S must be at least 1".into()));
        }
        if self.r == Draws::Subsample(0) {
            return Err(Error::Config("r must be at least 1".into()));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(Error::Config(format!("alpha_level must lie in (0, 1), got {}", self.alpha_level)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 0.5) {
            return Err(Error::Config(format!("clip_eps must lie in (0, 0.5), got {}", self.clip_eps)));
        }
        self.learner.validate()
    }

    /// `z_{1 − α/2}`.
    pub fn z(&self) -> f64 {
        Normal::standard().inverse_cdf(1.0 - self.alpha_level / 2.0)
    }
}

/// A target parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimandSpec {
    Mu(PolicySpec),
    MuT(PolicySpec, u8),
    De(PolicySpec),
    Se(PolicySpec, PolicySpec, u8),
    Oe(PolicySpec, PolicySpec),
    Te(PolicySpec, PolicySpec),
}

/// Which of the three per-policy influence functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Mu,
    Mu1,
    Mu0,
}

impl Component {
    fn of(t: u8) -> Self {
        if t == 1 {
            Component::Mu1
        } else {
            Component::Mu0
        }
    }

    pub fn pick(self, e: &ClusterEif) -> f64 {
        match self {
            Component::Mu => e.mu,
            Component::Mu1 => e.mu1,
            Component::Mu0 => e.mu0,
        }
    }
}

impl EstimandSpec {
    /// Short name used in reports: mu, mu1, mu0, de, se1, se0, oe, te.
    pub fn kind(&self) -> String {
        match self {
            EstimandSpec::Mu(_) => "mu".into(),
            EstimandSpec::MuT(_, t) => format!("mu{t}"),
            EstimandSpec::De(_) => "de".into(),
            EstimandSpec::Se(_, _, t) => format!("se{t}"),
            EstimandSpec::Oe(..) => "oe".into(),
            EstimandSpec::Te(..) => "te".into(),
        }
    }

    /// Build from a short name; contrasts need the reference policy.
    pub fn from_kind(kind: &str, q: PolicySpec, reference: Option<PolicySpec>) -> Result<Self> {
        let need = |r: Option<PolicySpec>| {
            r.ok_or_else(|| Error::Config(format!("estimand `{kind}` needs a reference policy")))
        };
        Ok(match kind {
            "mu" => EstimandSpec::Mu(q),
            "mu1" => EstimandSpec::MuT(q, 1),
            "mu0" => EstimandSpec::MuT(q, 0),
            "de" => EstimandSpec::De(q),
            "se1" => EstimandSpec::Se(q, need(reference)?, 1),
            "se0" => EstimandSpec::Se(q, need(reference)?, 0),
            "oe" => EstimandSpec::Oe(q, need(reference)?),
            "te" => EstimandSpec::Te(q, need(reference)?),
            other => return Err(Error::Config(format!("unknown estimand `{other}`"))),
        })
    }

    pub fn policy(&self) -> &PolicySpec {
        match self {
            EstimandSpec::Mu(q)
            | EstimandSpec::MuT(q, _)
            | EstimandSpec::De(q)
            | EstimandSpec::Se(q, _, _)
            | EstimandSpec::Oe(q, _)
            | EstimandSpec::Te(q, _) => q,
        }
    }

    pub fn reference(&self) -> Option<&PolicySpec> {
        match self {
            EstimandSpec::Se(_, r, _) | EstimandSpec::Oe(_, r) | EstimandSpec::Te(_, r) => Some(r),
            _ => None,
        }
    }

    pub fn policies(&self) -> Vec<&PolicySpec> {
        std::iter::once(self.policy()).chain(self.reference()).collect()
    }

    /// `(plus, minus)` components, each as (policy, component).
    pub(crate) fn terms(&self) -> ((&PolicySpec, Component), Option<(&PolicySpec, Component)>) {
        match self {
            EstimandSpec::Mu(q) => ((q, Component::Mu), None),
            EstimandSpec::MuT(q, t) => ((q, Component::of(*t)), None),
            EstimandSpec::De(q) => ((q, Component::Mu1), Some((q, Component::Mu0))),
            EstimandSpec::Se(q, r, t) => ((q, Component::of(*t)), Some((r, Component::of(*t)))),
            EstimandSpec::Oe(q, r) => ((q, Component::Mu), Some((r, Component::Mu))),
            EstimandSpec::Te(q, r) => ((q, Component::Mu1), Some((r, Component::Mu0))),
        }
    }

    /// Human-readable label, e.g. `de[cips:delta0=1,mode=constant]`.
    pub fn label(&self) -> String {
        match self.reference() {
            Some(r) => format!("{}[{} vs {}]", self.kind(), self.policy(), r),
            None => format!("{}[{}]", self.kind(), self.policy()),
        }
    }
}

impl fmt::Display for EstimandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// The same estimand family at each policy on a grid.
pub fn policy_grid(base: &PolicySpec, values: &[f64]) -> Vec<PolicySpec> {
    values.iter().map(|&v| base.with_param(v)).collect()
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Distinct policies referenced by the estimands, in first-use order.
pub fn distinct_policies(estimands: &[EstimandSpec]) -> Vec<PolicySpec> {
    let mut out: Vec<PolicySpec> = Vec::new();
    for e in estimands {
        for p in e.policies() {
            if !out.contains(p) {
                out.push(p.clone());
            }
        }
    }
    out
}

/// `σ̂² = K⁻¹ Σ_k mean_{i∈k} (φ_i − Ψ̂)²`; with one fold, the plain mean square.
pub fn variance(per_cluster: &[f64], point: f64, fold_of: &[usize], k: usize) -> f64 {
    fold_average(per_cluster, fold_of, k, |v| (v - point) * (v - point))
}

/// `K⁻¹ Σ_k mean_{i∈k} f(φ_i)`.
fn fold_average(values: &[f64], fold_of: &[usize], k: usize, f: impl Fn(f64) -> f64) -> f64 {
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&v, &fold) in values.iter().zip(fold_of) {
        sums[fold] += f(v);
        counts[fold] += 1;
    }
    let used = counts.iter().filter(|&&c| c > 0).count();
    sums.iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| s / c as f64)
        .sum::<f64>()
        / used as f64
}

/// Shuffle-then-deal fold assignment for split `s`.
pub fn assign_folds(m: usize, k: usize, seed: u64, split: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng::stream(seed, &[rng::tag::FOLDS, split as u64]));
    let mut fold_of = vec![0; m];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    fold_of
}

/// Nuisance fits for every (split, fold).
#[derive(Debug, Clone)]
pub struct CrossFit {
    pub splits: Vec<SplitFit>,
}

#[derive(Debug, Clone)]
pub struct SplitFit {
    pub fold_of: Vec<usize>,
    /// `models[k]` was fitted without fold `k`.
    pub models: Vec<NuisanceModel>,
}

fn check_size(m: usize, k: usize) -> Result<()> {
    if m < 2 * k {
        return Err(Error::TooFewClusters { m, k, need: 2 * k });
    }
    Ok(())
}

/// Fit the nuisance models for every split and fold.
pub fn cross_fit(data: &Dataset, cfg: &EstimatorConfig) -> Result<CrossFit> {
    cfg.validate()?;
    check_size(data.m(), cfg.k)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.s).flat_map(|s| (0..cfg.k).map(move |k| (s, k))).collect();
    let folds: Vec<Vec<usize>> = (0..cfg.s).map(|s| assign_folds(data.m(), cfg.k, cfg.seed, s)).collect();
    let models: Vec<NuisanceModel> = jobs
        .par_iter()
        .map(|&(s, k)| {
            let train: Vec<usize> = (0..data.m()).filter(|&i| folds[s][i] != k).collect();
            let seed = rng::derive_seed(cfg.seed, &[s as u64, k as u64]);
            let mut model = NuisanceModel::fit(&data.subset(&train), &cfg.learner, cfg.clip_eps, seed)?;
            model.fold_id = Some(k);
            Ok(model)
        })
        .collect::<Result<_>>()?;
    let mut models = models.into_iter();
    let splits = folds
        .into_iter()
        .map(|fold_of| SplitFit {
            fold_of,
            models: models.by_ref().take(cfg.k).collect(),
        })
        .collect();
    Ok(CrossFit { splits })
}

/// Per-cluster evaluations of every policy for one split.
struct SplitEval {
    fold_of: Vec<usize>,
    folds: usize,
    clusters: Vec<ClusterEval>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_split(
    clusters: &[ClusterObservation],
    policies: &[PolicySpec],
    draws: Draws,
    seed: u64,
    split: usize,
    fold_of: Vec<usize>,
    folds: usize,
    models: &[&dyn Nuisance],
) -> Result<SplitEval> {
    let evals = clusters
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let model = models[fold_of[i]];
            let lattice = if exact_for(c.n(), draws.budget()) {
                Lattice::Exact
            } else {
                Lattice::Subsample {
                    r: draws.budget().unwrap_or(1),
                    seed: rng::derive_seed(seed, &[rng::tag::SUBSAMPLE, split as u64, i as u64]),
                }
            };
            let pi = model.propensity(c);
            let table = model.outcome_table(c);
            evaluate_cluster(c, &pi, &table, policies, lattice)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitEval {
        fold_of,
        folds,
        clusters: evals,
    })
}

/// Point, variance and per-cluster EIF of one estimand in one split.
#[derive(Debug, Clone)]
struct SplitEstimate {
    point: f64,
    var: f64,
    eif: Vec<f64>,
}

fn split_estimates(
    split: &SplitEval,
    policies: &[PolicySpec],
    estimands: &[EstimandSpec],
) -> Vec<SplitEstimate> {
    let index = |p: &PolicySpec| policies.iter().position(|q| q == p).expect("policy registered");
    let component = |(p, c): (&PolicySpec, Component)| -> (Vec<f64>, f64) {
        let i = index(p);
        let v: Vec<f64> = split.clusters.iter().map(|e| c.pick(&e.eif[i])).collect();
        let point = fold_average(&v, &split.fold_of, split.folds, |x| x);
        (v, point)
    };
    estimands
        .iter()
        .map(|e| {
            let (plus, minus) = e.terms();
            let (mut eif, mut point) = component(plus);
            if let Some(m) = minus {
                let (v, p) = component(m);
                eif.iter_mut().zip(&v).for_each(|(a, b)| *a -= b);
                point -= p;
            }
            let var = variance(&eif, point, &split.fold_of, split.folds);
            SplitEstimate { point, var, eif }
        })
        .collect()
}

/// Lower median index of `values`.
fn lower_median(values: &[f64]) -> usize {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx[(values.len() - 1) / 2]
}

fn lower_median_value(values: &[f64]) -> f64 {
    values[lower_median(values)]
}

struct Combined {
    point: f64,
    var: f64,
    eif: Vec<f64>,
    split: usize,
    spread: f64,
}

/// Median of split points; variance inflated by each split's distance
/// from the median point.
fn combine(per_split: &[&SplitEstimate]) -> Combined {
    let points: Vec<f64> = per_split.iter().map(|e| e.point).collect();
    let med = lower_median(&points);
    let point = points[med];
    let var = if per_split.len() == 1 {
        per_split[0].var
    } else {
        let inflated: Vec<f64> = per_split
            .iter()
            .map(|e| e.var + (e.point - point) * (e.point - point))
            .collect();
        lower_median_value(&inflated)
    };
    let lo = points.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Combined {
        point,
        var,
        eif: per_split[med].eif.clone(),
        split: med,
        spread: hi - lo,
    }
}

fn assemble(
    data: &Dataset,
    estimands: &[EstimandSpec],
    policies: &[PolicySpec],
    cfg: &EstimatorConfig,
    splits: &[SplitEval],
    separated: bool,
) -> EstimateReport {
    let m = data.m();
    let z = cfg.z();
    let per_split: Vec<Vec<SplitEstimate>> =
        splits.iter().map(|s| split_estimates(s, policies, estimands)).collect();
    let mut diagnostics = Diagnostics::default();
    let mut results = Vec::with_capacity(estimands.len());
    for (e_idx, e) in estimands.iter().enumerate() {
        let column: Vec<&SplitEstimate> = per_split.iter().map(|v| &v[e_idx]).collect();
        let c = combine(&column);
        let se = (c.var.max(0.0) / m as f64).sqrt();
        let split = &splits[c.split];
        let mut flags = Vec::new();
        let mut floored = 0;
        for p in e.policies() {
            let pi = policies.iter().position(|q| q == p).expect("registered");
            floored += split.clusters.iter().filter(|ev| ev.flagged[pi]).count();
        }
        if floored > 0 {
            flags.push(format!("tpb_mass_floored:{floored}"));
        }
        if separated {
            flags.push("logit_ridge_fallback".into());
        }
        diagnostics.split_spread.push(c.spread);
        results.push(EstimateResult {
            estimand: e.kind(),
            policy: match e.reference() {
                Some(r) => format!("{} vs {}", e.policy(), r),
                None => e.policy().to_string(),
            },
            param: e.policy().param(),
            point: c.point,
            se,
            ci_lo: c.point - z * se,
            ci_hi: c.point + z * se,
            flags,
            per_cluster_eif: c.eif,
        });
    }
    for split in splits {
        let mut sizes = vec![0; split.folds];
        split.fold_of.iter().for_each(|&f| sizes[f] += 1);
        diagnostics.fold_sizes.push(sizes);
        diagnostics.subsampled_clusters.push(split.clusters.iter().filter(|c| c.subsampled).count());
    }
    for (pi, p) in policies.iter().enumerate() {
        let ids: Vec<String> = data
            .clusters()
            .iter()
            .zip(&splits[0].clusters)
            .filter(|(_, ev)| ev.flagged[pi])
            .map(|(c, _)| c.id.clone())
            .collect();
        if !ids.is_empty() {
            diagnostics.flagged_clusters.push(ClusterFlags {
                policy: p.to_string(),
                clusters: ids,
            });
        }
    }
    EstimateReport {
        meta: ReportMeta {
            seed: cfg.seed,
            k: cfg.k,
            r: cfg.r,
            s: cfg.s,
            m,
        },
        results,
        diagnostics,
    }
}

fn prepare(data: &Dataset, estimands: &[EstimandSpec]) -> Result<Vec<PolicySpec>> {
    if estimands.is_empty() {
        return Err(Error::Config("no estimands requested".into()));
    }
    let policies = distinct_policies(estimands);
    for p in &policies {
        p.check_against(data.clusters())?;
    }
    Ok(policies)
}

/// The cross-fitted estimator.
pub fn estimate(data: &Dataset, estimands: &[EstimandSpec], cfg: &EstimatorConfig) -> Result<EstimateReport> {
    prepare(data, estimands)?;
    let fit = cross_fit(data, cfg)?;
    estimate_from_fit(data, estimands, cfg, &fit)
}

/// Evaluate estimands using nuisance fits already produced by [`cross_fit`]
/// (with the same `K`, `S` and seed). Only the lattice settings of `cfg`
/// may differ from the fitting configuration.
pub fn estimate_from_fit(
    data: &Dataset,
    estimands: &[EstimandSpec],
    cfg: &EstimatorConfig,
    fit: &CrossFit,
) -> Result<EstimateReport> {
    cfg.validate()?;
    let policies = prepare(data, estimands)?;
    let splits = fit
        .splits
        .iter()
        .enumerate()
        .map(|(s, sf)| {
            let models: Vec<&dyn Nuisance> = sf.models.iter().map(|m| m as &dyn Nuisance).collect();
            evaluate_split(data.clusters(), &policies, cfg.r, cfg.seed, s, sf.fold_of.clone(), models.len(), &models)
        })
        .collect::<Result<Vec<_>>>()?;
    let separated = fit.splits.iter().flat_map(|s| &s.models).any(|m| {
        m.propensity.fit.separated() || m.outcome.fit.separated()
    });
    Ok(assemble(data, estimands, &policies, cfg, &splits, separated))
}

/// Evaluate with one fixed nuisance for every cluster (no sample
/// splitting), e.g. the true data-generating nuisances.
pub fn estimate_with_nuisance(
    data: &Dataset,
    estimands: &[EstimandSpec],
    cfg: &EstimatorConfig,
    nuisance: &dyn Nuisance,
) -> Result<EstimateReport> {
    cfg.validate()?;
    let policies = prepare(data, estimands)?;
    let split = evaluate_split(data.clusters(), &policies, cfg.r, cfg.seed, 0, vec![0; data.m()], 1, &[nuisance])?;
    let mut report = assemble(data, estimands, &policies, cfg, &[split], false);
    report.meta.k = 1;
    report.meta.s = 1;
    Ok(report)
}

/// Inverse-probability-weighted comparator: `m⁻¹ Σ_i ŵ(A_i)ᵀ Y_i / Ĥ(A_i)`
/// with the propensity fitted once on the full sample.
pub fn estimate_ipw(data: &Dataset, estimands: &[EstimandSpec], cfg: &EstimatorConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    let policies = prepare(data, estimands)?;
    let model = fit_propensity(data, &cfg.learner, rng::derive_seed(cfg.seed, &[u64::MAX]))?;
    let prop = IpwPropensity {
        model,
        clip_eps: cfg.clip_eps,
    };
    estimate_ipw_with(data, estimands, &policies, cfg, &prop)
}

struct IpwPropensity {
    model: crate::nuisance::PropensityModel,
    clip_eps: f64,
}

impl IpwPropensity {
    fn predict(&self, c: &ClusterObservation) -> Vec<f64> {
        let x = crate::nuisance::Design::new(c.x().to_vec(), c.n(), c.p(), vec![0; c.n()]);
        self.model
            .fit
            .predict(&x)
            .into_iter()
            .map(|p| p.clamp(self.clip_eps, 1.0 - self.clip_eps))
            .collect()
    }
}

/// Per-cluster IPW summands for `μ`, `μ₁`, `μ₀` of each policy.
pub fn ipw_cluster(cluster: &ClusterObservation, propensity: &[f64], policies: &[PolicySpec]) -> Result<Vec<ClusterEif>> {
    let ctx = ClusterContext::new(cluster, propensity);
    let obs = cluster.treatments();
    let ln_h = ln_cluster_h(propensity, obs);
    let n = cluster.n() as f64;
    policies
        .iter()
        .map(|p| {
            let b = p.bind(&ctx)?;
            let mut e = ClusterEif {
                mu: density_ratio(b.ln_prob(obs), ln_h) * cluster.y_bar(),
                ..ClusterEif::default()
            };
            for (j, &y) in cluster.y().iter().enumerate() {
                let v = density_ratio(b.prob_marginal(obs, j).ln(), ln_h) * y / n;
                if obs.get(j) == 1 {
                    e.mu1 += v;
                } else {
                    e.mu0 += v;
                }
            }
            Ok(e)
        })
        .collect()
}

fn estimate_ipw_with(
    data: &Dataset,
    estimands: &[EstimandSpec],
    policies: &[PolicySpec],
    cfg: &EstimatorConfig,
    prop: &IpwPropensity,
) -> Result<EstimateReport> {
    let clusters = data
        .clusters()
        .par_iter()
        .map(|c| {
            Ok(ClusterEval {
                eif: ipw_cluster(c, &prop.predict(c), policies)?,
                flagged: vec![false; policies.len()],
                subsampled: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let split = SplitEval {
        fold_of: vec![0; data.m()],
        folds: 1,
        clusters,
    };
    let mut report = assemble(data, estimands, policies, cfg, &[split], prop.model.fit.separated());
    report.meta.k = 1;
    report.meta.s = 1;
    report.meta.r = Draws::Exact;
    Ok(report)
}

/// IPW with a supplied propensity source (e.g. the true propensity).
pub fn estimate_ipw_with_nuisance(
    data: &Dataset,
    estimands: &[EstimandSpec],
    cfg: &EstimatorConfig,
    nuisance: &dyn Nuisance,
) -> Result<EstimateReport> {
    let policies = prepare(data, estimands)?;
    let clusters = data
        .clusters()
        .par_iter()
        .map(|c| {
            Ok(ClusterEval {
                eif: ipw_cluster(c, &nuisance.propensity(c), &policies)?,
                flagged: vec![false; policies.len()],
                subsampled: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let split = SplitEval {
        fold_of: vec![0; data.m()],
        folds: 1,
        clusters,
    };
    let mut report = assemble(data, estimands, &policies, cfg, &[split], false);
    report.meta.k = 1;
    report.meta.s = 1;
    report.meta.r = Draws::Exact;
    Ok(report)
}
