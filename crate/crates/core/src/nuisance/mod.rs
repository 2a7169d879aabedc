//! Unit-level nuisance regressions and the cluster-level quantities built
//! from them.
//!
//! The propensity `π(x_j)` and outcome regression `g(a_j, ā_(-j), x_j)` are
//! fitted on units pooled across clusters. Under conditional independence
//! of treatments within a cluster, `H(a) = Π_j π_j^{a_j}(1 − π_j)^{1 − a_j}`
//! and `G(a)_j = g(a_j, ā_(-j), x_j)`.

mod gbt;
mod knn;
mod logit;
mod stack;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gbt::{GbtModel, GbtParams};
pub use knn::KnnModel;
pub use logit::{log_likelihood, score, LogitModel};
pub use stack::{cv_loss, project_simplex, stack_weights};

use crate::data::{ClusterObservation, Dataset, TreatmentVector};
use crate::error::{Error, Result};
use crate::rng;

/// Row-major feature matrix with the cluster index of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub groups: Vec<u32>,
}

impl Design {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize, groups: Vec<u32>) -> Self {
        assert_eq!(data.len(), rows * cols);
        assert_eq!(groups.len(), rows);
        Self {
            rows,
            cols,
            data,
            groups,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.cols + c]
    }

    fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Self::new(data, rows.len(), self.cols, rows.iter().map(|&i| self.groups[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Logit,
    Gbt,
    Knn,
}

impl FromStr for LearnerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(LearnerKind::Logit),
            "gbt" => Ok(LearnerKind::Gbt),
            "knn" => Ok(LearnerKind::Knn),
            other => Err(Error::Config(format!("unknown learner `{other}`"))),
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LearnerKind::Logit => "logit",
            LearnerKind::Gbt => "gbt",
            LearnerKind::Knn => "knn",
        })
    }
}

/// Learner library and stacking settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSpec {
    pub learners: Vec<LearnerKind>,
    pub cv_folds: usize,
    /// When false only the logistic regression is used.
    pub ensemble: bool,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self {
            learners: vec![LearnerKind::Logit, LearnerKind::Gbt, LearnerKind::Knn],
            cv_folds: 5,
            ensemble: true,
        }
    }
}

impl LearnerSpec {
    /// Main-effects logistic regression only.
    pub fn logit_only() -> Self {
        Self {
            learners: vec![LearnerKind::Logit],
            cv_folds: 5,
            ensemble: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learners.is_empty() {
            return Err(Error::Config("learner library is empty".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config(format!("cv_folds must be at least 2, got {}", self.cv_folds)));
        }
        Ok(())
    }

    fn library(&self) -> Vec<LearnerKind> {
        if self.ensemble {
            self.learners.clone()
        } else {
            vec![LearnerKind::Logit]
        }
    }
}

/// A fitted probability model.
#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Constant(f64),
    Logit(LogitModel),
    Gbt(GbtModel),
    Knn(KnnModel),
    Stack(Vec<(f64, Fitted)>),
}

impl Fitted {
    pub fn predict(&self, x: &Design) -> Vec<f64> {
        match self {
            Fitted::Constant(c) => vec![*c; x.rows],
            Fitted::Logit(m) => (0..x.rows).map(|i| m.predict_row(x.row(i))).collect(),
            Fitted::Gbt(m) => (0..x.rows).map(|i| m.predict_row(x.row(i))).collect(),
            Fitted::Knn(m) => m.predict(x),
            Fitted::Stack(parts) => {
                let mut out = vec![0.0; x.rows];
                for (w, m) in parts {
                    for (o, p) in out.iter_mut().zip(m.predict(x)) {
                        *o += w * p;
                    }
                }
                out
            }
        }
    }

    /// Stacking weights by learner, if this is a stacked fit.
    pub fn weights(&self) -> Option<Vec<f64>> {
        match self {
            Fitted::Stack(parts) => Some(parts.iter().map(|(w, _)| *w).collect()),
            _ => None,
        }
    }

    /// True when a logistic fit needed the ridge fallback.
    pub fn separated(&self) -> bool {
        match self {
            Fitted::Logit(m) => m.separated(),
            Fitted::Stack(parts) => parts.iter().any(|(_, m)| m.separated()),
            _ => false,
        }
    }
}

fn fit_single(kind: LearnerKind, x: &Design, y: &[f64], seed: u64) -> Fitted {
    match kind {
        LearnerKind::Logit => Fitted::Logit(LogitModel::fit(x, y)),
        LearnerKind::Gbt => {
            let mut r = rng::stream(seed, &[rng::tag::LEARNER, 1]);
            Fitted::Gbt(GbtModel::fit(x, y, &GbtParams::default(), &mut r))
        }
        LearnerKind::Knn => Fitted::Knn(KnnModel::fit(x, y, None)),
    }
}

/// Fit a probability model for `y ∈ [0, 1]` on `x`. With more than one
/// learner the library is stacked using cluster-grouped CV folds.
pub fn fit_binary(x: &Design, y: &[f64], spec: &LearnerSpec, seed: u64) -> Result<Fitted> {
    spec.validate()?;
    if x.rows == 0 {
        return Err(Error::Fit("no training rows".into()));
    }
    if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Fit("responses must lie in [0, 1]".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Ok(Fitted::Constant(y[0]));
    }
    let library = spec.library();
    if library.len() == 1 {
        return Ok(fit_single(library[0], x, y, seed));
    }

    // Deal clusters into CV folds.
    let n_groups = x.groups.iter().map(|&g| g as usize + 1).max().unwrap_or(0);
    let folds = spec.cv_folds.min(n_groups.max(2));
    let mut perm: Vec<usize> = (0..n_groups).collect();
    {
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng::stream(seed, &[rng::tag::STACK_FOLDS]));
    }
    let mut fold_of = vec![0usize; n_groups];
    for (pos, &g) in perm.iter().enumerate() {
        fold_of[g] = pos % folds;
    }
    let mut cv: Vec<Vec<f64>> = vec![vec![0.0; x.rows]; library.len()];
    for f in 0..folds {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..x.rows).partition(|&i| fold_of[x.groups[i] as usize] == f);
        if test.is_empty() || train.is_empty() {
            continue;
        }
        let xt = x.select(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xv = x.select(&test);
        for (l, &kind) in library.iter().enumerate() {
            let m = if yt.iter().all(|&v| v == yt[0]) {
                Fitted::Constant(yt[0])
            } else {
                fit_single(kind, &xt, &yt, rng::derive_seed(seed, &[f as u64, l as u64]))
            };
            for (&i, p) in test.iter().zip(m.predict(&xv)) {
                cv[l][i] = p;
            }
        }
    }
    let weights = stack_weights(&cv, y);
    let parts = library
        .iter()
        .enumerate()
        .filter(|&(l, _)| weights[l] > 0.0)
        .map(|(l, &kind)| (weights[l], fit_single(kind, x, y, rng::derive_seed(seed, &[u64::MAX, l as u64]))))
        .collect();
    Ok(Fitted::Stack(parts))
}

/// Units of a cluster sorted by `(x, a, y)`, so fits never depend on the
/// order units were listed in.
fn canonical_order(c: &ClusterObservation) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..c.n()).collect();
    idx.sort_by(|&i, &j| {
        c.x_row(i)
            .iter()
            .zip(c.x_row(j))
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(c.a()[i].cmp(&c.a()[j]))
            .then(c.y()[i].total_cmp(&c.y()[j]))
    });
    idx
}

/// Propensity features: the unit's covariate row.
pub fn propensity_design(clusters: &[ClusterObservation]) -> (Design, Vec<f64>) {
    let p = clusters.first().map_or(0, |c| c.p());
    let mut data = Vec::new();
    let mut groups = Vec::new();
    let mut y = Vec::new();
    for (g, c) in clusters.iter().enumerate() {
        for j in canonical_order(c) {
            data.extend_from_slice(c.x_row(j));
            y.push(f64::from(c.a()[j]));
            groups.push(g as u32);
        }
    }
    (Design::new(data, y.len(), p, groups), y)
}

/// Outcome features `(a_j, ā_(-j), x_j[, 1{n = 1}])`.
#[inline]
fn push_outcome_row(out: &mut Vec<f64>, t: u8, others_treated: usize, n: usize, x: &[f64], singleton_col: bool) {
    out.push(f64::from(t));
    out.push(if n > 1 {
        others_treated as f64 / (n - 1) as f64
    } else {
        0.0
    });
    out.extend_from_slice(x);
    if singleton_col {
        out.push(f64::from(u8::from(n == 1)));
    }
}

fn outcome_cols(p: usize, singleton_col: bool) -> usize {
    p + 2 + usize::from(singleton_col)
}

pub fn outcome_design(clusters: &[ClusterObservation], singleton_col: bool) -> (Design, Vec<f64>) {
    let p = clusters.first().map_or(0, |c| c.p());
    let mut data = Vec::new();
    let mut groups = Vec::new();
    let mut y = Vec::new();
    for (g, c) in clusters.iter().enumerate() {
        let n = c.n();
        let k: usize = c.a().iter().map(|&v| v as usize).sum();
        for j in canonical_order(c) {
            let aj = c.a()[j];
            push_outcome_row(&mut data, aj, k - aj as usize, n, c.x_row(j), singleton_col);
            y.push(c.y()[j]);
            groups.push(g as u32);
        }
    }
    (Design::new(data, y.len(), outcome_cols(p, singleton_col), groups), y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub fit: Fitted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    pub fit: Fitted,
    pub singleton_col: bool,
}

pub fn fit_propensity(train: &Dataset, spec: &LearnerSpec, seed: u64) -> Result<PropensityModel> {
    let (x, y) = propensity_design(train.clusters());
    Ok(PropensityModel {
        fit: fit_binary(&x, &y, spec, rng::derive_seed(seed, &[rng::tag::PROPENSITY]))?,
    })
}

pub fn fit_outcome(train: &Dataset, spec: &LearnerSpec, seed: u64) -> Result<OutcomeModel> {
    let singleton_col = train.clusters().iter().any(|c| c.n() == 1);
    let (x, y) = outcome_design(train.clusters(), singleton_col);
    Ok(OutcomeModel {
        fit: fit_binary(&x, &y, spec, rng::derive_seed(seed, &[rng::tag::OUTCOME]))?,
        singleton_col,
    })
}

/// `ĝ_j(t, k)` for every unit `j`, own treatment `t` and number `k` of
/// treated co-members. Under the featurization `G_j(a)` depends on `a` only
/// through `(a_j, Σ_{l≠j} a_l)`, so this table answers every lattice query.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTable {
    n: usize,
    g: Vec<f64>,
}

impl OutcomeTable {
    /// `values[(j * 2 + t) * n + k]`.
    pub fn from_values(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), 2 * n * n);
        Self { n, g: values }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self::from_values(n, vec![c; 2 * n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, j: usize, t: u8, k: usize) -> f64 {
        self.g[(j * 2 + t as usize) * self.n + k]
    }

    /// `G_j(a)`.
    #[inline]
    pub fn component(&self, a: TreatmentVector, j: usize) -> f64 {
        let t = a.get(j);
        self.get(j, t, a.count() - t as usize)
    }

    /// `G(a)`.
    pub fn vector(&self, a: TreatmentVector) -> Vec<f64> {
        (0..self.n).map(|j| self.component(a, j)).collect()
    }
}

/// Source of the cluster-level nuisances the EIF needs.
pub trait Nuisance: Sync {
    /// Unit propensities, already inside `(0, 1)`.
    fn propensity(&self, cluster: &ClusterObservation) -> Vec<f64>;
    fn outcome_table(&self, cluster: &ClusterObservation) -> OutcomeTable;
}

/// Fitted propensity and outcome models for one training fold.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceModel {
    pub propensity: PropensityModel,
    pub outcome: OutcomeModel,
    pub clip_eps: f64,
    /// The estimation fold this model was fitted without.
    pub fold_id: Option<usize>,
}

impl NuisanceModel {
    pub fn fit(train: &Dataset, spec: &LearnerSpec, clip_eps: f64, seed: u64) -> Result<Self> {
        if !(clip_eps > 0.0 && clip_eps < 0.5) {
            return Err(Error::Config(format!("clip_eps must lie in (0, 0.5), got {clip_eps}")));
        }
        Ok(Self {
            propensity: fit_propensity(train, spec, seed)?,
            outcome: fit_outcome(train, spec, seed)?,
            clip_eps,
            fold_id: None,
        })
    }
}

impl Nuisance for NuisanceModel {
    fn propensity(&self, cluster: &ClusterObservation) -> Vec<f64> {
        let x = Design::new(cluster.x().to_vec(), cluster.n(), cluster.p(), vec![0; cluster.n()]);
        self.propensity
            .fit
            .predict(&x)
            .into_iter()
            .map(|p| p.clamp(self.clip_eps, 1.0 - self.clip_eps))
            .collect()
    }

    fn outcome_table(&self, cluster: &ClusterObservation) -> OutcomeTable {
        let n = cluster.n();
        let cols = outcome_cols(cluster.p(), self.outcome.singleton_col);
        let mut data = Vec::with_capacity(2 * n * n * cols);
        for j in 0..n {
            for t in 0..2u8 {
                for k in 0..n {
                    push_outcome_row(&mut data, t, k, n, cluster.x_row(j), self.outcome.singleton_col);
                }
            }
        }
        let x = Design::new(data, 2 * n * n, cols, vec![0; 2 * n * n]);
        let g = self.outcome.fit.predict(&x).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        OutcomeTable::from_values(n, g)
    }
}

/// `H(a) = Π_j π_j^{a_j}(1 − π_j)^{1 − a_j}`, accumulated in logs.
pub fn cluster_h(propensity: &[f64], a: TreatmentVector) -> f64 {
    ln_cluster_h(propensity, a).exp()
}

pub fn ln_cluster_h(propensity: &[f64], a: TreatmentVector) -> f64 {
    propensity
        .iter()
        .enumerate()
        .map(|(j, &p)| if a.get(j) == 1 { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

/// `G(a)` from a fitted model.
pub fn cluster_g(model: &dyn Nuisance, cluster: &ClusterObservation, a: TreatmentVector) -> Vec<f64> {
    model.outcome_table(cluster).vector(a)
}
