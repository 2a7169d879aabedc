//! Simulation design: the data-generating process, its oracle nuisances,
//! ground-truth estimand values, and the replication benchmark.
//!
//! Cluster `i` has size `N_i`, a cluster-level `C_i ~ N(0, 1)`, and units
//! with `X1 ~ N(0, 1)`, `X2 ~ Bernoulli(0.5)`. Treatment and outcome follow
//!
//! ```text
//! P(A = 1) = expit(0.1 + 0.2|X1| + 0.2|X1|X2 + 0.1·1{C > 0})
//! P(Y = 1) = expit(3 − 2A − Ā_(-j) − 1.5|X1| + 2X2 − 3|X1|X2 − 2·1{C > 0})
//! ```
//!
//! Stored covariates are the raw `[x1, x2, c]`.

mod benchmark;
mod truth;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use benchmark::{
    metrics, run_benchmark, run_r_sensitivity, write_benchmark_csv, write_benchmark_table, BenchmarkConfig, BenchmarkResult,
    EstimatorKind, MetricRow, Metrics, Replicate,
};
pub use truth::{
    cluster_truth, true_value, true_values, true_values_cached, truth_by_enumeration, Truth, TruthCache,
};

use crate::data::{ClusterObservation, Dataset, DEFAULT_N_MAX};
use crate::nuisance::{Nuisance, OutcomeTable};
use crate::rng;

pub const COLUMNS: [&str; 3] = ["x1", "x2", "c"];

#[inline]
fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// True propensity from a stored covariate row `[x1, x2, c]`.
pub fn true_propensity(x: &[f64]) -> f64 {
    let ax = x[0].abs();
    let cpos = f64::from(u8::from(x[2] > 0.0));
    expit(0.1 + 0.2 * ax + 0.2 * ax * x[1] + 0.1 * cpos)
}

/// True `E(Y_j | a_j, ā_(-j), x_j)`.
pub fn true_outcome(a: u8, a_bar_others: f64, x: &[f64]) -> f64 {
    let ax = x[0].abs();
    let cpos = f64::from(u8::from(x[2] > 0.0));
    expit(3.0 - 2.0 * f64::from(a) - a_bar_others - 1.5 * ax + 2.0 * x[1] - 3.0 * ax * x[1] - 2.0 * cpos)
}

/// Distribution of cluster sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SizeDist {
    /// Uniform on `{lo, …, hi}`.
    Uniform { lo: usize, hi: usize },
    Point(usize),
}

impl SizeDist {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        match *self {
            SizeDist::Uniform { lo, hi } => rng.random_range(lo..=hi),
            SizeDist::Point(n) => n,
        }
    }

    pub fn support(&self) -> (usize, usize) {
        match *self {
            SizeDist::Uniform { lo, hi } => (lo, hi),
            SizeDist::Point(n) => (n, n),
        }
    }
}

impl Default for SizeDist {
    fn default() -> Self {
        SizeDist::Uniform { lo: 5, hi: 20 }
    }
}

impl fmt::Display for SizeDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeDist::Uniform { lo, hi } => write!(f, "uniform:{lo}-{hi}"),
            SizeDist::Point(n) => write!(f, "point:{n}"),
        }
    }
}

impl FromStr for SizeDist {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        let bad = || crate::Error::Config(format!("bad size distribution `{s}` (try uniform:5-20 or point:3)"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "point" => Ok(SizeDist::Point(rest.parse().map_err(|_| bad())?)),
            "uniform" => {
                let (lo, hi) = rest.split_once('-').ok_or_else(bad)?;
                let (lo, hi) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
                if lo > hi {
                    return Err(bad());
                }
                Ok(SizeDist::Uniform { lo, hi })
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for SizeDist {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SizeDist {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub m: usize,
    pub size_dist: SizeDist,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            m: 500,
            size_dist: SizeDist::default(),
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let (lo, hi) = self.size_dist.support();
        if lo < 1 || hi > DEFAULT_N_MAX {
            return Err(crate::Error::Config(format!(
                "cluster sizes must lie in [1, {DEFAULT_N_MAX}], got {}",
                self.size_dist
            )));
        }
        if self.m == 0 {
            return Err(crate::Error::Config("m must be positive".into()));
        }
        Ok(())
    }
}

/// Covariates of one cluster, row-major `[x1, x2, c]`.
pub(crate) fn draw_covariates<R: Rng>(rng: &mut R, size: SizeDist) -> (usize, Vec<f64>) {
    let n = size.draw(rng);
    let c: f64 = rng.sample(StandardNormal);
    let mut x = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let x1: f64 = rng.sample(StandardNormal);
        let x2 = f64::from(u8::from(rng.random::<f64>() < 0.5));
        x.extend([x1, x2, c]);
    }
    (n, x)
}

/// Draw one dataset. Cluster `i` uses its own stream, so any cluster can be
/// regenerated alone. All treatments are drawn before any outcome.
pub fn generate_dgp(cfg: &DgpConfig) -> Dataset {
    let clusters = (0..cfg.m)
        .map(|i| {
            let mut r = rng::stream(cfg.seed, &[rng::tag::DGP, i as u64]);
            let (n, x) = draw_covariates(&mut r, cfg.size_dist);
            let a: Vec<u8> = (0..n)
                .map(|j| u8::from(r.random::<f64>() < true_propensity(&x[3 * j..3 * j + 3])))
                .collect();
            let total: usize = a.iter().map(|&v| v as usize).sum();
            let y: Vec<f64> = (0..n)
                .map(|j| {
                    let others = if n > 1 {
                        (total - a[j] as usize) as f64 / (n - 1) as f64
                    } else {
                        0.0
                    };
                    let p = true_outcome(a[j], others, &x[3 * j..3 * j + 3]);
                    f64::from(u8::from(r.random::<f64>() < p))
                })
                .collect();
            ClusterObservation::new(format!("{i}"), y, a, x, 3).expect("generated cluster is well formed")
        })
        .collect();
    Dataset::from_clusters(clusters, COLUMNS.iter().map(|s| s.to_string()).collect(), DEFAULT_N_MAX)
        .expect("generated dataset is well formed")
}

/// The data-generating nuisances, evaluated analytically.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleNuisance;

impl Nuisance for OracleNuisance {
    fn propensity(&self, cluster: &ClusterObservation) -> Vec<f64> {
        (0..cluster.n()).map(|j| true_propensity(cluster.x_row(j))).collect()
    }

    fn outcome_table(&self, cluster: &ClusterObservation) -> OutcomeTable {
        oracle_table(cluster.n(), cluster.x())
    }
}

pub(crate) fn oracle_table(n: usize, x: &[f64]) -> OutcomeTable {
    let mut g = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        let row = &x[3 * j..3 * j + 3];
        for t in 0..2u8 {
            for k in 0..n {
                let others = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
                g.push(true_outcome(t, others, row));
            }
        }
    }
    OutcomeTable::from_values(n, g)
}

#[cfg(test)]
mod tests;
