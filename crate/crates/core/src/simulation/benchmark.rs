use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_dgp, true_values_cached, DgpConfig, OracleNuisance, Truth};
use crate::error::{Error, Result};
use crate::estimator::{
    cross_fit, estimate, estimate_from_fit, estimate_ipw, estimate_with_nuisance, Draws, EstimandSpec,
    EstimateReport, EstimatorConfig,
};
use crate::nuisance::LearnerSpec;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Cross-fitted, with the configured learner library.
    Nss,
    /// Cross-fitted, main-effects logistic regression only.
    Pss,
    Ipw,
    /// True nuisances, no fitting.
    Oracle,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Nss => "nss",
            EstimatorKind::Pss => "pss",
            EstimatorKind::Ipw => "ipw",
            EstimatorKind::Oracle => "oracle",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nss" => Ok(EstimatorKind::Nss),
            "pss" => Ok(EstimatorKind::Pss),
            "ipw" => Ok(EstimatorKind::Ipw),
            "oracle" => Ok(EstimatorKind::Oracle),
            other => Err(Error::Config(format!(
                "unknown estimator `{other}` (expected nss, pss, ipw or oracle)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    /// Number of simulated datasets.
    pub d: usize,
    pub dgp: DgpConfig,
    pub estimands: Vec<EstimandSpec>,
    pub estimators: Vec<EstimatorKind>,
    pub estimator: EstimatorConfig,
    pub truth_mc: usize,
    pub truth_seed: u64,
    pub truth_cache: Option<PathBuf>,
}

impl BenchmarkConfig {
    pub fn new(d: usize, dgp: DgpConfig, estimands: Vec<EstimandSpec>) -> Self {
        Self {
            d,
            dgp,
            estimands,
            estimators: vec![EstimatorKind::Nss],
            estimator: EstimatorConfig::default(),
            truth_mc: 200_000,
            truth_seed: 0,
            truth_cache: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config(format!("D must be at least 2, got {}", self.d)));
        }
        if self.estimands.is_empty() {
            return Err(Error::Config("no estimands requested".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        if self.truth_mc < 2 {
            return Err(Error::Config("truth_mc must be at least 2".into()));
        }
        self.dgp.validate()?;
        self.estimator.validate()
    }

    /// Dataset and estimator seeds of replication `d`.
    fn replicate_seeds(&self, d: usize) -> (DgpConfig, u64) {
        let dgp = DgpConfig {
            seed: rng::derive_seed(self.dgp.seed, &[rng::tag::REPLICATION, d as u64]),
            ..self.dgp.clone()
        };
        (dgp, rng::derive_seed(self.estimator.seed, &[rng::tag::REPLICATION, d as u64]))
    }
}

/// One estimator's output on one simulated dataset, per estimand.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub estimator: EstimatorKind,
    pub replication: usize,
    pub point: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
}

impl Replicate {
    fn from_report(estimator: EstimatorKind, replication: usize, report: &EstimateReport) -> Self {
        let col = |f: fn(&crate::estimator::EstimateResult) -> f64| report.results.iter().map(f).collect();
        Self {
            estimator,
            replication,
            point: col(|r| r.point),
            se: col(|r| r.se),
            ci_lo: col(|r| r.ci_lo),
            ci_hi: col(|r| r.ci_hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub bias: f64,
    pub rmse: f64,
    /// Mean estimated standard error.
    pub ase: f64,
    /// Standard deviation of the estimates (denominator `D − 1`).
    pub ese: f64,
    pub cov: f64,
}

/// Replication metrics against `truth`; coverage counts intervals
/// `[lo, hi]` containing it.
pub fn metrics(points: &[f64], ses: &[f64], intervals: &[(f64, f64)], truth: f64) -> Metrics {
    let d = points.len() as f64;
    let mean = points.iter().sum::<f64>() / d;
    let bias = mean - truth;
    let rmse = (points.iter().map(|p| (p - truth) * (p - truth)).sum::<f64>() / d).sqrt();
    let ese = if points.len() > 1 {
        (points.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (d - 1.0)).sqrt()
    } else {
        0.0
    };
    let ase = ses.iter().sum::<f64>() / ses.len() as f64;
    let cov = intervals.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count() as f64
        / intervals.len() as f64;
    Metrics {
        bias,
        rmse,
        ase,
        ese,
        cov,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub estimand: String,
    pub estimator: EstimatorKind,
    pub truth: f64,
    pub truth_mc_se: f64,
    pub metrics: Metrics,
    /// RMSE relative to the logit-only comparator, when it was run.
    pub rmse_ratio: Option<f64>,
    /// Replications that completed.
    pub completed: usize,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub rows: Vec<MetricRow>,
    pub truths: Vec<Truth>,
    pub replicates: Vec<Replicate>,
    /// `(estimator, replication, message)` of each failed run.
    pub failures: Vec<(EstimatorKind, usize, String)>,
}

impl BenchmarkResult {
    pub fn row(&self, estimand: &str, estimator: EstimatorKind) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.estimand == estimand && r.estimator == estimator)
    }
}

fn run_one(kind: EstimatorKind, cfg: &BenchmarkConfig, d: usize) -> Result<Replicate> {
    let (dgp, seed) = cfg.replicate_seeds(d);
    let data = generate_dgp(&dgp);
    let mut est = cfg.estimator.clone();
    est.seed = seed;
    let report = match kind {
        EstimatorKind::Nss => estimate(&data, &cfg.estimands, &est)?,
        EstimatorKind::Pss => {
            est.learner = LearnerSpec::logit_only();
            estimate(&data, &cfg.estimands, &est)?
        }
        EstimatorKind::Ipw => estimate_ipw(&data, &cfg.estimands, &est)?,
        EstimatorKind::Oracle => estimate_with_nuisance(&data, &cfg.estimands, &est, &OracleNuisance)?,
    };
    Ok(Replicate::from_report(kind, d, &report))
}

fn summarize(
    cfg: &BenchmarkConfig,
    truths: Vec<Truth>,
    outcomes: Vec<(EstimatorKind, usize, Result<Replicate>)>,
) -> BenchmarkResult {
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (kind, d, out) in outcomes {
        match out {
            Ok(r) => replicates.push(r),
            Err(e) => failures.push((kind, d, e.to_string())),
        }
    }
    let mut rows = Vec::new();
    for (e_idx, e) in cfg.estimands.iter().enumerate() {
        let truth = truths[e_idx];
        let mut block: Vec<MetricRow> = cfg
            .estimators
            .iter()
            .filter_map(|&kind| {
                let reps: Vec<&Replicate> = replicates.iter().filter(|r| r.estimator == kind).collect();
                if reps.is_empty() {
                    return None;
                }
                let points: Vec<f64> = reps.iter().map(|r| r.point[e_idx]).collect();
                let ses: Vec<f64> = reps.iter().map(|r| r.se[e_idx]).collect();
                let cis: Vec<(f64, f64)> = reps.iter().map(|r| (r.ci_lo[e_idx], r.ci_hi[e_idx])).collect();
                Some(MetricRow {
                    estimand: e.label(),
                    estimator: kind,
                    truth: truth.truth,
                    truth_mc_se: truth.mc_se,
                    metrics: metrics(&points, &ses, &cis, truth.truth),
                    rmse_ratio: None,
                    completed: reps.len(),
                })
            })
            .collect();
        if let Some(pss) = block.iter().find(|r| r.estimator == EstimatorKind::Pss).map(|r| r.metrics.rmse) {
            for r in &mut block {
                r.rmse_ratio = Some(r.metrics.rmse / pss);
            }
        }
        rows.extend(block);
    }
    BenchmarkResult {
        rows,
        truths,
        replicates,
        failures,
    }
}

/// Simulate `D` datasets and run every requested estimator on each.
/// Replication `d` draws its data and sample splits from seeds derived
/// from `d`, so any replication can be rerun alone.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    cfg.validate()?;
    let truths = true_values_cached(
        &cfg.estimands,
        &cfg.dgp,
        cfg.truth_mc,
        cfg.truth_seed,
        cfg.truth_cache.as_deref(),
    )?;
    let jobs: Vec<(EstimatorKind, usize)> = (0..cfg.d)
        .flat_map(|d| cfg.estimators.iter().map(move |&k| (k, d)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(kind, d)| (kind, d, run_one(kind, cfg, d)))
        .collect();
    Ok(summarize(cfg, truths, outcomes))
}

/// The cross-fitted ensemble estimator at several lattice budgets, with
/// the nuisance fits of each replication shared across budgets.
pub fn run_r_sensitivity(cfg: &BenchmarkConfig, budgets: &[usize]) -> Result<Vec<(usize, BenchmarkResult)>> {
    cfg.validate()?;
    let truths = true_values_cached(
        &cfg.estimands,
        &cfg.dgp,
        cfg.truth_mc,
        cfg.truth_seed,
        cfg.truth_cache.as_deref(),
    )?;
    let per_rep: Vec<Vec<Result<Replicate>>> = (0..cfg.d)
        .into_par_iter()
        .map(|d| {
            let (dgp, seed) = cfg.replicate_seeds(d);
            let data = generate_dgp(&dgp);
            let mut est = cfg.estimator.clone();
            est.seed = seed;
            let fit = match cross_fit(&data, &est) {
                Ok(f) => f,
                Err(e) => {
                    let msg = e.to_string();
                    return budgets.iter().map(|_| Err(Error::Fit(msg.clone()))).collect();
                }
            };
            budgets
                .iter()
                .map(|&r| {
                    let cfg_r = EstimatorConfig {
                        r: Draws::Subsample(r),
                        ..est.clone()
                    };
                    let report = estimate_from_fit(&data, &cfg.estimands, &cfg_r, &fit)?;
                    Ok(Replicate::from_report(EstimatorKind::Nss, d, &report))
                })
                .collect()
        })
        .collect();
    let nss_cfg = BenchmarkConfig {
        estimators: vec![EstimatorKind::Nss],
        ..cfg.clone()
    };
    let mut per_rep: Vec<_> = per_rep.into_iter().map(|v| v.into_iter()).collect();
    Ok(budgets
        .iter()
        .map(|&r| {
            let outcomes = per_rep
                .iter_mut()
                .enumerate()
                .map(|(d, it)| (EstimatorKind::Nss, d, it.next().expect("one result per budget")))
                .collect();
            (r, summarize(&nss_cfg, truths.clone(), outcomes))
        })
        .collect())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    estimand: &'a str,
    estimator: String,
    truth: f64,
    bias: f64,
    rmse: f64,
    ase: f64,
    ese: f64,
    cov: f64,
    rmse_ratio: Option<f64>,
}

/// Table-layout CSV: one row per (estimand, estimator).
pub fn write_benchmark_csv(result: &BenchmarkResult, path: &Path) -> Result<()> {
    write_benchmark_table(result, std::fs::File::create(path)?)
}

pub fn write_benchmark_table(result: &BenchmarkResult, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &result.rows {
        w.serialize(CsvRow {
            estimand: &r.estimand,
            estimator: r.estimator.to_string(),
            truth: r.truth,
            bias: r.metrics.bias,
            rmse: r.metrics.rmse,
            ase: r.metrics.ase,
            ese: r.metrics.ese,
            cov: r.metrics.cov,
            rmse_ratio: r.rmse_ratio,
        })?;
    }
    w.flush()?;
    Ok(())
}
