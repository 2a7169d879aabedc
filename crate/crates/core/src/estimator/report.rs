use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Draws;
use crate::error::Result;

/// JSON Schema of the report file.
pub const REPORT_SCHEMA: &str = include_str!("report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub r: Draws,
    #[serde(rename = "S")]
    pub s: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    /// mu, mu1, mu0, de, se1, se0, oe, te
    pub estimand: String,
    /// Policy in the specification grammar; contrasts read `Q vs Q'`.
    pub policy: String,
    pub param: f64,
    pub point: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub flags: Vec<String>,
    /// Uncentered EIF per cluster (median split when several are run).
    #[serde(skip)]
    pub per_cluster_eif: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterFlags {
    pub policy: String,
    pub clusters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Clusters whose admissible-set mass was floored, by policy (first split).
    pub flagged_clusters: Vec<ClusterFlags>,
    /// Fold sizes per split.
    pub fold_sizes: Vec<Vec<usize>>,
    /// Per estimand: max minus min of the split points.
    pub split_spread: Vec<f64>,
    /// Per split: clusters whose lattice was subsampled.
    pub subsampled_clusters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub meta: ReportMeta,
    pub results: Vec<EstimateResult>,
    #[serde(skip)]
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    /// First result matching an estimand kind and policy string.
    pub fn find(&self, estimand: &str, policy: &str) -> Option<&EstimateResult> {
        self.results
            .iter()
            .find(|r| r.estimand == estimand && r.policy == policy)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn write_report(report: &EstimateReport, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(report.to_json()?.as_bytes())?;
    Ok(())
}
