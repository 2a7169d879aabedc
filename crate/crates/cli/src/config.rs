//! TOML run configurations for the three commands.

use std::path::{Path, PathBuf};

use clustereif::data::CsvSchema;
use clustereif::estimator::{linspace, EstimandSpec, EstimatorConfig};
use clustereif::policies::PolicySpec;
use clustereif::simulation::{DgpConfig, EstimatorKind};
use clustereif::{Error, Result};
use serde::Deserialize;

/// A policy swept over its scalar parameter.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Any policy of the family; its own parameter is replaced by the grid.
    pub policy: String,
    pub from: f64,
    pub to: f64,
    pub points: usize,
    /// Comparison policy for contrasts, overriding the top-level one.
    pub reference: Option<String>,
}

/// Policies and estimand kinds shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Targets {
    pub estimands: Vec<String>,
    pub policies: Vec<String>,
    pub reference: Option<String>,
    pub grid: Vec<GridSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub schema: CsvSchema,
    pub estimands: Vec<String>,
    pub policies: Vec<String>,
    pub reference: Option<String>,
    pub grid: Vec<GridSpec>,
    pub estimator: EstimatorConfig,
    pub paths: Paths,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(rename = "D")]
    pub d: usize,
    pub dgp: DgpConfig,
    pub estimators: Vec<String>,
    pub estimands: Vec<String>,
    pub policies: Vec<String>,
    pub reference: Option<String>,
    pub grid: Vec<GridSpec>,
    pub estimator: EstimatorConfig,
    pub truth_mc: usize,
    pub truth_seed: u64,
    pub truth_cache: Option<PathBuf>,
    pub paths: Paths,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            d: 100,
            dgp: DgpConfig::default(),
            estimators: vec!["nss".into()],
            estimands: Vec::new(),
            policies: Vec::new(),
            reference: None,
            grid: Vec::new(),
            estimator: EstimatorConfig::default(),
            truth_mc: 200_000,
            truth_seed: 0,
            truth_cache: None,
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub dgp: DgpConfig,
    pub estimands: Vec<String>,
    pub policies: Vec<String>,
    pub reference: Option<String>,
    pub grid: Vec<GridSpec>,
    pub truth_mc: usize,
    pub truth_seed: u64,
    pub truth_cache: Option<PathBuf>,
    pub paths: Paths,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            estimands: Vec::new(),
            policies: Vec::new(),
            reference: None,
            grid: Vec::new(),
            truth_mc: 200_000,
            truth_seed: 0,
            truth_cache: None,
            paths: Paths::default(),
        }
    }
}

macro_rules! targets {
    ($($t:ty),*) => {$(
        impl $t {
            pub fn targets(&self) -> Targets {
                Targets {
                    estimands: self.estimands.clone(),
                    policies: self.policies.clone(),
                    reference: self.reference.clone(),
                    grid: self.grid.clone(),
                }
            }
        }
    )*};
}

targets!(EstimateConfig, SimulateConfig, TruthConfig);

pub fn load<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl Targets {
    /// Command-line values replace the configured ones when given.
    pub fn override_with(&mut self, policies: &[String], estimands: &[String]) {
        if !policies.is_empty() {
            self.policies = policies.to_vec();
            self.grid.clear();
        }
        if !estimands.is_empty() {
            self.estimands = estimands.to_vec();
        }
    }

    /// Expand grids and pair every estimand kind with every policy, kind
    /// by kind. `columns` names the covariates a policy may refer to.
    pub fn resolve(&self, columns: &[String]) -> Result<Vec<EstimandSpec>> {
        if self.estimands.is_empty() {
            return Err(Error::Config("no estimands requested".into()));
        }
        let parse = |s: &str| PolicySpec::parse(s, columns);
        let reference = self.reference.as_deref().map(parse).transpose()?;
        let mut pairs = Vec::new();
        for p in &self.policies {
            pairs.push((parse(p)?, reference.clone()));
        }
        for g in &self.grid {
            if g.points == 0 {
                return Err(Error::Config(format!("grid over `{}` has no points", g.policy)));
            }
            let base = parse(&g.policy)?;
            let r = match &g.reference {
                Some(r) => Some(parse(r)?),
                None => reference.clone(),
            };
            for v in linspace(g.from, g.to, g.points) {
                let q = base.with_param(v);
                q.check()?;
                pairs.push((q, r.clone()));
            }
        }
        if pairs.is_empty() {
            return Err(Error::Config("no policies given".into()));
        }
        let mut out = Vec::with_capacity(self.estimands.len() * pairs.len());
        for kind in &self.estimands {
            for (q, r) in &pairs {
                out.push(EstimandSpec::from_kind(kind, q.clone(), r.clone())?);
            }
        }
        Ok(out)
    }
}

pub fn estimator_kinds(names: &[String]) -> Result<Vec<EstimatorKind>> {
    if names.is_empty() {
        return Err(Error::Config("no estimators requested".into()));
    }
    names.iter().map(|n| n.parse()).collect()
}
