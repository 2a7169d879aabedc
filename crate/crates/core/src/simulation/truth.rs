//! Ground-truth estimand values under the simulation design.
//!
//! For a cluster with known `π` and `g`, the lattice sum `Σ_a w(a)ᵀ G(a)`
//! collapses: `G_j(a)` depends on `a` only through `(a_j, k_(-j))`, and
//! under a product-form policy `k_(-j)` is Poisson-binomial over the other
//! units' shifted probabilities. The treated-proportion policy reweights the
//! same law by `1{k ≥ k_min} / P`. Each cluster therefore costs `O(n³)`.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_covariates, oracle_table, true_propensity, DgpConfig};
use crate::data::{enumerate_treatments, TreatmentVector};
use crate::error::Result;
use crate::estimator::{distinct_policies, ClusterEif, EstimandSpec};
use crate::policies::{min_admissible, poisson_binomial, BoundPolicy, ClusterContext, ClusterPolicy, PolicySpec, WeightKind};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub truth: f64,
    pub mc_se: f64,
}

fn context<'a>(n: usize, x: &'a [f64], pi: &'a [f64]) -> ClusterContext<'a> {
    ClusterContext {
        n,
        p: 3,
        x,
        propensity: pi,
        observed: TreatmentVector::new(0, n),
    }
}

/// Exact `(μ, μ₁, μ₀)` contributions of one cluster with covariates `x`
/// (row-major `[x1, x2, c]`), for each policy.
pub fn cluster_truth(n: usize, x: &[f64], policies: &[PolicySpec]) -> Result<Vec<ClusterEif>> {
    let pi: Vec<f64> = (0..n).map(|j| true_propensity(&x[3 * j..3 * j + 3])).collect();
    let table = oracle_table(n, x);
    let nf = n as f64;
    let ctx = context(n, x, &pi);
    policies
        .iter()
        .map(|spec| {
            // Unit treatment law and the admissibility reweighting.
            let (p, admissible): (Vec<f64>, Option<(usize, f64)>) = match spec {
                PolicySpec::Tpb { rho } => {
                    let kmin = min_admissible(n, *rho);
                    let mass: f64 = poisson_binomial(&pi).iter().skip(kmin).sum();
                    (pi.clone(), Some((kmin, mass)))
                }
                _ => match spec.bind(&ctx)? {
                    BoundPolicy::Product(b) => (b.shifted().to_vec(), None),
                    BoundPolicy::Tpb(_) => unreachable!("only the treated-proportion policy binds to Tpb"),
                },
            };
            let adm = |k: usize| match admissible {
                Some((kmin, mass)) => {
                    if k >= kmin {
                        1.0 / mass
                    } else {
                        0.0
                    }
                }
                None => 1.0,
            };
            let mut out = ClusterEif::default();
            let mut others = Vec::with_capacity(n.saturating_sub(1));
            for j in 0..n {
                others.clear();
                others.extend(p.iter().enumerate().filter(|&(l, _)| l != j).map(|(_, &v)| v));
                let pb = poisson_binomial(&others);
                for (k, &w) in pb.iter().enumerate() {
                    let (g1, g0) = (table.get(j, 1, k), table.get(j, 0, k));
                    let (q1, q0) = (p[j] * w * adm(k + 1), (1.0 - p[j]) * w * adm(k));
                    out.mu += q1 * g1 + q0 * g0;
                    // Q(a_(-j)) sums both completions of unit j.
                    let marginal = q1 + q0;
                    out.mu1 += marginal * g1;
                    out.mu0 += marginal * g0;
                }
            }
            out.mu /= nf;
            out.mu1 /= nf;
            out.mu0 /= nf;
            Ok(out)
        })
        .collect()
}

/// The same quantities by brute-force enumeration of `Σ_a w(a)ᵀ G(a)`.
pub fn truth_by_enumeration(n: usize, x: &[f64], policies: &[PolicySpec]) -> Result<Vec<ClusterEif>> {
    let pi: Vec<f64> = (0..n).map(|j| true_propensity(&x[3 * j..3 * j + 3])).collect();
    let table = oracle_table(n, x);
    let ctx = context(n, x, &pi);
    policies
        .iter()
        .map(|spec| {
            let b = spec.bind(&ctx)?;
            let mut out = ClusterEif::default();
            for a in enumerate_treatments(n) {
                let g = table.vector(a);
                let dot = |w: Vec<f64>| w.iter().zip(&g).map(|(w, g)| w * g).sum::<f64>();
                out.mu += dot(b.weight(WeightKind::Mu, a));
                out.mu1 += dot(b.weight(WeightKind::MuTreated, a));
                out.mu0 += dot(b.weight(WeightKind::MuUntreated, a));
            }
            Ok(out)
        })
        .collect()
}

const CHUNK: usize = 2000;

/// Monte Carlo truths over `mc_clusters` draws of `(X, N)`, with
/// contrasts formed per cluster so their standard errors reflect the
/// pairing.
pub fn true_values(
    estimands: &[EstimandSpec],
    dgp: &DgpConfig,
    mc_clusters: usize,
    seed: u64,
) -> Result<Vec<Truth>> {
    dgp.validate()?;
    let policies = distinct_policies(estimands);
    let index = |p: &PolicySpec| policies.iter().position(|q| q == p).expect("registered");
    let terms: Vec<_> = estimands
        .iter()
        .map(|e| {
            let (plus, minus) = e.terms();
            ((index(plus.0), plus.1), minus.map(|m| (index(m.0), m.1)))
        })
        .collect();
    let chunks: Vec<(usize, usize)> = (0..mc_clusters)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(mc_clusters)))
        .collect();
    let partial: Vec<Vec<(f64, f64)>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = vec![(0.0, 0.0); terms.len()];
            for i in lo..hi {
                let mut r = rng::stream(seed, &[rng::tag::TRUTH, i as u64]);
                let (n, x) = draw_covariates(&mut r, dgp.size_dist);
                let vals = cluster_truth(n, &x, &policies)?;
                for (a, ((pi, pc), minus)) in acc.iter_mut().zip(&terms) {
                    let mut v = pc.pick(&vals[*pi]);
                    if let Some((mi, mc)) = minus {
                        v -= mc.pick(&vals[*mi]);
                    }
                    a.0 += v;
                    a.1 += v * v;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let total = mc_clusters as f64;
    Ok((0..terms.len())
        .map(|e| {
            let (s, ss) = partial.iter().fold((0.0, 0.0), |(a, b), p| (a + p[e].0, b + p[e].1));
            let mean = s / total;
            let var = (ss / total - mean * mean).max(0.0) * total / (total - 1.0).max(1.0);
            Truth {
                truth: mean,
                mc_se: (var / total).sqrt(),
            }
        })
        .collect())
}

pub fn true_value(estimand: &EstimandSpec, dgp: &DgpConfig, mc_clusters: usize, seed: u64) -> Result<Truth> {
    Ok(true_values(std::slice::from_ref(estimand), dgp, mc_clusters, seed)?[0])
}

/// Truths stored on disk, keyed by estimand, size distribution, Monte
/// Carlo size and seed.
#[derive(Debug, Clone, Default)]
pub struct TruthCache {
    entries: BTreeMap<String, Truth>,
}

impl TruthCache {
    pub fn key(estimand: &EstimandSpec, dgp: &DgpConfig, mc_clusters: usize, seed: u64) -> String {
        format!("{}|{}|{}|{}", estimand.label(), dgp.size_dist, mc_clusters, seed)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path)?;
        Ok(Self {
            entries: serde_json::from_str(&text)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(&self.entries)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<Truth> {
        self.entries.get(key).copied()
    }

    pub fn insert(&mut self, key: String, truth: Truth) {
        self.entries.insert(key, truth);
    }
}

/// [`true_values`] backed by a cache file: only missing entries are
/// computed, and the file is rewritten when anything new was added.
pub fn true_values_cached(
    estimands: &[EstimandSpec],
    dgp: &DgpConfig,
    mc_clusters: usize,
    seed: u64,
    cache_path: Option<&Path>,
) -> Result<Vec<Truth>> {
    let Some(path) = cache_path else {
        return true_values(estimands, dgp, mc_clusters, seed);
    };
    let mut cache = TruthCache::load(path)?;
    let keys: Vec<String> = estimands
        .iter()
        .map(|e| TruthCache::key(e, dgp, mc_clusters, seed))
        .collect();
    let missing: Vec<EstimandSpec> = estimands
        .iter()
        .zip(&keys)
        .filter(|(_, k)| cache.get(k).is_none())
        .map(|(e, _)| e.clone())
        .collect();
    if !missing.is_empty() {
        let fresh = true_values(&missing, dgp, mc_clusters, seed)?;
        for (e, t) in missing.iter().zip(fresh) {
            cache.insert(TruthCache::key(e, dgp, mc_clusters, seed), t);
        }
        cache.save(path)?;
    }
    Ok(keys.iter().map(|k| cache.get(k).expect("filled above")).collect())
}
