//! Per-cluster uncentered influence functions.

use crate::data::{draw_uniform, enumerate_treatments, ClusterObservation, LatticeWeight, TreatmentVector};
use crate::error::Result;
use crate::nuisance::{ln_cluster_h, Nuisance, OutcomeTable};
use crate::policies::{density_ratio, BoundPolicy, ClusterContext, ClusterPolicy, PolicySpec};
use crate::rng;

/// How the sum over a cluster's treatment lattice is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lattice {
    Exact,
    /// `r` uniform draws from the stream addressed by `seed`.
    Subsample { r: usize, seed: u64 },
}

/// Uncentered EIF values of `μ(Q)`, `μ₁(Q)` and `μ₀(Q)` for one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClusterEif {
    pub mu: f64,
    pub mu1: f64,
    pub mu0: f64,
}

/// Evaluation summary for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEval {
    /// One entry per policy, in the order given.
    pub eif: Vec<ClusterEif>,
    /// Per policy: admissible-set mass was floored.
    pub flagged: Vec<bool>,
    pub subsampled: bool,
}

/// Whether the lattice of a size-`n` cluster is enumerated under draw budget `r`.
pub fn exact_for(n: usize, r: Option<usize>) -> bool {
    match r {
        None => true,
        Some(r) => n < 63 && (1u64 << n) <= (r as u64).max(4096),
    }
}

/// Evaluate every policy on one cluster in a single pass over the lattice.
pub fn evaluate_cluster(
    cluster: &ClusterObservation,
    propensity: &[f64],
    table: &OutcomeTable,
    policies: &[PolicySpec],
    lattice: Lattice,
) -> Result<ClusterEval> {
    let n = cluster.n();
    let ctx = ClusterContext::new(cluster, propensity);
    let bound: Vec<BoundPolicy> = policies.iter().map(|p| p.bind(&ctx)).collect::<Result<_>>()?;

    let obs = cluster.treatments();
    let subsampled = matches!(lattice, Lattice::Subsample { .. });
    // Point masses at the observed vector are summed exactly when subsampling.
    let dirac: Vec<f64> = bound
        .iter()
        .map(|b| if subsampled { b.point_mass() } else { 0.0 })
        .collect();
    let mut sums = vec![[0.0f64; 3]; bound.len()];
    let mut g = vec![0.0; n];
    let mut marginal = vec![0.0; n];
    let mut visit = |a: TreatmentVector| {
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = table.component(a, j);
        }
        let g_bar = g.iter().sum::<f64>() / n as f64;
        let diff = a.bits() ^ obs.bits();
        for ((b, s), &c) in bound.iter().zip(sums.iter_mut()).zip(&dirac) {
            let (q, phi) = b.visit(a, &mut marginal);
            s[0] += (q + phi) * g_bar;
            for j in 0..n {
                s[2 - a.get(j) as usize] += marginal[j] * g[j];
            }
            if c != 0.0 && diff.count_ones() <= 1 {
                if diff == 0 {
                    s[0] -= c * g_bar;
                }
                for j in 0..n {
                    if diff == 0 || diff == 1 << j {
                        s[2 - a.get(j) as usize] -= c * g[j];
                    }
                }
            }
        }
    };
    let weight = match lattice {
        Lattice::Exact => {
            enumerate_treatments(n).for_each(&mut visit);
            LatticeWeight::exact()
        }
        Lattice::Subsample { r, seed } => {
            let mut stream = rng::stream(seed, &[rng::tag::SUBSAMPLE]);
            draw_uniform(&mut stream, n, r).into_iter().for_each(&mut visit);
            LatticeWeight::uniform(n, r)
        }
    };

    let ln_h = ln_cluster_h(propensity, obs);
    let g_obs = table.vector(obs);
    let g_obs_bar = g_obs.iter().sum::<f64>() / n as f64;
    let k_obs = obs.count();
    let (mut g1_obs, mut g0_obs) = (0.0, 0.0);
    for j in 0..n {
        let k = k_obs - obs.get(j) as usize;
        g1_obs += table.get(j, 1, k);
        g0_obs += table.get(j, 0, k);
    }
    let resid: Vec<f64> = cluster.y().iter().zip(&g_obs).map(|(y, g)| y - g).collect();
    let resid_bar = resid.iter().sum::<f64>() / n as f64;
    let nf = n as f64;
    let eif = bound
        .iter()
        .zip(&sums)
        .zip(&dirac)
        .map(|((b, s), &c)| {
            let mut out = ClusterEif {
                mu: weight.apply(s[0]) + c * g_obs_bar + density_ratio(b.ln_prob(obs), ln_h) * resid_bar,
                mu1: (weight.apply(s[1]) + c * g1_obs) / nf,
                mu0: (weight.apply(s[2]) + c * g0_obs) / nf,
            };
            for j in 0..n {
                let qm = b.prob_marginal(obs, j);
                let c = density_ratio(qm.ln(), ln_h) * resid[j] / nf;
                if obs.get(j) == 1 {
                    out.mu1 += c;
                } else {
                    out.mu0 += c;
                }
            }
            out
        })
        .collect();
    Ok(ClusterEval {
        eif,
        flagged: bound.iter().map(BoundPolicy::flagged).collect(),
        subsampled,
    })
}

fn one(
    cluster: &ClusterObservation,
    nuisance: &dyn Nuisance,
    spec: &PolicySpec,
    lattice: Lattice,
) -> Result<ClusterEif> {
    let pi = nuisance.propensity(cluster);
    let table = nuisance.outcome_table(cluster);
    Ok(evaluate_cluster(cluster, &pi, &table, std::slice::from_ref(spec), lattice)?.eif[0])
}

/// Uncentered EIF of `μ(Q)` at one cluster.
pub fn uncentered_eif_mu(
    cluster: &ClusterObservation,
    nuisance: &dyn Nuisance,
    spec: &PolicySpec,
    lattice: Lattice,
) -> Result<f64> {
    Ok(one(cluster, nuisance, spec, lattice)?.mu)
}

/// Uncentered EIF of `μ_t(Q)` at one cluster.
pub fn uncentered_eif_mu_t(
    cluster: &ClusterObservation,
    nuisance: &dyn Nuisance,
    spec: &PolicySpec,
    t: u8,
    lattice: Lattice,
) -> Result<f64> {
    let e = one(cluster, nuisance, spec, lattice)?;
    Ok(if t == 1 { e.mu1 } else { e.mu0 })
}
