//! Treated-proportion bound: the observed joint treatment law restricted to
//! vectors whose treated share is at least ρ, then renormalized.

use super::{ClusterPolicy, TPB_MASS_FLOOR};
use crate::data::TreatmentVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TpbPolicy {
    pi: Vec<f64>,
    ln_mass: Vec<[f64; 2]>,
    /// Smallest admissible treated count.
    kmin: usize,
    /// `ℙ(Ā ≥ ρ | X, N)` after flooring.
    mass: f64,
    floored: bool,
    observed: TreatmentVector,
    observed_admissible: bool,
}

/// Distribution of the number of successes among independent Bernoulli(p_l).
pub fn poisson_binomial(p: &[f64]) -> Vec<f64> {
    let mut dist = vec![0.0; p.len() + 1];
    dist[0] = 1.0;
    for (i, &q) in p.iter().enumerate() {
        for k in (1..=i + 1).rev() {
            dist[k] = dist[k] * (1.0 - q) + dist[k - 1] * q;
        }
        dist[0] *= 1.0 - q;
    }
    dist
}

/// Smallest `k` with `k / n ≥ ρ`, tolerant to rounding in `ρ n`.
pub fn min_admissible(n: usize, rho: f64) -> usize {
    (0..=n)
        .find(|&k| k as f64 / n as f64 >= rho - 1e-12)
        .unwrap_or(n + 1)
}

impl TpbPolicy {
    pub fn new(rho: f64, propensity: &[f64], observed: TreatmentVector) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Domain(format!("rho must lie in [0, 1], got {rho}")));
        }
        let n = propensity.len();
        let kmin = min_admissible(n, rho);
        let dist = poisson_binomial(propensity);
        let raw: f64 = dist.iter().skip(kmin).sum();
        if !(raw > 0.0) {
            return Err(Error::DegenerateDenominator(raw));
        }
        let floored = raw < TPB_MASS_FLOOR;
        let ln_mass = propensity.iter().map(|&q| [(1.0 - q).ln(), q.ln()]).collect();
        Ok(Self {
            pi: propensity.to_vec(),
            ln_mass,
            kmin,
            mass: raw.max(TPB_MASS_FLOOR),
            floored,
            observed,
            observed_admissible: observed.count() >= kmin,
        })
    }

    pub fn floored(&self) -> bool {
        self.floored
    }

    /// Admissible-set mass used as the denominator.
    pub fn admissible_mass(&self) -> f64 {
        self.mass
    }

    #[inline]
    fn adm(&self, k: usize) -> bool {
        k >= self.kmin
    }

    fn ln_h(&self, a: TreatmentVector) -> f64 {
        (0..self.pi.len()).map(|l| self.ln_mass[l][a.get(l) as usize]).sum()
    }

    #[inline]
    fn unit_mass(&self, j: usize, t: u8) -> f64 {
        if t == 1 {
            self.pi[j]
        } else {
            1.0 - self.pi[j]
        }
    }

    /// `φ_Q` at the vector with unit `j` set to `t`, given `H` of that vector.
    #[inline]
    fn phi_at(&self, admissible: bool, is_observed: bool, h: f64) -> f64 {
        if !admissible {
            return 0.0;
        }
        let ind = if is_observed { self.mass } else { 0.0 };
        let obs = if self.observed_admissible { h } else { 0.0 };
        (ind - obs) / (self.mass * self.mass)
    }

    fn marginal_pair(&self, a: TreatmentVector, j: usize, h_minus: f64) -> (f64, f64) {
        let k = a.count() - a.get(j) as usize;
        let agrees = a.agrees_except(self.observed, j);
        let mut q = 0.0;
        let mut phi = 0.0;
        for t in 0..2u8 {
            let adm = self.adm(k + t as usize);
            let h = h_minus * self.unit_mass(j, t);
            if adm {
                q += h / self.mass;
            }
            phi += self.phi_at(adm, agrees && self.observed.get(j) == t, h);
        }
        (q, phi)
    }
}

impl ClusterPolicy for TpbPolicy {
    fn n(&self) -> usize {
        self.pi.len()
    }

    fn point_mass(&self) -> f64 {
        if self.observed_admissible {
            1.0 / self.mass
        } else {
            0.0
        }
    }

    fn ln_prob(&self, a: TreatmentVector) -> f64 {
        if self.adm(a.count()) {
            self.ln_h(a) - self.mass.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn prob_marginal(&self, a: TreatmentVector, j: usize) -> f64 {
        let h_minus = (self.ln_h(a) - self.ln_mass[j][a.get(j) as usize]).exp();
        self.marginal_pair(a, j, h_minus).0
    }

    fn phi(&self, a: TreatmentVector) -> f64 {
        self.phi_at(self.adm(a.count()), a == self.observed, self.ln_h(a).exp())
    }

    fn phi_marginal(&self, a: TreatmentVector, j: usize) -> f64 {
        let h_minus = (self.ln_h(a) - self.ln_mass[j][a.get(j) as usize]).exp();
        self.marginal_pair(a, j, h_minus).1
    }

    fn visit(&self, a: TreatmentVector, marginal: &mut [f64]) -> (f64, f64) {
        let ln_h = self.ln_h(a);
        for (j, m) in marginal.iter_mut().enumerate() {
            let h_minus = (ln_h - self.ln_mass[j][a.get(j) as usize]).exp();
            let (q, phi) = self.marginal_pair(a, j, h_minus);
            *m = q + phi;
        }
        let h = ln_h.exp();
        let adm = self.adm(a.count());
        let q = if adm { h / self.mass } else { 0.0 };
        (q, self.phi_at(adm, a == self.observed, h))
    }
}
