//! Policies that treat units independently given the cluster:
//! `Q(a) = Π_l p_l^{a_l} (1 − p_l)^{1 − a_l}`.
//!
//! Each unit carries its shifted probability `p_l` and the influence term
//! `d_l` of `p_l`, so that `φ_Q(a) = Σ_l (Π_{i≠l} m_i)(2a_l − 1) d_l` with
//! `m_i` the Bernoulli mass of `a_i`. Masses can be exactly zero (CMS with
//! `λ = 0`), so the running state keeps the zero factors aside instead of
//! dividing by them.

use super::{shifted_propensity_cips, shifted_propensity_cms, ClusterContext, ClusterPolicy, PolicySpec};
use crate::data::TreatmentVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ProductPolicy {
    p: Vec<f64>,
    d: Vec<f64>,
    /// `ln(1 − p_l)` and `ln p_l`, `-inf` where the mass is zero.
    ln_mass: Vec<[f64; 2]>,
}

/// Product of the nonzero masses (in logs), the zero masses set aside, and
/// `Σ (2a_l − 1) d_l / m_l` over the nonzero ones.
#[derive(Debug, Clone, Copy)]
struct State {
    log_finite: f64,
    zeros: u32,
    zero_units: [usize; 2],
    ratio_sum: f64,
}

impl State {
    fn q(&self) -> f64 {
        if self.zeros == 0 {
            self.log_finite.exp()
        } else {
            0.0
        }
    }

    fn phi(&self, a: TreatmentVector, d: &[f64]) -> f64 {
        match self.zeros {
            0 => self.log_finite.exp() * self.ratio_sum,
            1 => {
                let z = self.zero_units[0];
                self.log_finite.exp() * sign(a.get(z)) * d[z]
            }
            _ => 0.0,
        }
    }
}

#[inline]
fn sign(t: u8) -> f64 {
    if t == 1 {
        1.0
    } else {
        -1.0
    }
}

impl ProductPolicy {
    pub fn new(spec: &PolicySpec, ctx: &ClusterContext<'_>) -> Result<Self> {
        let n = ctx.n;
        let obs = ctx.observed;
        let (p, d): (Vec<f64>, Vec<f64>) = match spec {
            PolicySpec::TypeB { alpha } => (vec![*alpha; n], vec![0.0; n]),
            PolicySpec::Cips { delta } => {
                let dv = delta.eval(ctx.x, ctx.p, n);
                let mut p = Vec::with_capacity(n);
                let mut d = Vec::with_capacity(n);
                for (j, &pi) in ctx.propensity.iter().enumerate() {
                    p.push(shifted_propensity_cips(pi, dv)?);
                    let den = dv * pi + 1.0 - pi;
                    d.push(dv * (f64::from(obs.get(j)) - pi) / (den * den));
                }
                (p, d)
            }
            PolicySpec::Cms { lambda, x_star, .. } => {
                let mut p = Vec::with_capacity(n);
                let mut d = Vec::with_capacity(n);
                for (j, &pi) in ctx.propensity.iter().enumerate() {
                    let xs = ctx.x[j * ctx.p + x_star];
                    p.push(shifted_propensity_cms(pi, *lambda, xs)?);
                    d.push((f64::from(obs.get(j)) - pi) * (xs * lambda + 1.0 - xs));
                }
                (p, d)
            }
            PolicySpec::Tpb { .. } => {
                return Err(Error::Domain("treated-proportion policy is not product-form".into()))
            }
        };
        let ln_mass = p.iter().map(|&q| [(1.0 - q).ln(), q.ln()]).collect();
        Ok(Self { p, d, ln_mass })
    }

    /// Per-unit shifted treatment probabilities.
    pub fn shifted(&self) -> &[f64] {
        &self.p
    }

    fn state(&self, a: TreatmentVector) -> State {
        let mut s = State {
            log_finite: 0.0,
            zeros: 0,
            zero_units: [usize::MAX; 2],
            ratio_sum: 0.0,
        };
        for l in 0..self.p.len() {
            let t = a.get(l);
            let lm = self.ln_mass[l][t as usize];
            if lm == f64::NEG_INFINITY {
                if s.zeros < 2 {
                    s.zero_units[s.zeros as usize] = l;
                }
                s.zeros += 1;
            } else {
                s.log_finite += lm;
                s.ratio_sum += sign(t) * self.d[l] / self.mass(l, t);
            }
        }
        s
    }

    #[inline]
    fn mass(&self, l: usize, t: u8) -> f64 {
        if t == 1 {
            self.p[l]
        } else {
            1.0 - self.p[l]
        }
    }

    /// State of the product over units other than `j`.
    fn without(&self, s: &State, a: TreatmentVector, j: usize) -> State {
        let t = a.get(j);
        let lm = self.ln_mass[j][t as usize];
        let mut out = *s;
        if lm == f64::NEG_INFINITY {
            out.zeros -= 1;
            if s.zero_units[0] == j {
                out.zero_units[0] = s.zero_units[1];
            }
        } else {
            out.log_finite -= lm;
            out.ratio_sum -= sign(t) * self.d[j] / self.mass(j, t);
        }
        out
    }
}

impl ClusterPolicy for ProductPolicy {
    fn n(&self) -> usize {
        self.p.len()
    }

    fn ln_prob(&self, a: TreatmentVector) -> f64 {
        (0..self.p.len()).map(|l| self.ln_mass[l][a.get(l) as usize]).sum()
    }

    fn prob(&self, a: TreatmentVector) -> f64 {
        self.state(a).q()
    }

    fn prob_marginal(&self, a: TreatmentVector, j: usize) -> f64 {
        let s = self.state(a);
        self.without(&s, a, j).q()
    }

    fn phi(&self, a: TreatmentVector) -> f64 {
        self.state(a).phi(a, &self.d)
    }

    fn phi_marginal(&self, a: TreatmentVector, j: usize) -> f64 {
        let s = self.state(a);
        self.without(&s, a, j).phi(a, &self.d)
    }

    fn visit(&self, a: TreatmentVector, marginal: &mut [f64]) -> (f64, f64) {
        let s = self.state(a);
        for (j, m) in marginal.iter_mut().enumerate() {
            let w = self.without(&s, a, j);
            *m = w.q() + w.phi(a, &self.d);
        }
        (s.q(), s.phi(a, &self.d))
    }
}
