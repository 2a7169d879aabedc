//! Main-effects logistic regression fitted by iteratively reweighted least
//! squares.

use nalgebra::{DMatrix, DVector};

use super::Design;

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
/// Penalty used when the unpenalized fit fails (separation or a singular
/// information matrix).
const FALLBACK_RIDGE: f64 = 1e-2;
/// Linear predictor beyond which a fitted probability is treated as 0 or 1.
const SEPARATION_Z: f64 = 23.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitModel {
    /// Intercept first, then one coefficient per feature.
    pub beta: Vec<f64>,
    /// Inverse observed information at the solution, row-major.
    pub covariance: Vec<f64>,
    /// Ridge penalty in effect (0 for the plain maximum-likelihood fit).
    pub ridge: f64,
    pub iterations: usize,
}

#[inline]
pub(crate) fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn linear(beta: &[f64], row: &[f64]) -> f64 {
    beta[0] + row.iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>()
}

/// Bernoulli log-likelihood (fractional responses allowed).
pub fn log_likelihood(x: &Design, y: &[f64], beta: &[f64]) -> f64 {
    (0..x.rows)
        .map(|i| {
            let z = linear(beta, x.row(i));
            // y z − log(1 + e^z), stable for large |z|
            y[i] * z - (z.max(0.0) + (-z.abs()).exp().ln_1p())
        })
        .sum()
}

/// Gradient of [`log_likelihood`], `Σ_i (y_i − p_i)(1, x_i)`.
pub fn score(x: &Design, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; x.cols + 1];
    for i in 0..x.rows {
        let row = x.row(i);
        let r = y[i] - expit(linear(beta, row));
        s[0] += r;
        for (sk, xk) in s[1..].iter_mut().zip(row) {
            *sk += r * xk;
        }
    }
    s
}

fn information(x: &Design, beta: &[f64], ridge: f64) -> DMatrix<f64> {
    let d = x.cols + 1;
    let mut info = DMatrix::<f64>::zeros(d, d);
    let mut z = vec![0.0; d];
    z[0] = 1.0;
    for i in 0..x.rows {
        let row = x.row(i);
        z[1..].copy_from_slice(row);
        let p = expit(linear(beta, row));
        let w = p * (1.0 - p);
        for a in 0..d {
            let wa = w * z[a];
            for b in 0..=a {
                info[(a, b)] += wa * z[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
        if a > 0 {
            info[(a, a)] += ridge;
        }
    }
    info
}

fn penalized_score(x: &Design, y: &[f64], beta: &[f64], ridge: f64) -> Vec<f64> {
    let mut s = score(x, y, beta);
    for k in 1..s.len() {
        s[k] -= ridge * beta[k];
    }
    s
}

/// A zero score reached with fitted probabilities pinned at 0 or 1 means
/// the likelihood has no finite maximizer.
fn separated(x: &Design, beta: &[f64]) -> bool {
    (0..x.rows).any(|i| linear(beta, x.row(i)).abs() > SEPARATION_Z)
}

fn newton(x: &Design, y: &[f64], ridge: f64) -> Option<LogitModel> {
    let d = x.cols + 1;
    let mut beta = vec![0.0; d];
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    beta[0] = (ybar.clamp(1e-6, 1.0 - 1e-6) / (1.0 - ybar.clamp(1e-6, 1.0 - 1e-6))).ln();
    let objective = |b: &[f64]| {
        log_likelihood(x, y, b) - 0.5 * ridge * b[1..].iter().map(|v| v * v).sum::<f64>()
    };
    let mut current = objective(&beta);
    for it in 0..MAX_ITER {
        let s = penalized_score(x, y, &beta, ridge);
        if s.iter().all(|v| v.abs() < SCORE_TOL) {
            if ridge == 0.0 && separated(x, &beta) {
                return None;
            }
            let info = information(x, &beta, ridge);
            let cov = info.cholesky()?.inverse();
            return Some(LogitModel {
                beta,
                covariance: cov.transpose().as_slice().to_vec(),
                ridge,
                iterations: it,
            });
        }
        let info = information(x, &beta, ridge);
        let step = info.cholesky()?.solve(&DVector::from_vec(s));
        // Step halving keeps the objective monotone.
        let mut scale = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let val = objective(&cand);
            if val >= current - 1e-12 * current.abs().max(1.0) {
                beta = cand;
                current = val;
                break;
            }
            scale *= 0.5;
            if scale < 1e-10 {
                return None;
            }
        }
        if beta.iter().any(|b| !b.is_finite() || b.abs() > 50.0) {
            return None;
        }
    }
    None
}

impl LogitModel {
    /// Maximum likelihood, falling back to a ridge-penalized fit when the
    /// iteration diverges or the information matrix is singular.
    pub fn fit(x: &Design, y: &[f64]) -> Self {
        if let Some(m) = newton(x, y, 0.0) {
            return m;
        }
        let mut ridge = FALLBACK_RIDGE;
        loop {
            if let Some(m) = newton(x, y, ridge) {
                return m;
            }
            ridge *= 10.0;
            assert!(ridge < 1e8, "ridge fallback failed to converge");
        }
    }

    pub fn separated(&self) -> bool {
        self.ridge > 0.0
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        let d = self.beta.len();
        (0..d).map(|k| self.covariance[k * d + k].sqrt()).collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        expit(linear(&self.beta, row))
    }
}
