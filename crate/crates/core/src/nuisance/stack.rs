//! Convex stacking: simplex weights over base learners chosen to minimize
//! cross-validated log loss.

const CLIP: f64 = 1e-6;

#[inline]
fn mix(weights: &[f64], preds: &[Vec<f64>], i: usize) -> f64 {
    weights
        .iter()
        .zip(preds)
        .map(|(w, p)| w * p[i])
        .sum::<f64>()
        .clamp(CLIP, 1.0 - CLIP)
}

/// Mean negative log-likelihood of the mixture.
pub fn cv_loss(weights: &[f64], preds: &[Vec<f64>], y: &[f64]) -> f64 {
    let rows = y.len();
    (0..rows)
        .map(|i| {
            let p = mix(weights, preds, i);
            -(y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / rows as f64
}

fn gradient(weights: &[f64], preds: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let rows = y.len();
    let mut grad = vec![0.0; weights.len()];
    for i in 0..rows {
        let raw: f64 = weights.iter().zip(preds).map(|(w, p)| w * p[i]).sum();
        if raw <= CLIP || raw >= 1.0 - CLIP {
            continue;
        }
        let d = -(y[i] / raw - (1.0 - y[i]) / (1.0 - raw));
        for (g, p) in grad.iter_mut().zip(preds) {
            *g += d * p[i];
        }
    }
    grad.iter_mut().for_each(|g| *g /= rows as f64);
    grad
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let w: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Projected gradient descent with Armijo backtracking, started from the
/// best single learner so the result never does worse than it.
pub fn stack_weights(preds: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    const ITERS: usize = 200;
    const STEP: f64 = 0.1;
    const TOL: f64 = 1e-9;
    let l = preds.len();
    let vertex = |k: usize| {
        let mut w = vec![0.0; l];
        w[k] = 1.0;
        w
    };
    let mut w = vertex(0);
    let mut loss = cv_loss(&w, preds, y);
    for k in 1..l {
        let v = vertex(k);
        let lv = cv_loss(&v, preds, y);
        if lv < loss {
            w = v;
            loss = lv;
        }
    }
    for _ in 0..ITERS {
        let g = gradient(&w, preds, y);
        let mut step = STEP;
        let mut moved = false;
        while step > 1e-12 {
            let cand: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
            let cand = project_simplex(&cand);
            let decrease: f64 = g.iter().zip(w.iter().zip(&cand)).map(|(gi, (a, b))| gi * (a - b)).sum();
            let lc = cv_loss(&cand, preds, y);
            if lc <= loss - 1e-4 * decrease && lc <= loss {
                let improvement = loss - lc;
                w = cand;
                loss = lc;
                moved = improvement > TOL;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mixes_complementary_learners() {
        // Each learner is right on a different half of the rows.
        let y = vec![1.0, 1.0, 0.0, 0.0];
        let a = vec![0.9, 0.5, 0.1, 0.5];
        let b = vec![0.5, 0.9, 0.5, 0.1];
        let preds = vec![a, b];
        let w = stack_weights(&preds, &y);
        assert!((w[0] - 0.5).abs() < 0.05, "{w:?}");
        let best = cv_loss(&[0.5, 0.5], &preds, &y);
        assert!(cv_loss(&w, &preds, &y) - best < 1e-3);
        assert!(cv_loss(&w, &preds, &y) < cv_loss(&[1.0, 0.0], &preds, &y));
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex(v in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
            let w = project_simplex(&v);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn stack_never_worse_than_best_single(
            raw in proptest::collection::vec((0.01f64..0.99, 0.01f64..0.99, 0.01f64..0.99, 0u8..2), 5..40)
        ) {
            let preds = vec![
                raw.iter().map(|r| r.0).collect::<Vec<_>>(),
                raw.iter().map(|r| r.1).collect(),
                raw.iter().map(|r| r.2).collect(),
            ];
            let y: Vec<f64> = raw.iter().map(|r| f64::from(r.3)).collect();
            let w = stack_weights(&preds, &y);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let best = (0..3)
                .map(|k| { let mut v = vec![0.0; 3]; v[k] = 1.0; cv_loss(&v, &preds, &y) })
                .fold(f64::INFINITY, f64::min);
            prop_assert!(cv_loss(&w, &preds, &y) <= best + 1e-8);
        }
    }
}
