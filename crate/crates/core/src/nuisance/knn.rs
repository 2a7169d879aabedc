//! k-nearest-neighbour class-probability smoother on standardized features.

use super::Design;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Standardized training rows, row-major.
    train: Vec<f64>,
    y: Vec<f64>,
    cols: usize,
}

impl KnnModel {
    /// `k` defaults to `⌈√rows⌉`.
    pub fn fit(x: &Design, y: &[f64], k: Option<usize>) -> Self {
        let rows = x.rows;
        let cols = x.cols;
        let k = k
            .unwrap_or_else(|| (rows as f64).sqrt().ceil() as usize)
            .clamp(1, rows);
        let mut mean = vec![0.0; cols];
        let mut scale = vec![0.0; cols];
        for i in 0..rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        for i in 0..rows {
            for ((s, m), v) in scale.iter_mut().zip(&mean).zip(x.row(i)) {
                *s += (v - m) * (v - m);
            }
        }
        for s in scale.iter_mut() {
            let sd = (*s / rows as f64).sqrt();
            *s = if sd > 0.0 { sd } else { 1.0 };
        }
        let mut train = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for ((v, m), s) in x.row(i).iter().zip(&mean).zip(&scale) {
                train.push((v - m) / s);
            }
        }
        Self {
            k,
            mean,
            scale,
            train,
            y: y.to_vec(),
            cols,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn predict(&self, x: &Design) -> Vec<f64> {
        let mut dist: Vec<(f64, u32)> = Vec::with_capacity(self.y.len());
        let mut q = vec![0.0; self.cols];
        (0..x.rows)
            .map(|i| {
                for (c, ((v, m), s)) in x.row(i).iter().zip(&self.mean).zip(&self.scale).enumerate() {
                    q[c] = (v - m) / s;
                }
                dist.clear();
                dist.extend(self.train.chunks_exact(self.cols).enumerate().map(|(t, r)| {
                    let d: f64 = r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, t as u32)
                }));
                let cmp = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if self.k < dist.len() {
                    dist.select_nth_unstable_by(self.k - 1, cmp);
                }
                dist[..self.k].iter().map(|&(_, t)| self.y[t as usize]).sum::<f64>() / self.k as f64
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averages_the_nearest_labels() {
        let x = Design::new(vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0], 6, 1, (0..6).collect());
        let y = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let m = KnnModel::fit(&x, &y, Some(3));
        let q = Design::new(vec![0.5, 11.0], 2, 1, vec![0, 1]);
        let p = m.predict(&q);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p[1], 1.0);
        assert_eq!(KnnModel::fit(&x, &y, None).k(), 3);
    }
}
