use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::params::{ParamBuilder, ParamId, ParamStore};

/// Guard added to every ℓ2 norm denominator.
pub const NORM_EPS: f64 = 1e-8;

/// `x / (‖x‖ + ε)` for each row; also returns the row norms.
pub fn l2_normalize_rows(x: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
    let norms: Array1<f64> = x
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt())
        .collect();
    let mut y = x.to_owned();
    for (mut r, n) in y.axis_iter_mut(Axis(0)).zip(&norms) {
        r /= n + NORM_EPS;
    }
    (y, norms)
}

/// Gradient of [`l2_normalize_rows`] for one row.
pub fn l2_normalize_row_backward(
    x: ArrayView1<'_, f64>,
    norm: f64,
    dy: ArrayView1<'_, f64>,
) -> Array1<f64> {
    let denom = norm + NORM_EPS;
    let mut dx = dy.to_owned() / denom;
    if norm > 0.0 {
        let proj = x.dot(&dy) / (norm * denom * denom);
        dx.scaled_add(-proj, &x);
    }
    dx
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Per-channel batch normalization restricted to a subset of rows.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

/// Saved activations of one training-mode pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchNormTrace {
    pub xhat: Vec<Array2<f64>>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unbiased batch variance, used for the running estimate.
    pub var_unbiased: Vec<f64>,
    pub count: usize,
}

impl BatchNorm {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize) -> Self {
        Self {
            gamma: b.ones(&format!("{name}.gamma"), &[channels]),
            beta: b.zeros(&format!("{name}.beta"), &[channels]),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Normalizes `rows` of every map with statistics pooled across the
    /// whole batch. Other rows of the outputs are zero.
    pub fn forward_train(
        &self,
        p: &ParamStore,
        inputs: &[Array2<f64>],
        rows: &[usize],
    ) -> (Vec<Array2<f64>>, BatchNormTrace) {
        let c = self.channels;
        let count = inputs.len() * rows.len();
        let mut mean = vec![0.0; c];
        for x in inputs {
            for &r in rows {
                for (m, v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; c];
        for x in inputs {
            for &r in rows {
                for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let var_unbiased = var
            .iter()
            .map(|s| if count > 1 { s / (count - 1) as f64 } else { 0.0 })
            .collect();
        let inv_std: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / count as f64 + self.eps).sqrt())
            .collect();

        let gamma = p.slice(self.gamma);
        let beta = p.slice(self.beta);
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut xhats = Vec::with_capacity(inputs.len());
        for x in inputs {
            let mut xhat = Array2::zeros(x.dim());
            let mut y = Array2::zeros(x.dim());
            for &r in rows {
                for ch in 0..c {
                    let h = (x[[r, ch]] - mean[ch]) * inv_std[ch];
                    xhat[[r, ch]] = h;
                    y[[r, ch]] = gamma[ch] * h + beta[ch];
                }
            }
            outputs.push(y);
            xhats.push(xhat);
        }
        (
            outputs,
            BatchNormTrace {
                xhat: xhats,
                inv_std,
                mean,
                var_unbiased,
                count,
            },
        )
    }

    pub fn forward_eval(
        &self,
        p: &ParamStore,
        x: ArrayView2<'_, f64>,
        rows: &[usize],
        stats: &RunningStats,
    ) -> Array2<f64> {
        let gamma = p.slice(self.gamma);
        let beta = p.slice(self.beta);
        let mut y = Array2::zeros(x.dim());
        for &r in rows {
            for ch in 0..self.channels {
                let h = (x[[r, ch]] - stats.mean[ch]) / (stats.var[ch] + self.eps).sqrt();
                y[[r, ch]] = gamma[ch] * h + beta[ch];
            }
        }
        y
    }

    pub fn update_running(&self, stats: &mut RunningStats, trace: &BatchNormTrace) {
        let m = self.momentum;
        for ch in 0..self.channels {
            stats.mean[ch] = (1.0 - m) * stats.mean[ch] + m * trace.mean[ch];
            stats.var[ch] = (1.0 - m) * stats.var[ch] + m * trace.var_unbiased[ch];
        }
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        trace: &BatchNormTrace,
        d_out: &[Array2<f64>],
        rows: &[usize],
    ) -> Vec<Array2<f64>> {
        let c = self.channels;
        let n = trace.count as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (dy, xhat) in d_out.iter().zip(&trace.xhat) {
            for &r in rows {
                for ch in 0..c {
                    sum_dy[ch] += dy[[r, ch]];
                    sum_dy_xhat[ch] += dy[[r, ch]] * xhat[[r, ch]];
                }
            }
        }
        g.slice_mut(self.beta)
            .iter_mut()
            .zip(&sum_dy)
            .for_each(|(a, b)| *a += b);
        g.slice_mut(self.gamma)
            .iter_mut()
            .zip(&sum_dy_xhat)
            .for_each(|(a, b)| *a += b);

        let gamma = p.slice(self.gamma);
        d_out
            .iter()
            .zip(&trace.xhat)
            .map(|(dy, xhat)| {
                let mut dx = Array2::zeros(dy.dim());
                for &r in rows {
                    for ch in 0..c {
                        dx[[r, ch]] = gamma[ch] * trace.inv_std[ch]
                            * (dy[[r, ch]]
                                - sum_dy[ch] / n
                                - xhat[[r, ch]] * sum_dy_xhat[ch] / n);
                    }
                }
                dx
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalized_rows_have_unit_norm() {
        let x = array![[3.0, 4.0], [0.0, 0.0], [1e-3, 0.0]];
        let (y, norms) = l2_normalize_rows(x.view());
        assert!((y.row(0).dot(&y.row(0)).sqrt() - 1.0).abs() < 1e-6);
        assert_eq!(y.row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(norms[0], 5.0);
    }

    #[test]
    fn train_mode_normalizes_selected_rows() {
        let mut b = ParamBuilder::new(ChaCha8Rng::seed_from_u64(0));
        let bn = BatchNorm::new(&mut b, "bn", 1);
        let p = b.finish();
        let x = array![[1.0], [100.0], [3.0]];
        let (out, trace) = bn.forward_train(&p, &[x], &[0, 2]);
        assert_eq!(trace.mean, vec![2.0]);
        assert!((out[0][[0, 0]] + 1.0).abs() < 1e-5);
        assert!((out[0][[2, 0]] - 1.0).abs() < 1e-5);
        assert_eq!(out[0][[1, 0]], 0.0);
        assert_eq!(trace.var_unbiased, vec![2.0]);
    }
}
