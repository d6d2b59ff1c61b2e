use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::params::{ParamBuilder, ParamId, ParamStore};

/// Affine map `y = x Wᵀ + b` applied to each row; `W` is `out × in`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(b: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: b.fan_in_uniform(&format!("{name}.weight"), &[out_dim, in_dim], in_dim),
            bias: b.zeros(&format!("{name}.bias"), &[out_dim]),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, p: &ParamStore, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&p.mat(self.weight).t());
        y += &p.vec(self.bias);
        y
    }

    pub fn forward_vec(&self, p: &ParamStore, x: ArrayView1<'_, f64>) -> Array1<f64> {
        p.mat(self.weight).dot(&x) + p.vec(self.bias)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        x: ArrayView2<'_, f64>,
        dy: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        self.backward_params(g, x, dy);
        dy.dot(&p.mat(self.weight))
    }

    pub fn backward_params(&self, g: &mut ParamStore, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>) {
        general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut g.mat_mut(self.weight));
        let db = dy.sum_axis(Axis(0));
        g.vec_mut(self.bias).scaled_add(1.0, &db);
    }

    pub fn backward_vec(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        x: ArrayView1<'_, f64>,
        dy: ArrayView1<'_, f64>,
    ) -> Array1<f64> {
        {
            let mut gw = g.mat_mut(self.weight);
            for (o, mut row) in gw.axis_iter_mut(Axis(0)).enumerate() {
                row.scaled_add(dy[o], &x);
            }
        }
        g.vec_mut(self.bias).scaled_add(1.0, &dy);
        p.mat(self.weight).t().dot(&dy)
    }
}
