//! Second-pass encoders over the co-attended features.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::nn::{Linear, TemporalConv};
use crate::params::{ParamBuilder, ParamStore};

/// `Ṽ = W₂ relu(W₁ V̂ + b₁) + b₂ + V̂`.
#[derive(Debug, Clone)]
pub struct VideoRefiner {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Debug, Clone)]
pub struct VideoRefinerTrace {
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl VideoRefinerTrace {
    pub(crate) fn push_pattern(&self, out: &mut Vec<u32>) {
        out.extend(self.pre.iter().map(|&v| u32::from(v > 0.0)));
    }
}

impl VideoRefiner {
    pub fn new(b: &mut ParamBuilder, c: usize) -> Self {
        Self {
            inner: Linear::new(b, "fine.video.inner", c, c),
            outer: Linear::new(b, "fine.video.outer", c, c),
        }
    }

    pub fn forward(&self, p: &ParamStore, v_hat: ArrayView2<'_, f64>) -> (Array2<f64>, VideoRefinerTrace) {
        let pre = self.inner.forward(p, v_hat);
        let hidden = pre.mapv(|x| x.max(0.0));
        let out = self.outer.forward(p, hidden.view()) + v_hat;
        (out, VideoRefinerTrace { pre, hidden })
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        trace: &VideoRefinerTrace,
        v_hat: ArrayView2<'_, f64>,
        d_out: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let mut d_hidden = self.outer.backward(p, g, trace.hidden.view(), d_out);
        d_hidden.zip_mut_with(&trace.pre, |d, &x| {
            if x <= 0.0 {
                *d = 0.0;
            }
        });
        let mut dx = self.inner.backward(p, g, v_hat, d_hidden.view());
        dx += &d_out;
        dx
    }
}

/// Parallel n-gram convolutions over the real tokens, concatenated and
/// projected back to `C`.
#[derive(Debug, Clone)]
pub struct QueryRefiner {
    pub grams: Vec<TemporalConv>,
    pub merge: Linear,
}

#[derive(Debug, Clone)]
pub struct QueryRefinerTrace {
    concat: Array2<f64>,
    len: usize,
}

impl QueryRefiner {
    pub fn new(b: &mut ParamBuilder, c: usize, kernels: &[usize]) -> Self {
        let grams = kernels
            .iter()
            .map(|&k| TemporalConv::new(b, &format!("fine.query.gram{k}"), c, c, k))
            .collect();
        Self {
            grams,
            merge: Linear::new(b, "fine.query.merge", kernels.len() * c, c),
        }
    }

    /// `q_hat` is `L × C`; rows at and beyond `len` are treated as zero
    /// padding and come out zero.
    pub fn forward(&self, p: &ParamStore, q_hat: ArrayView2<'_, f64>, len: usize) -> (Array2<f64>, QueryRefinerTrace) {
        let real = q_hat.slice(s![..len, ..]);
        let branches: Vec<Array2<f64>> = self.grams.iter().map(|conv| conv.forward(p, real)).collect();
        let views: Vec<_> = branches.iter().map(|b| b.view()).collect();
        let concat = concatenate(Axis(1), &views).expect("branch widths agree");
        let merged = self.merge.forward(p, concat.view());
        let mut out = Array2::zeros((q_hat.nrows(), merged.ncols()));
        out.slice_mut(s![..len, ..]).assign(&merged);
        (out, QueryRefinerTrace { concat, len })
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        trace: &QueryRefinerTrace,
        q_hat: ArrayView2<'_, f64>,
        d_out: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let len = trace.len;
        let real = q_hat.slice(s![..len, ..]);
        let d_concat = self
            .merge
            .backward(p, g, trace.concat.view(), d_out.slice(s![..len, ..]));
        let c = real.ncols();
        let mut dx = Array2::zeros(q_hat.dim());
        for (k, conv) in self.grams.iter().enumerate() {
            let d_branch = d_concat.slice(s![.., k * c..(k + 1) * c]);
            let d_real = conv.backward(p, g, real, d_branch);
            dx.slice_mut(s![..len, ..]).scaled_add(1.0, &d_real);
        }
        dx
    }
}
