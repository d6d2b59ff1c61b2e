//! Clip sampling and the recurrent coarse encoders.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::nn::{BiGru, BiGruTrace, Linear};
use crate::params::{ParamBuilder, ParamStore};

/// Input rows `[start, end)` averaged into output clip `t` when pooling
/// `t_v` rows down to `t`.
pub fn pool_window(t_v: usize, t: usize, idx: usize) -> (usize, usize) {
    let start = idx * t_v / t;
    (start, ((idx + 1) * t_v).div_ceil(t))
}

/// Adaptive average pooling of `x` along rows to exactly `t` rows.
pub fn adaptive_avg_pool(x: ArrayView2<'_, f64>, t: usize) -> Array2<f64> {
    let t_v = x.nrows();
    let mut out = Array2::zeros((t, x.ncols()));
    for (idx, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (a, b) = pool_window(t_v, t, idx);
        row.assign(&x.slice(s![a..b, ..]).mean_axis(Axis(0)).unwrap());
    }
    out
}

fn adaptive_avg_pool_backward(d_out: ArrayView2<'_, f64>, t_v: usize) -> Array2<f64> {
    let t = d_out.nrows();
    let mut dx = Array2::zeros((t_v, d_out.ncols()));
    for (idx, d) in d_out.axis_iter(Axis(0)).enumerate() {
        let (a, b) = pool_window(t_v, t, idx);
        let w = 1.0 / (b - a) as f64;
        for r in a..b {
            dx.row_mut(r).scaled_add(w, &d);
        }
    }
    dx
}

/// Kernel-1 temporal convolution `D_v → C`, pooling to `T` clips, then a
/// bidirectional GRU.
#[derive(Debug, Clone)]
pub struct VideoEncoder {
    pub conv: Linear,
    pub gru: BiGru,
    pub t: usize,
}

#[derive(Debug, Clone)]
pub struct VideoTrace {
    clips: Array2<f64>,
    sampled: Array2<f64>,
    gru: BiGruTrace,
}

impl VideoTrace {
    /// The `T × C` sampled features fed to the recurrence.
    pub fn sampled(&self) -> ArrayView2<'_, f64> {
        self.sampled.view()
    }
}

impl VideoEncoder {
    pub fn new(b: &mut ParamBuilder, input_dim: usize, c: usize, t: usize, layers: usize) -> Self {
        Self {
            conv: Linear::new(b, "video.conv", input_dim, c),
            gru: BiGru::new(b, "video.gru", c, c / 2, layers),
            t,
        }
    }

    pub fn sample(&self, p: &ParamStore, clips: ArrayView2<'_, f64>) -> Array2<f64> {
        adaptive_avg_pool(self.conv.forward(p, clips).view(), self.t)
    }

    pub fn encode(&self, p: &ParamStore, sampled: ArrayView2<'_, f64>) -> Array2<f64> {
        self.gru.forward(p, sampled).0
    }

    pub fn forward(&self, p: &ParamStore, clips: ArrayView2<'_, f64>) -> (Array2<f64>, VideoTrace) {
        let sampled = self.sample(p, clips);
        let (out, gru) = self.gru.forward(p, sampled.view());
        let trace = VideoTrace {
            clips: clips.to_owned(),
            sampled,
            gru,
        };
        (out, trace)
    }

    pub fn backward(&self, p: &ParamStore, g: &mut ParamStore, trace: &VideoTrace, d_out: ArrayView2<'_, f64>) {
        let d_sampled = self.gru.backward(p, g, &trace.gru, d_out);
        let d_conv = adaptive_avg_pool_backward(d_sampled.view(), trace.clips.nrows());
        self.conv.backward_params(g, trace.clips.view(), d_conv.view());
    }
}

/// Bidirectional GRU over the real tokens of a query; pad rows of the
/// output are zero.
#[derive(Debug, Clone)]
pub struct QueryEncoder {
    pub gru: BiGru,
}

#[derive(Debug, Clone)]
pub struct QueryTrace {
    gru: BiGruTrace,
    len: usize,
}

impl QueryEncoder {
    pub fn new(b: &mut ParamBuilder, word_dim: usize, c: usize, layers: usize) -> Self {
        Self {
            gru: BiGru::new(b, "query.gru", word_dim, c / 2, layers),
        }
    }

    /// `words` is `L × word_dim`; only the first `len` rows are read.
    pub fn forward(&self, p: &ParamStore, words: ArrayView2<'_, f64>, len: usize) -> (Array2<f64>, QueryTrace) {
        let (real, gru) = self.gru.forward(p, words.slice(s![..len, ..]));
        let mut out = Array2::zeros((words.nrows(), real.ncols()));
        out.slice_mut(s![..len, ..]).assign(&real);
        (out, QueryTrace { gru, len })
    }

    pub fn backward(&self, p: &ParamStore, g: &mut ParamStore, trace: &QueryTrace, d_out: ArrayView2<'_, f64>) {
        self.gru.backward(p, g, &trace.gru, d_out.slice(s![..trace.len, ..]));
    }
}
