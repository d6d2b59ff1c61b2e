//! Query-aware video features and video-aware query features.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::norm::{l2_normalize_row_backward, l2_normalize_rows};
use crate::nn::Linear;
use crate::params::{ParamBuilder, ParamStore};

/// Softmax over the first `len` entries of `scores`; the rest get weight 0.
pub fn masked_softmax(scores: ArrayView1<'_, f64>, len: usize) -> Array1<f64> {
    let mut w = Array1::zeros(scores.len());
    let max = scores
        .slice(s![..len])
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for j in 0..len {
        w[j] = (scores[j] - max).exp();
        total += w[j];
    }
    w.slice_mut(s![..len]).mapv_inplace(|v| v / total);
    w
}

/// Attention weights over the rows of a sequence and their weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    pub weights: Array1<f64>,
    /// `Σ_j weights_j · x_j`, width `C`.
    pub pooled: Array1<f64>,
}

fn attend(p: &ParamStore, score: &Linear, x: ArrayView2<'_, f64>, len: usize) -> Attended {
    let real = x.slice(s![..len, ..]);
    // the score bias shifts every score equally and cancels in the softmax,
    // so it is left out of the arithmetic
    let w = p.vec(score.weight);
    let mut scores = Array1::zeros(x.nrows());
    scores.slice_mut(s![..len]).assign(&real.dot(&w));
    let weights = masked_softmax(scores.view(), len);
    let pooled = weights.slice(s![..len]).dot(&real);
    Attended { weights, pooled }
}

/// Gradient of [`attend`] with respect to `x`, given `d_pooled`.
fn attend_backward(
    p: &ParamStore,
    g: &mut ParamStore,
    score: &Linear,
    x: ArrayView2<'_, f64>,
    len: usize,
    att: &Attended,
    d_pooled: ArrayView1<'_, f64>,
) -> Array2<f64> {
    let real = x.slice(s![..len, ..]);
    let w = att.weights.slice(s![..len]);
    let d_w = real.dot(&d_pooled);
    let mean = w.dot(&d_w);
    let d_scores = (&d_w - mean) * w;
    g.vec_mut(score.weight).scaled_add(1.0, &real.t().dot(&d_scores));
    let sw = p.vec(score.weight);
    let mut dx = Array2::zeros(x.dim());
    for (j, mut row) in dx.axis_iter_mut(Axis(0)).take(len).enumerate() {
        row.scaled_add(d_scores[j], &sw);
        row.scaled_add(w[j], &d_pooled);
    }
    dx
}

/// Row `t` of the output is `normalize(gate ⊙ x_t)` for the first `len`
/// rows; the rest are zero.
pub fn gate_and_normalize(gate: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>, len: usize) -> Array2<f64> {
    gate_and_normalize_traced(gate, x, len).0
}

fn gate_and_normalize_traced(
    gate: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    len: usize,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let prod = &x.slice(s![..len, ..]) * &gate;
    let (normed, norms) = l2_normalize_rows(prod.view());
    let mut out = Array2::zeros(x.dim());
    out.slice_mut(s![..len, ..]).assign(&normed);
    (out, prod, norms)
}

/// Returns `(d_gate, d_x)`.
fn gate_and_normalize_backward(
    gate: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    prod: &Array2<f64>,
    norms: &Array1<f64>,
    d_out: ArrayView2<'_, f64>,
) -> (Array1<f64>, Array2<f64>) {
    let mut d_gate = Array1::zeros(gate.len());
    let mut dx = Array2::zeros(x.dim());
    for t in 0..prod.nrows() {
        let d_prod = l2_normalize_row_backward(prod.row(t), norms[t], d_out.row(t));
        d_gate.scaled_add(1.0, &(&d_prod * &x.row(t)));
        dx.row_mut(t).assign(&(&d_prod * &gate));
    }
    (d_gate, dx)
}

/// Linear attention scores for both modalities.
#[derive(Debug, Clone)]
pub struct CoAttention {
    pub query_score: Linear,
    pub video_score: Linear,
}

#[derive(Debug, Clone)]
pub struct CoAttentionOutput {
    /// `T × C`, unit-norm rows.
    pub video: Array2<f64>,
    /// `L × C`, unit-norm real rows and zero pad rows.
    pub query: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct CoAttentionTrace {
    query_att: Attended,
    video_att: Attended,
    video_prod: Array2<f64>,
    video_norms: Array1<f64>,
    query_prod: Array2<f64>,
    query_norms: Array1<f64>,
    len: usize,
}

impl CoAttention {
    pub fn new(b: &mut ParamBuilder, c: usize) -> Self {
        Self {
            query_score: Linear::new(b, "coattn.query_score", c, 1),
            video_score: Linear::new(b, "coattn.video_score", c, 1),
        }
    }

    /// Masked attention over the first `len` query rows.
    pub fn attend_query(&self, p: &ParamStore, q_bar: ArrayView2<'_, f64>, len: usize) -> Result<Attended> {
        if len == 0 || len > q_bar.nrows() {
            return Err(Error::Validation(format!(
                "query attention needs 1..={} real tokens, got {len}",
                q_bar.nrows()
            )));
        }
        Ok(attend(p, &self.query_score, q_bar, len))
    }

    /// Unmasked attention over all clips.
    pub fn attend_video(&self, p: &ParamStore, v_bar: ArrayView2<'_, f64>) -> Attended {
        attend(p, &self.video_score, v_bar, v_bar.nrows())
    }

    pub fn fuse_query_to_video(
        &self,
        p: &ParamStore,
        v_bar: ArrayView2<'_, f64>,
        q_bar: ArrayView2<'_, f64>,
        len: usize,
    ) -> Result<Array2<f64>> {
        let att = self.attend_query(p, q_bar, len)?;
        Ok(gate_and_normalize(att.pooled.view(), v_bar, v_bar.nrows()))
    }

    pub fn fuse_video_to_query(
        &self,
        p: &ParamStore,
        q_bar: ArrayView2<'_, f64>,
        len: usize,
        v_bar: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let att = self.attend_video(p, v_bar);
        gate_and_normalize(att.pooled.view(), q_bar, len)
    }

    pub fn forward(
        &self,
        p: &ParamStore,
        v_bar: ArrayView2<'_, f64>,
        q_bar: ArrayView2<'_, f64>,
        len: usize,
    ) -> Result<(CoAttentionOutput, CoAttentionTrace)> {
        let query_att = self.attend_query(p, q_bar, len)?;
        let (video, video_prod, video_norms) =
            gate_and_normalize_traced(query_att.pooled.view(), v_bar, v_bar.nrows());
        let video_att = self.attend_video(p, v_bar);
        let (query, query_prod, query_norms) =
            gate_and_normalize_traced(video_att.pooled.view(), q_bar, len);
        Ok((
            CoAttentionOutput { video, query },
            CoAttentionTrace {
                query_att,
                video_att,
                video_prod,
                video_norms,
                query_prod,
                query_norms,
                len,
            },
        ))
    }

    /// Returns `(d_v_bar, d_q_bar)`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        trace: &CoAttentionTrace,
        v_bar: ArrayView2<'_, f64>,
        q_bar: ArrayView2<'_, f64>,
        d_video: ArrayView2<'_, f64>,
        d_query: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let len = trace.len;
        let (d_q_attn, mut d_v) = gate_and_normalize_backward(
            trace.query_att.pooled.view(),
            v_bar,
            &trace.video_prod,
            &trace.video_norms,
            d_video,
        );
        let (d_v_attn, d_q_real) = gate_and_normalize_backward(
            trace.video_att.pooled.view(),
            q_bar.slice(s![..len, ..]),
            &trace.query_prod,
            &trace.query_norms,
            d_query.slice(s![..len, ..]),
        );
        let mut d_q = attend_backward(
            p,
            g,
            &self.query_score,
            q_bar,
            len,
            &trace.query_att,
            d_q_attn.view(),
        );
        d_q.slice_mut(s![..len, ..]).scaled_add(1.0, &d_q_real);
        d_v += &attend_backward(
            p,
            g,
            &self.video_score,
            v_bar,
            v_bar.nrows(),
            &trace.video_att,
            d_v_attn.view(),
        );
        (d_v, d_q)
    }
}
