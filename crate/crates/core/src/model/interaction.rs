//! Conditioned interaction: content features gated by boundary features
//! modulated with a pooled query or video vector.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Linear};
use crate::params::{ParamBuilder, ParamStore};
use crate::proposal::{CandidateGrid, MomentFeatureMaps};

/// Gate `σ(A_B[r] ⊙ cond)` applied to `A_C[r]` on every valid row.
pub fn gated_content(
    cond: ArrayView1<'_, f64>,
    maps: &MomentFeatureMaps,
    grid: &CandidateGrid,
) -> (Array2<f64>, Array2<f64>) {
    let mut out = Array2::zeros(maps.content.dim());
    let mut gates = Array2::zeros(maps.content.dim());
    for &row in grid.valid_rows() {
        let ab = maps.boundary.row(row);
        let ac = maps.content.row(row);
        for ch in 0..cond.len() {
            let gate = sigmoid(ab[ch] * cond[ch]);
            gates[[row, ch]] = gate;
            out[[row, ch]] = gate * ac[ch];
        }
    }
    (out, gates)
}

/// Returns `d_cond` and accumulates into `d_content` / `d_boundary`.
fn gated_content_backward(
    cond: ArrayView1<'_, f64>,
    maps: &MomentFeatureMaps,
    gates: &Array2<f64>,
    grid: &CandidateGrid,
    d_out: ArrayView2<'_, f64>,
    d_content: &mut Array2<f64>,
    d_boundary: &mut Array2<f64>,
) -> Array1<f64> {
    let mut d_cond = Array1::zeros(cond.len());
    for &row in grid.valid_rows() {
        for ch in 0..cond.len() {
            let d = d_out[[row, ch]];
            let gate = gates[[row, ch]];
            d_content[[row, ch]] += d * gate;
            let dz = d * maps.content[[row, ch]] * gate * (1.0 - gate);
            d_boundary[[row, ch]] += dz * cond[ch];
            d_cond[ch] += dz * maps.boundary[[row, ch]];
        }
    }
    d_cond
}

#[derive(Debug, Clone)]
pub struct Interaction {
    pub query_proj: Linear,
    pub video_proj: Linear,
}

#[derive(Debug, Clone)]
pub struct BranchTrace {
    pooled: Array1<f64>,
    cond: Array1<f64>,
    gates: Array2<f64>,
    /// Row that won the max for each channel (query branch only).
    argmax: Vec<usize>,
}

/// Column-wise max over the first `len` rows, with the winning row index.
fn masked_max(x: ArrayView2<'_, f64>, len: usize) -> (Array1<f64>, Vec<usize>) {
    let mut best = x.row(0).to_owned();
    let mut idx = vec![0; x.ncols()];
    for r in 1..len {
        for (ch, &v) in x.row(r).iter().enumerate() {
            if v > best[ch] {
                best[ch] = v;
                idx[ch] = r;
            }
        }
    }
    (best, idx)
}

impl BranchTrace {
    pub(crate) fn push_pattern(&self, out: &mut Vec<u32>) {
        out.extend(self.argmax.iter().map(|&k| k as u32));
    }
}

impl Interaction {
    pub fn new(b: &mut ParamBuilder, c: usize) -> Self {
        Self {
            query_proj: Linear::new(b, "interaction.query_proj", c, c),
            video_proj: Linear::new(b, "interaction.video_proj", c, c),
        }
    }

    /// `Ā₁`: gated by the projected max over the first `len` query rows.
    pub fn query_branch(
        &self,
        p: &ParamStore,
        q_tilde: ArrayView2<'_, f64>,
        len: usize,
        maps: &MomentFeatureMaps,
        grid: &CandidateGrid,
    ) -> Result<(Array2<f64>, BranchTrace)> {
        if len == 0 || len > q_tilde.nrows() {
            return Err(Error::Validation(format!(
                "query branch needs 1..={} real tokens, got {len}",
                q_tilde.nrows()
            )));
        }
        let (pooled, argmax) = masked_max(q_tilde, len);
        let cond = self.query_proj.forward_vec(p, pooled.view());
        let (out, gates) = gated_content(cond.view(), maps, grid);
        Ok((
            out,
            BranchTrace {
                pooled,
                cond,
                gates,
                argmax,
            },
        ))
    }

    /// `Ā₂`: gated by the projected mean of the clip rows.
    pub fn video_branch(
        &self,
        p: &ParamStore,
        v_tilde: ArrayView2<'_, f64>,
        maps: &MomentFeatureMaps,
        grid: &CandidateGrid,
    ) -> (Array2<f64>, BranchTrace) {
        let pooled = v_tilde.mean_axis(Axis(0)).expect("at least one clip");
        let cond = self.video_proj.forward_vec(p, pooled.view());
        let (out, gates) = gated_content(cond.view(), maps, grid);
        (
            out,
            BranchTrace {
                pooled,
                cond,
                gates,
                argmax: Vec::new(),
            },
        )
    }

    /// Returns `d_q_tilde` (shape `rows × C`) and accumulates map gradients.
    #[allow(clippy::too_many_arguments)]
    pub fn query_branch_backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        trace: &BranchTrace,
        maps: &MomentFeatureMaps,
        grid: &CandidateGrid,
        rows: usize,
        d_out: ArrayView2<'_, f64>,
        d_content: &mut Array2<f64>,
        d_boundary: &mut Array2<f64>,
    ) -> Array2<f64> {
        let d_cond = gated_content_backward(
            trace.cond.view(),
            maps,
            &trace.gates,
            grid,
            d_out,
            d_content,
            d_boundary,
        );
        let d_pooled = self
            .query_proj
            .backward_vec(p, g, trace.pooled.view(), d_cond.view());
        let mut dq = Array2::zeros((rows, d_pooled.len()));
        for (ch, &r) in trace.argmax.iter().enumerate() {
            dq[[r, ch]] += d_pooled[ch];
        }
        dq
    }

    #[allow(clippy::too_many_arguments)]
    pub fn video_branch_backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        trace: &BranchTrace,
        maps: &MomentFeatureMaps,
        grid: &CandidateGrid,
        d_out: ArrayView2<'_, f64>,
        d_content: &mut Array2<f64>,
        d_boundary: &mut Array2<f64>,
    ) -> Array2<f64> {
        let d_cond = gated_content_backward(
            trace.cond.view(),
            maps,
            &trace.gates,
            grid,
            d_out,
            d_content,
            d_boundary,
        );
        let d_pooled = self
            .video_proj
            .backward_vec(p, g, trace.pooled.view(), d_cond.view());
        let t = grid.side();
        let mut dv = Array2::zeros((t, d_pooled.len()));
        let row = d_pooled / t as f64;
        for mut r in dv.axis_iter_mut(Axis(0)) {
            r.assign(&row);
        }
        dv
    }
}

/// Channel concatenation `[Ā₁ | Ā₂]`.
pub fn align(a1: ArrayView2<'_, f64>, a2: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a1.dim() != a2.dim() {
        return Err(Error::Validation(format!(
            "branch shapes differ: {:?} vs {:?}",
            a1.dim(),
            a2.dim()
        )));
    }
    Ok(concatenate(Axis(1), &[a1, a2]).expect("equal row counts"))
}

/// Splits a `2C`-wide gradient back into its two halves.
pub fn split_halves(d: ArrayView2<'_, f64>) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
    let c = d.ncols() / 2;
    (d.slice_move(s![.., ..c]), d.slice_move(s![.., c..]))
}
