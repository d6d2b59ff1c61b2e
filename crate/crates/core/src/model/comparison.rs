//! Skip-connected fusion, stacked group-convolution comparison over the
//! grid, and the sigmoid ranker.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::nn::norm::BatchNormTrace;
use crate::nn::{sigmoid, BatchNorm, GroupConv2d, Linear, RunningStats};
use crate::params::{ParamBuilder, ParamStore};
use crate::proposal::{CandidateGrid, MomentFeatureMaps};

/// Copies the listed rows of `x` into a dense matrix.
pub(crate) fn gather(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Inverse of [`gather`]: a `total × C` matrix with zeros elsewhere.
pub(crate) fn scatter(x: ArrayView2<'_, f64>, rows: &[usize], total: usize) -> Array2<f64> {
    let mut out = Array2::zeros((total, x.ncols()));
    for (src, &row) in x.axis_iter(Axis(0)).zip(rows) {
        out.row_mut(row).assign(&src);
    }
    out
}

/// `Â = relu(W_main [Ā | A_B | A_C] + W_skip Ā)` on valid rows; invalid rows
/// are zero.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub main: Linear,
    pub skip: Linear,
}

#[derive(Debug, Clone)]
pub struct FusionTrace {
    concat: Array2<f64>,
    aligned: Array2<f64>,
    pre: Array2<f64>,
}

impl FusionTrace {
    pub(crate) fn push_pattern(&self, out: &mut Vec<u32>) {
        out.extend(self.pre.iter().map(|&v| u32::from(v > 0.0)));
    }
}

impl Fusion {
    pub fn new(b: &mut ParamBuilder, c: usize) -> Self {
        Self {
            main: Linear::new(b, "fuse.main", 4 * c, c),
            skip: Linear::new(b, "fuse.skip", 2 * c, c),
        }
    }

    pub fn forward(
        &self,
        p: &ParamStore,
        aligned: ArrayView2<'_, f64>,
        maps: &MomentFeatureMaps,
        grid: &CandidateGrid,
    ) -> (Array2<f64>, FusionTrace) {
        let rows = grid.valid_rows();
        let a = gather(aligned, rows);
        let concat = concatenate(
            Axis(1),
            &[
                a.view(),
                gather(maps.boundary.view(), rows).view(),
                gather(maps.content.view(), rows).view(),
            ],
        )
        .expect("row counts agree");
        let pre = self.main.forward(p, concat.view()) + self.skip.forward(p, a.view());
        let out = scatter(pre.mapv(|x| x.max(0.0)).view(), rows, aligned.nrows());
        (
            out,
            FusionTrace {
                concat,
                aligned: a,
                pre,
            },
        )
    }

    /// Returns `(d_aligned, d_boundary, d_content)`, each grid-shaped.
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        trace: &FusionTrace,
        grid: &CandidateGrid,
        d_out: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let rows = grid.valid_rows();
        let total = d_out.nrows();
        let mut d_pre = gather(d_out, rows);
        d_pre.zip_mut_with(&trace.pre, |d, &x| {
            if x <= 0.0 {
                *d = 0.0;
            }
        });
        let d_concat = self.main.backward(p, g, trace.concat.view(), d_pre.view());
        let mut d_a = self.skip.backward(p, g, trace.aligned.view(), d_pre.view());
        let c2 = trace.aligned.ncols();
        let c = (trace.concat.ncols() - c2) / 2;
        d_a += &d_concat.slice(ndarray::s![.., ..c2]);
        (
            scatter(d_a.view(), rows, total),
            scatter(d_concat.slice(ndarray::s![.., c2..c2 + c]), rows, total),
            scatter(d_concat.slice(ndarray::s![.., c2 + c..]), rows, total),
        )
    }
}

/// One comparison block: group conv, batch norm, rectifier.
#[derive(Debug, Clone)]
pub struct ComparisonBlock {
    pub conv: GroupConv2d,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub blocks: Vec<ComparisonBlock>,
}

/// Activations of one training-mode pass over a batch.
#[derive(Debug, Clone)]
pub struct ComparisonTrace {
    /// Per block, the inputs of every sample.
    inputs: Vec<Vec<Array2<f64>>>,
    bn: Vec<BatchNormTrace>,
    /// Per block, the normalized pre-activation of every sample.
    normed: Vec<Vec<Array2<f64>>>,
}

impl ComparisonTrace {
    pub fn batch_norm(&self) -> &[BatchNormTrace] {
        &self.bn
    }

    pub(crate) fn push_pattern(&self, out: &mut Vec<u32>) {
        for x in self.normed.iter().flatten() {
            out.extend(x.iter().map(|&v| u32::from(v > 0.0)));
        }
    }
}

fn relu_valid(x: &Array2<f64>, grid: &CandidateGrid) -> Array2<f64> {
    let mut y = x.mapv(|v| v.max(0.0));
    grid.mask_rows(&mut y);
    y
}

fn valid_mask(grid: &CandidateGrid) -> Vec<bool> {
    (0..grid.side() * grid.side())
        .map(|r| grid.is_valid_row(r))
        .collect()
}

impl Comparison {
    pub fn new(
        b: &mut ParamBuilder,
        c: usize,
        blocks: usize,
        groups: usize,
        kernel: usize,
        padding: usize,
    ) -> Self {
        let blocks = (0..blocks)
            .map(|k| ComparisonBlock {
                conv: GroupConv2d::new(b, &format!("compare.b{k}.conv"), c, c, groups, kernel, padding, false),
                bn: BatchNorm::new(b, &format!("compare.b{k}.bn"), c),
            })
            .collect();
        Self { blocks }
    }

    pub fn fresh_stats(&self) -> Vec<RunningStats> {
        self.blocks
            .iter()
            .map(|blk| RunningStats::new(blk.bn.channels))
            .collect()
    }

    /// Training mode: normalization statistics pool the valid rows of every
    /// sample in `inputs`.
    pub fn forward_train(
        &self,
        p: &ParamStore,
        inputs: Vec<Array2<f64>>,
        grid: &CandidateGrid,
    ) -> (Vec<Array2<f64>>, ComparisonTrace) {
        let side = grid.side();
        let active = valid_mask(grid);
        let mut x = inputs;
        let mut trace = ComparisonTrace {
            inputs: Vec::with_capacity(self.blocks.len()),
            bn: Vec::with_capacity(self.blocks.len()),
            normed: Vec::with_capacity(self.blocks.len()),
        };
        for blk in &self.blocks {
            let conv: Vec<Array2<f64>> = x
                .par_iter()
                .map(|xi| blk.conv.forward(p, xi.view(), side, &active))
                .collect();
            let (normed, bn) = blk.bn.forward_train(p, &conv, grid.valid_rows());
            let next = normed.iter().map(|n| relu_valid(n, grid)).collect();
            trace.inputs.push(std::mem::replace(&mut x, next));
            trace.bn.push(bn);
            trace.normed.push(normed);
        }
        (x, trace)
    }

    /// Evaluation mode with running statistics; pure.
    pub fn forward_eval(
        &self,
        p: &ParamStore,
        input: ArrayView2<'_, f64>,
        grid: &CandidateGrid,
        stats: &[RunningStats],
    ) -> Array2<f64> {
        let side = grid.side();
        let active = valid_mask(grid);
        let mut x = input.to_owned();
        for (blk, st) in self.blocks.iter().zip(stats) {
            let conv = blk.conv.forward(p, x.view(), side, &active);
            let normed = blk.bn.forward_eval(p, conv.view(), grid.valid_rows(), st);
            x = relu_valid(&normed, grid);
        }
        x
    }

    pub fn update_running(&self, stats: &mut [RunningStats], trace: &ComparisonTrace) {
        for ((blk, st), bn) in self.blocks.iter().zip(stats).zip(&trace.bn) {
            blk.bn.update_running(st, bn);
        }
    }

    /// Per-sample input gradients. Parameter gradients accumulate into one
    /// store per sample, in `grads`.
    pub fn backward(
        &self,
        p: &ParamStore,
        grads: &mut [ParamStore],
        trace: &ComparisonTrace,
        grid: &CandidateGrid,
        d_out: Vec<Array2<f64>>,
    ) -> Vec<Array2<f64>> {
        let side = grid.side();
        let active = valid_mask(grid);
        let mut d = d_out;
        for (k, blk) in self.blocks.iter().enumerate().rev() {
            let d_normed: Vec<Array2<f64>> = d
                .into_iter()
                .zip(&trace.normed[k])
                .map(|(mut di, n)| {
                    di.zip_mut_with(n, |g, &x| {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    grid.mask_rows(&mut di);
                    di
                })
                .collect();
            let d_conv = blk
                .bn
                .backward(p, &mut grads[0], &trace.bn[k], &d_normed, grid.valid_rows());
            d = grads
                .par_iter_mut()
                .zip(d_conv.par_iter())
                .zip(trace.inputs[k].par_iter())
                .map(|((g, dc), xi)| blk.conv.backward(p, g, xi.view(), dc.view(), side, &active))
                .collect();
        }
        d
    }
}

/// `P = σ(W Ã + b)` on valid blocks; zero elsewhere.
#[derive(Debug, Clone)]
pub struct Ranker {
    pub proj: Linear,
}

/// Matching probabilities on the `T × T` grid plus the logits they came
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub scores: Array2<f64>,
    pub logits: Array2<f64>,
}

impl Ranker {
    pub fn new(b: &mut ParamBuilder, c: usize) -> Self {
        Self {
            proj: Linear::new(b, "rank", c, 1),
        }
    }

    pub fn forward(&self, p: &ParamStore, compared: ArrayView2<'_, f64>, grid: &CandidateGrid) -> ScoreMap {
        let t = grid.side();
        let rows = grid.valid_rows();
        let logit_rows = self.proj.forward(p, gather(compared, rows).view());
        let mut scores = Array2::zeros((t, t));
        let mut logits = Array2::zeros((t, t));
        for (&row, &z) in rows.iter().zip(logit_rows.column(0)) {
            let (i, j) = grid.block_of_row(row);
            logits[[i, j]] = z;
            scores[[i, j]] = sigmoid(z);
        }
        ScoreMap { scores, logits }
    }

    /// `d_logits` is `T × T`; returns the grid-shaped input gradient.
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        compared: ArrayView2<'_, f64>,
        grid: &CandidateGrid,
        d_logits: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let rows = grid.valid_rows();
        let d = Array2::from_shape_fn((rows.len(), 1), |(k, _)| {
            let (i, j) = grid.block_of_row(rows[k]);
            d_logits[[i, j]]
        });
        let dx = self.proj.backward(p, g, gather(compared, rows).view(), d.view());
        scatter(dx.view(), rows, compared.nrows())
    }
}
