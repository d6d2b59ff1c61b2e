use ndarray::Array2;

use crate::model::ScoreMap;
use crate::proposal::{temporal_iou, CandidateGrid, MomentSpan};

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` inside the loss.
pub const PROB_CLIP: f64 = 1e-7;

/// Soft targets on the `T × T` grid; zero at invalid blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLabels {
    pub y: Array2<f64>,
}

/// Maps an IoU `o` to `0` below `theta_min`, `1` above `theta_max`, and
/// linearly in between.
pub fn scale_iou(o: f64, theta_min: f64, theta_max: f64) -> f64 {
    if o <= theta_min {
        0.0
    } else if o >= theta_max {
        1.0
    } else {
        (o - theta_min) / (theta_max - theta_min)
    }
}

/// `grid` must carry the sample's clip duration.
pub fn scale_labels(grid: &CandidateGrid, gt: &MomentSpan, theta_min: f64, theta_max: f64) -> ScaledLabels {
    let t = grid.side();
    let mut y = Array2::zeros((t, t));
    for &row in grid.valid_rows() {
        let (i, j) = grid.block_of_row(row);
        let span = grid.span(i, j).expect("valid blocks have i <= j");
        y[[i, j]] = scale_iou(temporal_iou(&span, gt), theta_min, theta_max);
    }
    ScaledLabels { y }
}

/// Mean binary cross-entropy over the valid blocks.
pub fn alignment_loss(scores: &Array2<f64>, labels: &ScaledLabels, grid: &CandidateGrid) -> f64 {
    let n = grid.num_valid() as f64;
    let mut total = 0.0;
    for &row in grid.valid_rows() {
        let (i, j) = grid.block_of_row(row);
        let p = scores[[i, j]].clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        let y = labels.y[[i, j]];
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / n
}

/// Loss and its gradient with respect to the ranker logits. Blocks whose
/// probability is clipped get zero gradient.
pub fn alignment_loss_grad(map: &ScoreMap, labels: &ScaledLabels, grid: &CandidateGrid) -> (f64, Array2<f64>) {
    let n = grid.num_valid() as f64;
    let mut d = Array2::zeros(map.scores.dim());
    for &row in grid.valid_rows() {
        let (i, j) = grid.block_of_row(row);
        let p = map.scores[[i, j]];
        if (PROB_CLIP..=1.0 - PROB_CLIP).contains(&p) {
            d[[i, j]] = (p - labels.y[[i, j]]) / n;
        }
    }
    (alignment_loss(&map.scores, labels, grid), d)
}
