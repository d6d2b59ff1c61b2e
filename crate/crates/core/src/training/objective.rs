use std::sync::Arc;

use ndarray::Array2;

use crate::data::{Dataset, Sample};
use crate::error::Result;
use crate::model::{BatchTrace, ModelInput, Network};
use crate::params::ParamStore;
use crate::proposal::CandidateGrid;
use crate::training::labels::{alignment_loss, alignment_loss_grad, scale_labels, ScaledLabels, PROB_CLIP};

/// Network inputs and scaled targets for a group of samples, ready for a
/// training-mode pass.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    videos: Vec<Arc<Array2<f64>>>,
    words: Vec<Array2<f64>>,
    lens: Vec<usize>,
    pub labels: Vec<ScaledLabels>,
    pub grids: Vec<CandidateGrid>,
}

/// Result of one forward and backward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    /// Mean of the per-sample losses.
    pub loss: f64,
    pub sample_losses: Vec<f64>,
    pub grads: ParamStore,
    pub trace: BatchTrace,
}

impl PreparedBatch {
    pub fn new(net: &Network, data: &Dataset, samples: &[&Sample]) -> Result<Self> {
        let cfg = &net.config;
        let mut batch = Self {
            videos: Vec::with_capacity(samples.len()),
            words: Vec::with_capacity(samples.len()),
            lens: Vec::with_capacity(samples.len()),
            labels: Vec::with_capacity(samples.len()),
            grids: Vec::with_capacity(samples.len()),
        };
        for s in samples {
            let grid = net.grid.with_duration(s.duration)?;
            batch.labels.push(scale_labels(&grid, &s.gt_span, cfg.theta_min, cfg.theta_max));
            batch.grids.push(grid);
            batch.videos.push(Arc::clone(&s.video));
            batch.words.push(data.query_vectors(&s.tokens));
            batch.lens.push(s.tokens.len());
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    pub fn inputs(&self) -> Vec<ModelInput<'_>> {
        (0..self.len())
            .map(|k| ModelInput {
                clips: self.videos[k].view(),
                words: self.words[k].view(),
                len: self.lens[k],
            })
            .collect()
    }

    /// Mean alignment loss of a training-mode pass.
    pub fn loss(&self, net: &Network, p: &ParamStore) -> Result<f64> {
        Ok(self.loss_and_pattern(net, p)?.0)
    }

    /// Loss plus the activation pattern of the pass, extended with which
    /// probabilities hit the clip bounds.
    pub fn loss_and_pattern(&self, net: &Network, p: &ParamStore) -> Result<(f64, Vec<u32>)> {
        let (maps, trace) = net.forward_train(p, &self.inputs())?;
        let mut pattern = trace.activation_pattern();
        let mut total = 0.0;
        for ((m, y), g) in maps.iter().zip(&self.labels).zip(&self.grids) {
            total += alignment_loss(&m.scores, y, g);
            for &row in g.valid_rows() {
                let p = m.scores[g.block_of_row(row)];
                pattern.push(u32::from(p < PROB_CLIP) + 2 * u32::from(p > 1.0 - PROB_CLIP));
            }
        }
        Ok((total / self.len() as f64, pattern))
    }

    pub fn loss_and_grad(&self, net: &Network, p: &ParamStore) -> Result<BatchGrad> {
        let (maps, trace) = net.forward_train(p, &self.inputs())?;
        let n = self.len() as f64;
        let mut sample_losses = Vec::with_capacity(self.len());
        let mut d_logits = Vec::with_capacity(self.len());
        for ((m, y), g) in maps.iter().zip(&self.labels).zip(&self.grids) {
            let (loss, mut d) = alignment_loss_grad(m, y, g);
            d /= n;
            sample_losses.push(loss);
            d_logits.push(d);
        }
        let grads = net.backward(p, &trace, &d_logits);
        Ok(BatchGrad {
            loss: sample_losses.iter().sum::<f64>() / n,
            sample_losses,
            grads,
            trace,
        })
    }
}
