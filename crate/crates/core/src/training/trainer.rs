use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::adam::Adam;
use crate::training::objective::PreparedBatch;

/// Model plus optimizer state, advanced one epoch at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(config.lr, &model.params);
        Ok(Self {
            model,
            adam,
            config,
            epoch: 0,
        })
    }

    /// Sample order for `epoch`; depends only on the seed and the epoch.
    pub fn shuffle_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2 + epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One pass over `data`; returns the mean per-sample loss, each measured
    /// before the update of its batch.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Validation("training set is empty".into()));
        }
        let epoch = self.epoch + 1;
        let order = Self::shuffle_order(self.config.seed, epoch, data.len());
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let samples: Vec<_> = chunk.iter().map(|&k| &data.samples[k]).collect();
            let batch = PreparedBatch::new(&self.model.net, data, &samples)?;
            let out = batch.loss_and_grad(&self.model.net, &self.model.params)?;
            let bad = out.grads.first_non_finite();
            if !out.loss.is_finite() || bad.is_some() {
                return Err(Error::NonFinite {
                    loss: out.loss,
                    epoch,
                    step: self.adam.step as usize + 1,
                    param: bad.unwrap_or("none").to_string(),
                });
            }
            total += out.sample_losses.iter().sum::<f64>();
            self.model.net.update_running(&mut self.model.stats, &out.trace);
            self.adam.update(&mut self.model.params, &out.grads);
        }
        self.epoch = epoch;
        Ok(total / data.len() as f64)
    }

    /// Runs the configured number of epochs, calling `on_epoch(epoch, loss)`
    /// after each.
    pub fn fit(&mut self, data: &Dataset, mut on_epoch: impl FnMut(usize, f64)) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let loss = self.run_epoch(data)?;
            on_epoch(self.epoch, loss);
            losses.push(loss);
        }
        Ok(losses)
    }
}

/// The per-epoch log line.
pub fn epoch_line(epoch: usize, loss: f64) -> String {
    format!("epoch {epoch} loss {loss:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::{gen_synthetic, SyntheticSpec};

    pub(crate) fn tiny_setup(samples: usize) -> (ModelConfig, Dataset) {
        let spec = SyntheticSpec {
            num_samples: samples,
            t_v: 8,
            d_v: 8,
            noise_std: 0.1,
            seed: 3,
            ..SyntheticSpec::default()
        };
        let ds = gen_synthetic(&spec).unwrap();
        let cfg = ModelConfig {
            t: 4,
            c: 8,
            input_dim: 8,
            word_dim: 12,
            groups: 2,
            kernel: 3,
            padding: 1,
            comparison_blocks: 2,
            gru_layers: 1,
            ..ModelConfig::default()
        };
        let data = Dataset::from_synthetic(&ds, 0..samples, cfg.word_dim, cfg.l_max, 5).unwrap();
        (cfg, data)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (cfg, data) = tiny_setup(1);
        let model = Model::new(&cfg, 0).unwrap();
        let before = model.params.clone();
        let tc = TrainConfig {
            lr: 0.0,
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(model, tc).unwrap();
        tr.fit(&data, |_, _| {}).unwrap();
        assert_eq!(tr.model.params.as_slice(), before.as_slice());
        assert_eq!(tr.adam.step, 1);
    }

    #[test]
    fn same_seed_same_losses() {
        let (cfg, data) = tiny_setup(12);
        let tc = TrainConfig {
            lr: 1e-3,
            epochs: 3,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut tr = Trainer::new(Model::new(&cfg, 9).unwrap(), tc.clone()).unwrap();
            tr.fit(&data, |_, _| {}).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn loss_decreases_on_small_set() {
        let (cfg, data) = tiny_setup(16);
        let tc = TrainConfig {
            lr: 3e-3,
            epochs: 8,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(Model::new(&cfg, 1).unwrap(), tc).unwrap();
        let losses = tr.fit(&data, |_, _| {}).unwrap();
        assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
    }

    #[test]
    fn shuffle_is_a_permutation_and_varies_by_epoch() {
        let a = Trainer::shuffle_order(4, 1, 20);
        let b = Trainer::shuffle_order(4, 2, 20);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        assert_ne!(a, b);
        assert_eq!(a, Trainer::shuffle_order(4, 1, 20));
    }

    #[test]
    fn non_finite_parameters_abort_with_diagnostic() {
        let (cfg, data) = tiny_setup(2);
        let mut model = Model::new(&cfg, 0).unwrap();
        let id = model.params.find("rank.weight").unwrap();
        model.params.slice_mut(id)[0] = f64::NAN;
        let mut tr = Trainer::new(model, TrainConfig::default()).unwrap();
        match tr.run_epoch(&data) {
            Err(Error::NonFinite { epoch, step, .. }) => {
                assert_eq!((epoch, step), (1, 1));
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn log_line_format() {
        assert_eq!(epoch_line(3, 0.25), "epoch 3 loss 0.250000");
    }
}
