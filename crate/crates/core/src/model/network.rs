use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::coarse::{QueryEncoder, QueryTrace, VideoEncoder, VideoTrace};
use crate::model::coattention::{CoAttention, CoAttentionTrace};
use crate::model::comparison::{Comparison, ComparisonTrace, Fusion, FusionTrace, Ranker, ScoreMap};
use crate::model::fine::{QueryRefiner, QueryRefinerTrace, VideoRefiner, VideoRefinerTrace};
use crate::model::interaction::{align, split_halves, BranchTrace, Interaction};
use crate::nn::RunningStats;
use crate::params::{ParamBuilder, ParamStore};
use crate::proposal::{build_grid, moment_maps, CandidateGrid, MomentFeatureMaps};

/// One sample as the network sees it.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    /// `T_V × D_v` clip features.
    pub clips: ArrayView2<'a, f64>,
    /// `L × word_dim` word vectors, real tokens first.
    pub words: ArrayView2<'a, f64>,
    /// Number of real tokens.
    pub len: usize,
}

/// Fine-grained encoders plus the conditioned interaction.
#[derive(Debug, Clone)]
pub struct FineStage {
    pub video: VideoRefiner,
    pub query: QueryRefiner,
    pub interaction: Interaction,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub video: VideoEncoder,
    pub query: QueryEncoder,
    pub coattn: CoAttention,
    pub fine: Option<FineStage>,
    pub fusion: Fusion,
    pub comparison: Option<Comparison>,
    pub ranker: Ranker,
    /// Validity mask; its clip duration is a placeholder.
    pub grid: CandidateGrid,
}

#[derive(Debug, Clone)]
struct FineTrace {
    video: VideoRefinerTrace,
    q_rows: usize,
    query: QueryRefinerTrace,
    query_branch: BranchTrace,
    video_branch: BranchTrace,
}

/// Everything one sample's front half needs for its backward pass.
#[derive(Debug, Clone)]
pub struct FrontTrace {
    video: VideoTrace,
    v_bar: Array2<f64>,
    query: QueryTrace,
    q_bar: Array2<f64>,
    coattn: CoAttentionTrace,
    v_hat: Array2<f64>,
    q_hat: Array2<f64>,
    maps: MomentFeatureMaps,
    fine: Option<FineTrace>,
    fusion: FusionTrace,
}

/// Saved state of a training-mode pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    fronts: Vec<FrontTrace>,
    compared: Vec<Array2<f64>>,
    comparison: Option<ComparisonTrace>,
}

impl BatchTrace {
    /// Which side of every ReLU and which winner of every max the pass
    /// took. Two passes with equal patterns lie on the same smooth piece.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for f in &self.fronts {
            f.maps.push_pattern(&mut out);
            if let Some(fine) = &f.fine {
                fine.video.push_pattern(&mut out);
                fine.query_branch.push_pattern(&mut out);
            }
            f.fusion.push_pattern(&mut out);
        }
        if let Some(c) = &self.comparison {
            c.push_pattern(&mut out);
        }
        out
    }
}

impl Network {
    /// Builds the architecture and draws initial parameters from `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let c = config.c;
        let mut b = ParamBuilder::new(ChaCha8Rng::seed_from_u64(seed));
        let video = VideoEncoder::new(&mut b, config.input_dim, c, config.t, config.gru_layers);
        let query = QueryEncoder::new(&mut b, config.word_dim, c, config.gru_layers);
        let coattn = CoAttention::new(&mut b, c);
        let fine = config.fine_interaction.then(|| FineStage {
            video: VideoRefiner::new(&mut b, c),
            query: QueryRefiner::new(&mut b, c, &config.ngram_kernels),
            interaction: Interaction::new(&mut b, c),
        });
        let fusion = Fusion::new(&mut b, c);
        let comparison = config.comparison.then(|| {
            Comparison::new(
                &mut b,
                c,
                config.comparison_blocks,
                config.groups,
                config.kernel,
                config.padding,
            )
        });
        let ranker = Ranker::new(&mut b, c);
        let grid = build_grid(config.t, 1.0, config.scheme)?;
        let net = Self {
            config: config.clone(),
            video,
            query,
            coattn,
            fine,
            fusion,
            comparison,
            ranker,
            grid,
        };
        Ok((net, b.finish()))
    }

    pub fn fresh_stats(&self) -> Vec<RunningStats> {
        self.comparison
            .as_ref()
            .map(Comparison::fresh_stats)
            .unwrap_or_default()
    }

    fn check_input(&self, input: &ModelInput<'_>) -> Result<()> {
        if input.clips.ncols() != self.config.input_dim {
            return Err(Error::Validation(format!(
                "clip features have width {}, model expects {}",
                input.clips.ncols(),
                self.config.input_dim
            )));
        }
        if input.clips.nrows() == 0 {
            return Err(Error::Validation("video has no clips".into()));
        }
        if input.words.ncols() != self.config.word_dim {
            return Err(Error::Validation(format!(
                "word vectors have width {}, model expects {}",
                input.words.ncols(),
                self.config.word_dim
            )));
        }
        if input.len == 0 || input.len > input.words.nrows() {
            return Err(Error::Validation(format!(
                "query length {} outside 1..={}",
                input.len,
                input.words.nrows()
            )));
        }
        Ok(())
    }

    /// Per-sample stages up to and including fusion; returns `Â`.
    pub fn front(&self, p: &ParamStore, input: &ModelInput<'_>) -> Result<(Array2<f64>, FrontTrace)> {
        self.check_input(input)?;
        let grid = &self.grid;
        let len = input.len;
        let (v_bar, video) = self.video.forward(p, input.clips);
        let (q_bar, query) = self.query.forward(p, input.words, len);
        let (co, coattn) = self.coattn.forward(p, v_bar.view(), q_bar.view(), len)?;
        let maps = moment_maps(co.video.view(), grid);
        let (aligned, fine) = match &self.fine {
            Some(stage) => {
                let (v_tilde, vt) = stage.video.forward(p, co.video.view());
                let (q_tilde, qt) = stage.query.forward(p, co.query.view(), len);
                let (a1, b1) = stage
                    .interaction
                    .query_branch(p, q_tilde.view(), len, &maps, grid)?;
                let (a2, b2) = stage.interaction.video_branch(p, v_tilde.view(), &maps, grid);
                let aligned = align(a1.view(), a2.view())?;
                let trace = FineTrace {
                    video: vt,
                    q_rows: q_tilde.nrows(),
                    query: qt,
                    query_branch: b1,
                    video_branch: b2,
                };
                (aligned, Some(trace))
            }
            // without the fine stage the coarse maps stand in for Ā
            None => (align(maps.content.view(), maps.boundary.view())?, None),
        };
        let (fused, fusion) = self.fusion.forward(p, aligned.view(), &maps, grid);
        let trace = FrontTrace {
            video,
            v_bar,
            query,
            q_bar,
            coattn,
            v_hat: co.video,
            q_hat: co.query,
            maps,
            fine,
            fusion,
        };
        Ok((fused, trace))
    }

    fn front_backward(&self, p: &ParamStore, g: &mut ParamStore, tr: &FrontTrace, d_fused: ArrayView2<'_, f64>) {
        let grid = &self.grid;
        let (d_aligned, mut d_boundary, mut d_content) = self.fusion.backward(p, g, &tr.fusion, grid, d_fused);
        let (d_v_hat_fine, d_q_hat) = match (&self.fine, &tr.fine) {
            (Some(stage), Some(ft)) => {
                let (d1, d2) = split_halves(d_aligned.view());
                let d_q_tilde = stage.interaction.query_branch_backward(
                    p,
                    g,
                    &ft.query_branch,
                    &tr.maps,
                    grid,
                    ft.q_rows,
                    d1,
                    &mut d_content,
                    &mut d_boundary,
                );
                let d_v_tilde = stage.interaction.video_branch_backward(
                    p,
                    g,
                    &ft.video_branch,
                    &tr.maps,
                    grid,
                    d2,
                    &mut d_content,
                    &mut d_boundary,
                );
                let dv = stage
                    .video
                    .backward(p, g, &ft.video, tr.v_hat.view(), d_v_tilde.view());
                let dq = stage
                    .query
                    .backward(p, g, &ft.query, tr.q_hat.view(), d_q_tilde.view());
                (Some(dv), dq)
            }
            _ => {
                let (dc, db) = split_halves(d_aligned.view());
                d_content += &dc;
                d_boundary += &db;
                (None, Array2::zeros(tr.q_hat.dim()))
            }
        };
        let mut d_v_hat = tr.maps.backward(grid, d_content.view(), d_boundary.view());
        if let Some(dv) = d_v_hat_fine {
            d_v_hat += &dv;
        }
        let (d_v_bar, d_q_bar) = self.coattn.backward(
            p,
            g,
            &tr.coattn,
            tr.v_bar.view(),
            tr.q_bar.view(),
            d_v_hat.view(),
            d_q_hat.view(),
        );
        self.video.backward(p, g, &tr.video, d_v_bar.view());
        self.query.backward(p, g, &tr.query, d_q_bar.view());
    }

    /// Training-mode forward over a batch: normalization uses batch
    /// statistics and running statistics are left untouched.
    pub fn forward_train(&self, p: &ParamStore, inputs: &[ModelInput<'_>]) -> Result<(Vec<ScoreMap>, BatchTrace)> {
        let (fused, fronts): (Vec<_>, Vec<_>) = inputs
            .par_iter()
            .map(|x| self.front(p, x))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let (compared, comparison) = match &self.comparison {
            Some(cmp) => {
                let (out, tr) = cmp.forward_train(p, fused, &self.grid);
                (out, Some(tr))
            }
            None => (fused, None),
        };
        let scores = compared
            .par_iter()
            .map(|x| self.ranker.forward(p, x.view(), &self.grid))
            .collect();
        Ok((
            scores,
            BatchTrace {
                fronts,
                compared,
                comparison,
            },
        ))
    }

    /// Parameter gradients for upstream logit gradients `d_logits` (one
    /// `T × T` matrix per sample), summed over the batch in sample order.
    pub fn backward(&self, p: &ParamStore, trace: &BatchTrace, d_logits: &[Array2<f64>]) -> ParamStore {
        let mut grads: Vec<ParamStore> = (0..d_logits.len()).map(|_| ParamStore::zeros_like(p)).collect();
        let d_compared: Vec<Array2<f64>> = grads
            .par_iter_mut()
            .zip(trace.compared.par_iter())
            .zip(d_logits.par_iter())
            .map(|((g, x), d)| self.ranker.backward(p, g, x.view(), &self.grid, d.view()))
            .collect();
        let d_fused = match (&self.comparison, &trace.comparison) {
            (Some(cmp), Some(tr)) => cmp.backward(p, &mut grads, tr, &self.grid, d_compared),
            _ => d_compared,
        };
        grads
            .par_iter_mut()
            .zip(trace.fronts.par_iter())
            .zip(d_fused.par_iter())
            .for_each(|((g, tr), d)| self.front_backward(p, g, tr, d.view()));
        let mut iter = grads.into_iter();
        let mut total = iter.next().unwrap_or_else(|| ParamStore::zeros_like(p));
        for g in iter {
            total.add_assign(&g);
        }
        total
    }

    pub fn update_running(&self, stats: &mut [RunningStats], trace: &BatchTrace) {
        if let (Some(cmp), Some(tr)) = (&self.comparison, &trace.comparison) {
            cmp.update_running(stats, tr);
        }
    }

    /// Evaluation-mode scores for one sample.
    pub fn predict(&self, p: &ParamStore, stats: &[RunningStats], input: &ModelInput<'_>) -> Result<ScoreMap> {
        let (fused, _) = self.front(p, input)?;
        let compared = match &self.comparison {
            Some(cmp) => cmp.forward_eval(p, fused.view(), &self.grid, stats),
            None => fused,
        };
        Ok(self.ranker.forward(p, compared.view(), &self.grid))
    }
}

/// Architecture, learnable parameters and normalization running statistics.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: Network,
    pub params: ParamStore,
    pub stats: Vec<RunningStats>,
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let (net, params) = Network::new(config, seed)?;
        let stats = net.fresh_stats();
        Ok(Self { net, params, stats })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn predict(&self, input: &ModelInput<'_>) -> Result<ScoreMap> {
        self.net.predict(&self.params, &self.stats, input)
    }
}
