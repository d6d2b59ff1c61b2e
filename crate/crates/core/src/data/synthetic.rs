//! Deterministic planted-span benchmark.
//!
//! Each token of the vocabulary owns a fixed gaussian codebook row. A sample
//! draws a random query, and every clip inside its ground-truth span equals
//! the mean codebook row of the query tokens plus gaussian noise; clips
//! outside the span are pure gaussian noise with the same per-entry scale.
//! Spans are aligned to clip boundaries.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::annotations::{write_annotations, Annotation};
use crate::data::features::{write_features, ClipFeatureSequence};
use crate::data::vocab::{write_word_vectors, Vocab, WORD_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_samples: usize,
    /// Clips per video.
    pub t_v: usize,
    /// Feature dimension.
    pub d_v: usize,
    pub vocab_size: usize,
    /// Inclusive range of query lengths.
    pub query_len_range: (usize, usize),
    /// Span length as a fraction of the video, inclusive range.
    pub span_len_range: (f64, f64),
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_samples: 200,
            t_v: 16,
            d_v: 64,
            vocab_size: 32,
            query_len_range: (2, 5),
            span_len_range: (0.15, 0.5),
            noise_std: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Validation(msg.to_string()));
        if self.num_samples == 0 {
            return fail("num_samples must be at least 1");
        }
        if self.t_v == 0 || self.d_v == 0 {
            return fail("t_v and d_v must be at least 1");
        }
        if self.d_v > WORD_DIM {
            return fail("d_v must not exceed the word-vector width");
        }
        let (qmin, qmax) = self.query_len_range;
        if qmin == 0 || qmin > qmax {
            return fail("query_len_range must be a non-empty range of positive lengths");
        }
        if self.vocab_size < qmax {
            return fail("vocab_size must be at least the longest query");
        }
        let (smin, smax) = self.span_len_range;
        if !(smin > 0.0 && smin <= smax && smax <= 1.0) {
            return fail("span_len_range must satisfy 0 < min <= max <= 1");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail("noise_std must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub annotations: Vec<Annotation>,
    pub features: Vec<ClipFeatureSequence>,
    pub vocab: Vocab,
    /// `vocab_size × d_v`, row `k` belongs to vocabulary id `k + 2`.
    pub codebook: Array2<f64>,
}

fn token_name(k: usize) -> String {
    format!("tok{k}")
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    // the codebook has its own stream so it does not depend on num_samples
    let mut code_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    code_rng.set_stream(1);
    let codebook = Array2::from_shape_fn((spec.vocab_size, spec.d_v), |_| {
        StandardNormal.sample(&mut code_rng)
    });
    let vocab = Vocab::from_tokens((0..spec.vocab_size).map(token_name));

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise_std");
    let mut annotations = Vec::with_capacity(spec.num_samples);
    let mut features = Vec::with_capacity(spec.num_samples);
    for idx in 0..spec.num_samples {
        let video_id = format!("syn{idx:05}");
        let clip_seconds: f64 = rng.random_range(0.5..2.0);
        let duration = clip_seconds * spec.t_v as f64;

        let qlen = rng.random_range(spec.query_len_range.0..=spec.query_len_range.1);
        let tokens: Vec<usize> = (0..qlen)
            .map(|_| rng.random_range(0..spec.vocab_size))
            .collect();
        let query = tokens
            .iter()
            .map(|&k| token_name(k))
            .collect::<Vec<_>>()
            .join(" ");
        let mut signal = Array1::<f64>::zeros(spec.d_v);
        for &k in &tokens {
            signal += &codebook.row(k);
        }
        signal /= qlen as f64;
        let scale = (signal.dot(&signal) / spec.d_v as f64).sqrt();

        let frac: f64 = rng.random_range(spec.span_len_range.0..=spec.span_len_range.1);
        let span_clips = ((frac * spec.t_v as f64).round() as usize).clamp(1, spec.t_v);
        let start = rng.random_range(0..=spec.t_v - span_clips);
        let end = start + span_clips;

        let mut feats = Array2::<f32>::zeros((spec.t_v, spec.d_v));
        for t in 0..spec.t_v {
            for d in 0..spec.d_v {
                let base = if (start..end).contains(&t) {
                    signal[d]
                } else {
                    scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                };
                let jitter = if spec.noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                feats[[t, d]] = (base + jitter) as f32;
            }
        }
        annotations.push(Annotation::new(
            &video_id,
            duration,
            start as f64 * clip_seconds,
            end as f64 * clip_seconds,
            &query,
        )?);
        features.push(ClipFeatureSequence::new(&video_id, feats)?);
    }
    Ok(SyntheticDataset {
        annotations,
        features,
        vocab,
        codebook,
    })
}

impl SyntheticDataset {
    /// Writes `train.txt` (all but the last `test_samples` annotations),
    /// `test.txt` when `test_samples > 0`, `vocab.txt`, `word_vectors.txt`
    /// (codebook rows zero-padded to the word-vector width) and one
    /// `features/<video_id>.mgpf` per sample.
    pub fn write(&self, dir: &Path, test_samples: usize) -> Result<()> {
        if test_samples >= self.annotations.len() {
            return Err(Error::Validation(format!(
                "test split of {test_samples} leaves no training samples"
            )));
        }
        let feat_dir = dir.join("features");
        std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        let split = self.annotations.len() - test_samples;
        write_annotations(&dir.join("train.txt"), &self.annotations[..split])?;
        if test_samples > 0 {
            write_annotations(&dir.join("test.txt"), &self.annotations[split..])?;
        }
        self.vocab.save(&dir.join("vocab.txt"))?;
        let rows = self.codebook.rows().into_iter().enumerate().map(|(k, row)| {
            let mut v = row.to_vec();
            v.resize(WORD_DIM, 0.0);
            (self.vocab.token(k + 2).unwrap(), v)
        });
        write_word_vectors(&dir.join("word_vectors.txt"), rows)?;
        for seq in &self.features {
            write_features(&feat_dir.join(format!("{}.mgpf", seq.video_id)), seq)?;
        }
        Ok(())
    }

    /// Clip index range `[start, end)` of sample `idx`'s planted span.
    pub fn planted_clips(&self, idx: usize) -> (usize, usize) {
        let ann = &self.annotations[idx];
        let clips = self.features[idx].num_clips() as f64;
        let tau = ann.duration / clips;
        (
            (ann.gt_span.start / tau).round() as usize,
            (ann.gt_span.end / tau).round() as usize,
        )
    }
}
