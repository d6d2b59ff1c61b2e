use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;

use crate::data::annotations::{load_annotations, Annotation};
use crate::data::features::{load_features, ClipFeatureSequence};
use crate::data::synthetic::SyntheticDataset;
use crate::data::vocab::{load_word_vectors, seeded_table, tokenize, TokenSequence, Vocab};
use crate::error::{Error, Result};
use crate::proposal::MomentSpan;

/// One annotated query together with its video's features.
#[derive(Debug, Clone)]
pub struct Sample {
    pub video_id: String,
    pub duration: f64,
    pub gt_span: MomentSpan,
    /// Unpadded, truncated to the model's `L_max`.
    pub tokens: TokenSequence,
    /// `T_V × D_v` clip features.
    pub video: Arc<Array2<f64>>,
}

/// Samples plus the word-embedding table their token ids index into.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub vocab: Vocab,
    /// `|vocab| × word_dim`.
    pub embeddings: Arc<Array2<f64>>,
}

fn to_f64(seq: &ClipFeatureSequence) -> Arc<Array2<f64>> {
    Arc::new(seq.feats.mapv(f64::from))
}

impl Dataset {
    /// Joins annotations with features looked up by video id. Every missing
    /// video is reported at once.
    pub fn from_parts(
        annotations: &[Annotation],
        features: &HashMap<String, Arc<Array2<f64>>>,
        vocab: Vocab,
        embeddings: Arc<Array2<f64>>,
        l_max: usize,
    ) -> Result<Self> {
        let mut missing: Vec<String> = annotations
            .iter()
            .filter(|a| !features.contains_key(&a.video_id))
            .map(|a| a.video_id.clone())
            .collect();
        missing.sort();
        missing.dedup();
        if !missing.is_empty() {
            return Err(Error::MissingFeatures(missing));
        }
        if embeddings.nrows() != vocab.len() {
            return Err(Error::Validation(format!(
                "embedding table has {} rows for a vocabulary of {}",
                embeddings.nrows(),
                vocab.len()
            )));
        }
        let samples = annotations
            .iter()
            .map(|a| {
                let mut tokens = tokenize(&a.query, &vocab)?;
                tokens.token_ids.truncate(l_max);
                tokens.mask.truncate(l_max);
                Ok(Sample {
                    video_id: a.video_id.clone(),
                    duration: a.duration,
                    gt_span: a.gt_span,
                    tokens,
                    video: Arc::clone(&features[&a.video_id]),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            samples,
            vocab,
            embeddings,
        })
    }

    /// Loads `annotations`, the `<features_dir>/<video_id>.mgpf` files they
    /// reference, the vocabulary and the word vectors.
    pub fn load(
        annotations: &Path,
        features_dir: &Path,
        vocab: &Path,
        word_vectors: &Path,
        word_dim: usize,
        l_max: usize,
        seed: u64,
    ) -> Result<Self> {
        let anns = load_annotations(annotations)?;
        let vocab = Vocab::load(vocab)?;
        let embeddings = load_word_vectors(word_vectors, &vocab, word_dim, seed)?;
        let mut features = HashMap::new();
        let mut missing = Vec::new();
        for a in &anns {
            if features.contains_key(&a.video_id) {
                continue;
            }
            let path = features_dir.join(format!("{}.mgpf", a.video_id));
            if !path.exists() {
                missing.push(a.video_id.clone());
                continue;
            }
            features.insert(a.video_id.clone(), to_f64(&load_features(&path)?));
        }
        if !missing.is_empty() {
            missing.sort();
            missing.dedup();
            return Err(Error::MissingFeatures(missing));
        }
        Self::from_parts(&anns, &features, vocab, Arc::new(embeddings), l_max)
    }

    /// In-memory equivalent of loading the files [`SyntheticDataset::write`]
    /// produces, restricted to `range` of the samples.
    pub fn from_synthetic(
        ds: &SyntheticDataset,
        range: Range<usize>,
        word_dim: usize,
        l_max: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut embeddings = seeded_table(ds.vocab.len(), word_dim, seed);
        for (k, row) in ds.codebook.rows().into_iter().enumerate() {
            let mut dst = embeddings.row_mut(k + 2);
            dst.fill(0.0);
            for (d, v) in dst.iter_mut().zip(row) {
                *d = *v;
            }
        }
        let features = ds
            .features
            .iter()
            .map(|f| (f.video_id.clone(), to_f64(f)))
            .collect();
        Self::from_parts(
            &ds.annotations[range],
            &features,
            ds.vocab.clone(),
            Arc::new(embeddings),
            l_max,
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Word vectors of a (possibly padded) token sequence, one row per
    /// position.
    pub fn query_vectors(&self, tokens: &TokenSequence) -> Array2<f64> {
        let dim = self.embeddings.ncols();
        let mut out = Array2::zeros((tokens.token_ids.len(), dim));
        for (mut row, &id) in out.rows_mut().into_iter().zip(&tokens.token_ids) {
            row.assign(&self.embeddings.row(id));
        }
        out
    }
}
