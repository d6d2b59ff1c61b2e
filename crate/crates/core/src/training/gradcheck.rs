use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::{gen_synthetic, Dataset, SyntheticSpec};
use crate::error::Result;
use crate::model::Network;
use crate::params::ParamStore;
use crate::proposal::Scheme;
use crate::training::objective::PreparedBatch;

/// Default number of checked entries.
pub const GRAD_CHECK_ENTRIES: usize = 256;
/// Default base step of the five-point stencil.
pub const GRAD_CHECK_EPSILON: f64 = 1e-3;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
pub const MAX_NARROWING: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Array holding the worst entry.
    pub worst_param: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Entries whose step had to shrink to stay off a kink.
    pub narrowed: usize,
}

/// Flat indices to check: one random entry from every array, then uniform
/// draws until `count` distinct entries are chosen.
pub fn pick_entries(p: &ParamStore, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = BTreeSet::new();
    for info in p.layout().infos() {
        if !info.is_empty() {
            picked.insert(info.offset + rng.random_range(0..info.len()));
        }
    }
    let target = count.min(p.len());
    while picked.len() < target {
        picked.insert(rng.random_range(0..p.len()));
    }
    picked.into_iter().collect()
}

/// Five-point central difference along entry `k`, shrinking the step until
/// no stencil point changes the activation pattern seen at `p`. Returns the
/// estimate and the step used.
fn directional(
    net: &Network,
    batch: &PreparedBatch,
    p: &mut ParamStore,
    k: usize,
    epsilon: f64,
    base: &[u32],
) -> Result<(f64, f64)> {
    let orig = p.as_slice()[k];
    let mut h = epsilon;
    let eval = |p: &mut ParamStore, x: f64| -> Result<(f64, bool)> {
        p.as_mut_slice()[k] = x;
        let (loss, pattern) = batch.loss_and_pattern(net, p)?;
        Ok((loss, pattern == base))
    };
    let mut estimate = 0.0;
    for _ in 0..=MAX_NARROWING {
        let mut f = [0.0; 4];
        let mut smooth = true;
        for (slot, step) in f.iter_mut().zip([h, -h, 2.0 * h, -2.0 * h]) {
            let (loss, same) = eval(p, orig + step)?;
            *slot = loss;
            smooth &= same;
        }
        estimate = (8.0 * (f[0] - f[1]) - (f[2] - f[3])) / (12.0 * h);
        if smooth {
            break;
        }
        h /= 4.0;
    }
    p.as_mut_slice()[k] = orig;
    Ok((estimate, h))
}

/// Compares analytic gradients of the mean batch loss with fourth-order
/// central differences on a seeded subset of entries. Relative error uses the
/// denominator `max(|a|, |n|, 1e-8)`.
///
/// The network is only piecewise smooth (ReLU, max pooling), so a stencil
/// that straddles a kink measures no derivative at all. When a perturbed
/// pass changes the activation pattern the step is divided by four, up to
/// [`MAX_NARROWING`] times.
pub fn grad_check(
    net: &Network,
    params: &ParamStore,
    batch: &PreparedBatch,
    epsilon: f64,
    entries: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let analytic = batch.loss_and_grad(net, params)?.grads;
    let (_, base) = batch.loss_and_pattern(net, params)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        narrowed: 0,
    };
    let mut p = params.clone();
    for k in pick_entries(params, entries, seed) {
        let (n, h) = directional(net, batch, &mut p, k, epsilon, &base)?;
        if h < epsilon {
            report.narrowed += 1;
        }
        let a = analytic.as_slice()[k];
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = err;
            report.worst_param = params
                .layout()
                .owner_of(k)
                .map(|i| i.name.clone())
                .unwrap_or_default();
            report.worst_analytic = a;
            report.worst_numeric = n;
        }
    }
    Ok(report)
}

/// The small configuration used for gradient certification: `T = 4`,
/// `C = 32`, four groups, queries of three words.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        t: 4,
        c: 32,
        l_max: 3,
        input_dim: 16,
        word_dim: 16,
        gru_layers: 2,
        ngram_kernels: vec![1, 2, 3],
        comparison_blocks: 2,
        groups: 4,
        kernel: 3,
        padding: 1,
        scheme: Scheme::Sparse,
        ..ModelConfig::default()
    }
}

/// A synthetic dataset shaped for `config`, with queries of exactly
/// `config.l_max` words.
pub fn tiny_dataset(config: &ModelConfig, samples: usize, seed: u64) -> Result<Dataset> {
    let spec = SyntheticSpec {
        num_samples: samples,
        t_v: 2 * config.t,
        d_v: config.input_dim,
        query_len_range: (config.l_max, config.l_max),
        seed,
        ..SyntheticSpec::default()
    };
    let ds = gen_synthetic(&spec)?;
    Dataset::from_synthetic(&ds, 0..samples, config.word_dim, config.l_max, seed)
}
