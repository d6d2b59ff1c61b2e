//! Helpers shared by unit tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::ParamStore;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Largest relative gap between `analytic` and central differences of
/// `loss` over every parameter entry whose array is not named in `skip`.
pub fn fd_max_rel_error(
    p: &ParamStore,
    analytic: &ParamStore,
    loss: impl Fn(&ParamStore) -> f64,
    h: f64,
    skip: &[&str],
) -> f64 {
    let mut q = p.clone();
    let mut worst = 0.0f64;
    for k in 0..p.len() {
        let owner = &p.layout().owner_of(k).unwrap().name;
        if skip.contains(&owner.as_str()) {
            continue;
        }
        let orig = q.as_slice()[k];
        q.as_mut_slice()[k] = orig + h;
        let up = loss(&q);
        q.as_mut_slice()[k] = orig - h;
        let down = loss(&q);
        q.as_mut_slice()[k] = orig;
        let n = (up - down) / (2.0 * h);
        let a = analytic.as_slice()[k];
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Gradient of a single input matrix by central differences.
pub fn fd_input_grad(x: &Array2<f64>, loss: impl Fn(&Array2<f64>) -> f64, h: f64) -> Array2<f64> {
    let mut y = x.clone();
    let mut out = Array2::zeros(x.dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = y[[r, c]];
        y[[r, c]] = orig + h;
        let up = loss(&y);
        y[[r, c]] = orig - h;
        let down = loss(&y);
        y[[r, c]] = orig;
        out[[r, c]] = (up - down) / (2.0 * h);
    }
    out
}

pub fn max_rel_gap(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
