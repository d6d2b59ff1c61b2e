//! Layers with hand-written backward passes.
//!
//! Every layer keeps [`ParamId`](crate::params::ParamId) handles only; values
//! come from the [`ParamStore`](crate::params::ParamStore) passed to
//! `forward`, and `backward` accumulates into a gradient store of the same
//! layout.

pub mod conv;
pub mod gru;
pub mod linear;
pub mod norm;

pub use conv::{GroupConv2d, TemporalConv};
pub use gru::{BiGru, BiGruTrace, GruDirection};
pub use linear::Linear;
pub use norm::{BatchNorm, RunningStats};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
