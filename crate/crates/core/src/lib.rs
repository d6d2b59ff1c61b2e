//! Moment retrieval in untrimmed videos with a multi-granularity perception
//! network: coarse recurrent encoders, co-attention, a sparse 2D grid of
//! candidate moments, fine-grained re-encoding with gated interaction,
//! group-convolution comparison over neighbouring candidates, and a sigmoid
//! ranker trained against scaled-IoU labels.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod params;
pub mod proposal;
pub mod training;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
