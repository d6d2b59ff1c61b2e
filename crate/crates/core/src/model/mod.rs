//! The network, stage by stage.

pub mod coarse;
pub mod coattention;
pub mod comparison;
pub mod fine;
pub mod interaction;
pub mod network;

pub use comparison::ScoreMap;
pub use network::{BatchTrace, FineStage, Model, ModelInput, Network};
