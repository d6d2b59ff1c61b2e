//! Labels, loss, optimizer, training loop, checkpoints and gradient checking.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod labels;
pub mod objective;
pub mod trainer;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, Restored};
pub use gradcheck::{grad_check, GradCheckReport};
pub use labels::{alignment_loss, alignment_loss_grad, scale_iou, scale_labels, ScaledLabels, PROB_CLIP};
pub use objective::{BatchGrad, PreparedBatch};
pub use trainer::{epoch_line, Trainer};
