//! A small CNN engine: tensors, layers with exact backpropagation, the two
//! architecture presets, a momentum-SGD trainer and checkpoints.
//!
//! Everything runs in `f64`. Work is parallel across batch items and
//! reduced in item order, so results are independent of the thread count.

mod checkpoint;
mod gemm;
mod gradcheck;
pub mod layers;
mod network;
mod spec;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamAddress};
pub use network::{Forward, Network, ParamBlock, ParamKind};
pub use spec::{ArchitectureSpec, LayerSpec, PRESETS};
pub use tensor::Tensor;
pub use train::{evaluate, train, EpochStats, TrainConfig, TrainOutcome};

pub(crate) use train::argmax;
