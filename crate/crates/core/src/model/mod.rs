//! The generator: a dense stem, one nearest-neighbor upsampling stage, a
//! stack of residual blocks with optional text conditioning, and a 1x1
//! convolution to 16 per-pixel class probabilities.

pub mod checkpoint;
pub mod config;
pub mod generator;
pub mod gradcheck;
pub mod layers;
pub mod weights;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{Conditioning, ModelConfig, EMBED_DIM};
pub use generator::{decode, Forward, Generator, ModelMeta};
pub use gradcheck::{check_gradients, GradError};
pub use layers::{Mode, BN_EPS, BN_MOMENTUM, IN_EPS};
pub use weights::{BatchNormUpdate, ModelWeights, Param, ParamKind};
