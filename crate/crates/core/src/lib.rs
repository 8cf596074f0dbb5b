//! Lightweight text-conditioned generator for low-resolution categorical
//! images: tile maps, sprites and palette-quantized emojis.

pub mod augment;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod fixtures;
pub mod latent;
pub mod model;
pub mod run;
pub mod server;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
