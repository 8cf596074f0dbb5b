use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};

/// Dimension of the sentence embeddings the generator is conditioned on.
pub const EMBED_DIM: usize = 384;

/// How the text embedding steers the residual stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// Embedding enters only through the input concatenation.
    Standard,
    /// Conditional instance norm after every residual block.
    Cin,
    /// Feature-wise linear modulation after every residual block.
    Film,
}

impl Conditioning {
    pub fn as_str(self) -> &'static str {
        match self {
            Conditioning::Standard => "standard",
            Conditioning::Cin => "cin",
            Conditioning::Film => "film",
        }
    }
}

impl std::fmt::Display for Conditioning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub noise_dim: usize,
    pub filters: usize,
    pub kernel: usize,
    pub res_blocks: usize,
    pub conditioning: Conditioning,
    pub output_size: usize,
    #[serde(default = "default_channels_out")]
    pub channels_out: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
}

fn default_channels_out() -> usize {
    NUM_CLASSES
}

fn default_embed_dim() -> usize {
    EMBED_DIM
}

impl Default for ModelConfig {
    /// The best map configuration from the grid search.
    fn default() -> Self {
        ModelConfig {
            noise_dim: 5,
            filters: 256,
            kernel: 7,
            res_blocks: 3,
            conditioning: Conditioning::Standard,
            output_size: 10,
            channels_out: NUM_CLASSES,
            embed_dim: EMBED_DIM,
        }
    }
}

impl ModelConfig {
    pub fn new(
        noise_dim: usize,
        filters: usize,
        kernel: usize,
        res_blocks: usize,
        conditioning: Conditioning,
        output_size: usize,
    ) -> Self {
        ModelConfig {
            noise_dim,
            filters,
            kernel,
            res_blocks,
            conditioning,
            output_size,
            channels_out: NUM_CLASSES,
            embed_dim: EMBED_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 {
            return Err(Error::config("filters", "must be positive"));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::config("kernel", format!("must be odd and positive, got {}", self.kernel)));
        }
        if self.res_blocks == 0 {
            return Err(Error::config("res_blocks", "must be positive"));
        }
        if self.output_size < 4 || !self.output_size.is_multiple_of(2) {
            return Err(Error::config(
                "output_size",
                format!("must be even and at least 4, got {}", self.output_size),
            ));
        }
        if self.channels_out != NUM_CLASSES {
            return Err(Error::config("channels_out", format!("is fixed at {NUM_CLASSES}")));
        }
        if self.embed_dim != EMBED_DIM {
            return Err(Error::config("embed_dim", format!("is fixed at {EMBED_DIM}")));
        }
        Ok(())
    }

    /// Side of the square grid the dense stem reshapes into, before the
    /// single 2x upsampling stage.
    pub fn stem_size(&self) -> usize {
        self.output_size / 2
    }

    pub fn input_dim(&self) -> usize {
        self.embed_dim + self.noise_dim
    }

    /// Closed-form count of every stored scalar, running statistics included.
    pub fn param_count(&self) -> usize {
        self.trainable_param_count() + self.res_blocks * 2 * 2 * self.filters
    }

    /// Closed-form count of scalars updated by the optimizer.
    pub fn trainable_param_count(&self) -> usize {
        let (f, k, s) = (self.filters, self.kernel, self.stem_size());
        let stem = self.input_dim() * s * s * f + s * s * f;
        let conv = k * k * f * f + f;
        let bn_affine = 2 * f;
        let cond = match self.conditioning {
            Conditioning::Standard => 0,
            Conditioning::Cin | Conditioning::Film => 2 * (self.embed_dim * f + f),
        };
        let block = 2 * (conv + bn_affine) + cond;
        let head = f * self.channels_out + self.channels_out;
        stem + self.res_blocks * block + head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stock_configs_validate() {
        for n in [8, 10, 16] {
            ModelConfig { output_size: n, ..Default::default() }.validate().unwrap();
        }
    }

    #[test]
    fn invalid_fields_are_named() {
        let bad = ModelConfig { kernel: 4, ..Default::default() };
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "kernel"),
            other => panic!("{other:?}"),
        }
        let bad = ModelConfig { output_size: 9, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("output_size"));
        let bad = ModelConfig { embed_dim: 512, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("embed_dim"));
    }

    #[test]
    fn serde_spells_out_every_field() {
        let json = serde_json::to_value(ModelConfig::default()).unwrap();
        for key in ["noise_dim", "filters", "kernel", "res_blocks", "conditioning", "output_size", "channels_out", "embed_dim"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["conditioning"], "standard");
    }
}
