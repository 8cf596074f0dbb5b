use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{Conditioning, ModelConfig};
use super::layers::{self, BatchNormVars, Mode, ProjectionVars, ResidualBlockVars};
use super::weights::{plan, BatchNormLayout, BatchNormUpdate, Layout, ModelWeights, ParamKind};
use crate::autodiff::{Graph, Var};
use crate::data::{CategoricalImage, Domain, Palette, RenderStyle, TileAtlas};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// What a trained model was trained on, carried alongside its weights.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default)]
    pub domain: Option<Domain>,
    #[serde(default)]
    pub palette: Option<Palette>,
    #[serde(default)]
    pub atlas: Option<TileAtlas>,
}

impl ModelMeta {
    /// Atlas if known, then palette, then PICO-8 colors.
    pub fn render_style(&self, scale: usize) -> RenderStyle {
        match (&self.atlas, &self.palette) {
            (Some(a), _) => RenderStyle::atlas(a.clone()),
            (None, Some(p)) => RenderStyle::palette(*p),
            (None, None) => RenderStyle::palette(Palette::PICO8),
        }
        .with_scale(scale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T: Scalar = f32> {
    config: ModelConfig,
    meta: ModelMeta,
    weights: ModelWeights<T>,
    layout: Layout,
}

/// Result of a forward pass: the `[B,N,N,16]` probabilities, one variable
/// per stored parameter (in storage order) and, in training mode, the batch
/// statistics for the running averages.
pub struct Forward<T> {
    pub probs: Var,
    pub params: Vec<Var>,
    pub bn_updates: Vec<BatchNormUpdate<T>>,
}

impl Generator<f32> {
    /// Fresh weights; identical for identical `(config, seed)`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = plan(&config);
        Ok(Generator {
            weights: ModelWeights::init(&specs, seed),
            config,
            meta: ModelMeta::default(),
            layout,
        })
    }
}

impl<T: Scalar> Generator<T> {
    pub fn from_parts(config: ModelConfig, meta: ModelMeta, params: Vec<super::Param<T>>) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = plan(&config);
        Ok(Generator {
            weights: ModelWeights::from_params(&specs, params)?,
            config,
            meta,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn set_meta(&mut self, meta: ModelMeta) {
        self.meta = meta;
    }

    pub fn weights(&self) -> &ModelWeights<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut ModelWeights<T> {
        &mut self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.scalar_count()
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            config: self.config.clone(),
            meta: self.meta.clone(),
            weights: self.weights.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Builds the forward graph for `embedding` `[B,384]` and `noise`
    /// `[B,noise_dim]`. With `track_params` the trainable parameters enter
    /// the graph as gradient-receiving leaves; otherwise as constants.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        embedding: Var,
        noise: Var,
        mode: Mode,
        track_params: bool,
    ) -> Result<Forward<T>> {
        let c = &self.config;
        let es = g.shape(embedding).to_vec();
        if es.len() != 2 || es[1] != c.embed_dim {
            return Err(Error::dim("generator embedding", &es, &[es.first().copied().unwrap_or(0), c.embed_dim]));
        }
        let b = es[0];
        if g.shape(noise) != [b, c.noise_dim] {
            return Err(Error::dim("generator noise", g.shape(noise), &[b, c.noise_dim]));
        }

        let params: Vec<Var> = self
            .weights
            .params()
            .iter()
            .map(|p| match p.kind {
                ParamKind::Trainable if track_params => g.param(&p.value),
                _ => g.constant(&p.value),
            })
            .collect();
        let bn_vars = |l: &BatchNormLayout| BatchNormVars {
            gamma: params[l.gamma],
            beta: params[l.beta],
            running_mean: self.weights.tensor(l.mean).data(),
            running_var: self.weights.tensor(l.var).data(),
        };

        let input = g.concat_last_axis(embedding, noise)?;
        let s = c.stem_size();
        let h = g.dense(input, params[self.layout.stem.0], params[self.layout.stem.1])?;
        let h = g.reshape(h, &[b, s, s, c.filters])?;
        let mut h = g.upsample_nearest_2x(h)?;

        let mut bn_updates = Vec::new();
        for bl in &self.layout.blocks {
            let vars = ResidualBlockVars {
                conv1: (params[bl.conv1.0], params[bl.conv1.1]),
                bn1: bn_vars(&bl.bn1),
                conv2: (params[bl.conv2.0], params[bl.conv2.1]),
                bn2: bn_vars(&bl.bn2),
            };
            let (y, stats) = layers::residual_block(g, h, &vars, mode)?;
            for (layout, st) in [&bl.bn1, &bl.bn2].into_iter().zip(stats) {
                if let Some(stats) = st {
                    bn_updates.push(BatchNormUpdate {
                        mean_idx: layout.mean,
                        var_idx: layout.var,
                        stats,
                    });
                }
            }
            h = match (&bl.cond, c.conditioning) {
                (Some(p), cond) => {
                    let p = ProjectionVars {
                        gamma_w: params[p.gamma_w],
                        gamma_b: params[p.gamma_b],
                        beta_w: params[p.beta_w],
                        beta_b: params[p.beta_b],
                    };
                    if cond == Conditioning::Cin {
                        layers::conditional_instance_norm(g, y, embedding, &p)?
                    } else {
                        layers::film(g, y, embedding, &p)?
                    }
                }
                (None, _) => y,
            };
        }

        let logits = g.conv2d(h, params[self.layout.head.0], params[self.layout.head.1])?;
        let probs = g.softmax_channels(logits);
        Ok(Forward {
            probs,
            params,
            bn_updates,
        })
    }

    /// Inference-mode probabilities `[B,N,N,16]`.
    pub fn generate_batch(&self, embeddings: &Tensor<T>, noise: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let e = g.constant(embeddings);
        let z = g.constant(noise);
        let out = self.forward(&mut g, e, z, Mode::Infer, false)?;
        Ok(g.value(out.probs).clone())
    }

    /// Probabilities `[N,N,16]` for one embedding and noise vector.
    pub fn generate(&self, embedding: &[T], noise: &[T]) -> Result<Tensor<T>> {
        let e = Tensor::new([1, embedding.len()], embedding.to_vec())?;
        let z = Tensor::new([1, noise.len()], noise.to_vec())?;
        let n = self.config.output_size;
        self.generate_batch(&e, &z)?.reshape([n, n, self.config.channels_out])
    }

    /// Argmax image for one embedding and noise vector.
    pub fn generate_image(&self, embedding: &[T], noise: &[T]) -> Result<CategoricalImage> {
        decode(&self.generate(embedding, noise)?)
    }

    pub fn zero_noise(&self) -> Vec<T> {
        vec![T::zero(); self.config.noise_dim]
    }

    /// Zero noise without a seed, otherwise the first seeded draw. The
    /// latent-lab operations use this so unseeded results are reproducible
    /// figures.
    pub fn lab_noise(&self, seed: Option<u64>) -> Vec<T> {
        match seed {
            None => self.zero_noise(),
            Some(s) => self.sample_noise(s, 1).remove(0),
        }
    }

    /// `count` standard normal noise vectors drawn from one seeded stream.
    /// Every front end uses this, so a seed means the same images everywhere.
    pub fn sample_noise(&self, seed: u64, count: usize) -> Vec<Vec<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                (0..self.config.noise_dim)
                    .map(|_| T::from_f64(StandardNormal.sample(&mut rng)))
                    .collect()
            })
            .collect()
    }
}

/// Per-pixel argmax of `[N,N,16]` or `[1,N,N,16]` probabilities.
pub fn decode<T: Scalar>(probs: &Tensor<T>) -> Result<CategoricalImage> {
    CategoricalImage::decode(probs)
}
