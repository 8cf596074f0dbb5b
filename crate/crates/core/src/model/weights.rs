use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{Conditioning, ModelConfig};
use crate::autodiff::BatchStats;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Batch-norm running statistics; never touched by the optimizer.
    RunningStat,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Truncated normal (cut at two deviations) with std `sqrt(2 / fan_in)`.
    FanIn(usize),
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    init: Init,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct BatchNormLayout {
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct ProjectionLayout {
    pub gamma_w: usize,
    pub gamma_b: usize,
    pub beta_w: usize,
    pub beta_b: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct BlockLayout {
    pub conv1: (usize, usize),
    pub bn1: BatchNormLayout,
    pub conv2: (usize, usize),
    pub bn2: BatchNormLayout,
    pub cond: Option<ProjectionLayout>,
}

/// Positions of every parameter within [`ModelWeights`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub stem: (usize, usize),
    pub blocks: Vec<BlockLayout>,
    pub head: (usize, usize),
}

struct Planner(Vec<ParamSpec>);

impl Planner {
    fn add(&mut self, name: String, shape: Vec<usize>, kind: ParamKind, init: Init) -> usize {
        self.0.push(ParamSpec { name, shape, kind, init });
        self.0.len() - 1
    }

    fn trainable(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.add(name, shape, ParamKind::Trainable, init)
    }

    fn batch_norm(&mut self, prefix: &str, f: usize) -> BatchNormLayout {
        BatchNormLayout {
            gamma: self.trainable(format!("{prefix}.gamma"), vec![f], Init::Const(1.0)),
            beta: self.trainable(format!("{prefix}.beta"), vec![f], Init::Const(0.0)),
            mean: self.add(format!("{prefix}.running_mean"), vec![f], ParamKind::RunningStat, Init::Const(0.0)),
            var: self.add(format!("{prefix}.running_var"), vec![f], ParamKind::RunningStat, Init::Const(1.0)),
        }
    }
}

/// Parameter names, shapes and positions for `config`, in storage order.
pub(crate) fn plan(config: &ModelConfig) -> (Vec<ParamSpec>, Layout) {
    let (f, k, s) = (config.filters, config.kernel, config.stem_size());
    let mut p = Planner(Vec::new());
    let stem = (
        p.trainable("stem.dense.weight".into(), vec![config.input_dim(), s * s * f], Init::FanIn(config.input_dim())),
        p.trainable("stem.dense.bias".into(), vec![s * s * f], Init::Const(0.0)),
    );
    let blocks = (0..config.res_blocks)
        .map(|i| {
            let conv = |p: &mut Planner, which: &str| {
                (
                    p.trainable(format!("block{i}.{which}.kernel"), vec![k, k, f, f], Init::FanIn(k * k * f)),
                    p.trainable(format!("block{i}.{which}.bias"), vec![f], Init::Const(0.0)),
                )
            };
            let conv1 = conv(&mut p, "conv1");
            let bn1 = p.batch_norm(&format!("block{i}.bn1"), f);
            let conv2 = conv(&mut p, "conv2");
            let bn2 = p.batch_norm(&format!("block{i}.bn2"), f);
            // Zero projection weights make gamma(c) = 1 and beta(c) = 0 for any c.
            let cond = (config.conditioning != Conditioning::Standard).then(|| {
                let e = config.embed_dim;
                ProjectionLayout {
                    gamma_w: p.trainable(format!("block{i}.cond.gamma.weight"), vec![e, f], Init::Const(0.0)),
                    gamma_b: p.trainable(format!("block{i}.cond.gamma.bias"), vec![f], Init::Const(1.0)),
                    beta_w: p.trainable(format!("block{i}.cond.beta.weight"), vec![e, f], Init::Const(0.0)),
                    beta_b: p.trainable(format!("block{i}.cond.beta.bias"), vec![f], Init::Const(0.0)),
                }
            });
            BlockLayout { conv1, bn1, conv2, bn2, cond }
        })
        .collect();
    let head = (
        p.trainable("head.kernel".into(), vec![1, 1, f, config.channels_out], Init::FanIn(f)),
        p.trainable("head.bias".into(), vec![config.channels_out], Init::Const(0.0)),
    );
    (p.0, Layout { stem, blocks, head })
}

/// Named parameter tensors in a fixed order determined by the config.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T: Scalar = f32> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    pub(crate) fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .iter()
            .map(|s| {
                let value = match s.init {
                    Init::Const(c) => Tensor::full(s.shape.clone(), T::from_f64(c)),
                    Init::FanIn(fan_in) => {
                        let std = (2.0 / fan_in as f64).sqrt();
                        Tensor::from_fn(s.shape.clone(), |_| loop {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            if z.abs() <= 2.0 {
                                break T::from_f64(z * std);
                            }
                        })
                    }
                };
                Param {
                    name: s.name.clone(),
                    kind: s.kind,
                    value,
                }
            })
            .collect();
        ModelWeights { params }
    }

    /// Checks `params` against the planned names, kinds and shapes.
    pub(crate) fn from_params(specs: &[ParamSpec], params: Vec<Param<T>>) -> Result<Self> {
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.name != p.name || s.kind != p.kind || s.shape != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} {:?} {:?} does not match expected {:?} {:?} {:?}",
                    p.name,
                    p.kind,
                    p.value.shape(),
                    s.name,
                    s.kind,
                    s.shape
                )));
            }
        }
        Ok(ModelWeights { params })
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub(crate) fn tensor(&self, idx: usize) -> &Tensor<T> {
        &self.params[idx].value
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, updates: &[BatchNormUpdate<T>], momentum: f64) {
        let m = T::from_f64(momentum);
        let one_m = T::from_f64(1.0 - momentum);
        for u in updates {
            for (idx, batch) in [(u.mean_idx, &u.stats.mean), (u.var_idx, &u.stats.var)] {
                for (r, &b) in self.params[idx].value.data_mut().iter_mut().zip(batch) {
                    *r = m * *r + one_m * b;
                }
            }
        }
    }
}

/// Batch statistics observed in a training-mode forward pass, addressed to
/// the running-stat parameters they update.
#[derive(Clone, Debug)]
pub struct BatchNormUpdate<T> {
    pub mean_idx: usize,
    pub var_idx: usize,
    pub stats: BatchStats<T>,
}
