use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use crate::autodiff::Graph;
use crate::data::CategoricalImage;
use crate::error::{Error, Result};
use crate::model::{Generator, Mode, ParamKind, BN_MOMENTUM};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping; 0 never stops early.
    pub early_stop_patience: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            early_stop_patience: 50,
            max_steps: None,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

/// A training example: conditioning embedding and a `[N,N,16]` target whose
/// pixels are probability distributions (one-hot or mixed).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRow {
    pub embedding: Vec<f32>,
    pub target: Tensor,
}

/// A held-out caption embedding and its ground-truth grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ValPair {
    pub embedding: Vec<f32>,
    pub image: CategoricalImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub steps: usize,
    pub stopped_early: bool,
    /// Wall-clock time; not serialized so written reports are reproducible.
    #[serde(skip)]
    pub seconds: f64,
    pub param_count: usize,
}

/// Mean per-pixel agreement between zero-noise generations and the targets.
pub fn validation_accuracy(model: &Generator, val: &[ValPair]) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Usage("validation set is empty".into()));
    }
    let cfg = model.config();
    let (n, e) = (cfg.output_size, cfg.embed_dim);
    let mut total = 0.0;
    for chunk in val.chunks(64) {
        let b = chunk.len();
        let mut emb = Vec::with_capacity(b * e);
        for p in chunk {
            if p.embedding.len() != e {
                return Err(Error::dim("validation embedding", &[p.embedding.len()], &[e]));
            }
            emb.extend_from_slice(&p.embedding);
        }
        let probs = model.generate_batch(&Tensor::new([b, e], emb)?, &Tensor::zeros([b, cfg.noise_dim]))?;
        let per = n * n * cfg.channels_out;
        for (i, p) in chunk.iter().enumerate() {
            let one = Tensor::new([n, n, cfg.channels_out], probs.data()[i * per..(i + 1) * per].to_vec())?;
            total += CategoricalImage::decode(&one)?.pixel_accuracy(&p.image);
        }
    }
    Ok(total / val.len() as f64)
}

/// Mini-batch training with Adam and early stopping on validation accuracy.
/// On return `model` holds the weights of the best validation epoch.
pub fn train(model: &mut Generator, rows: &[TrainRow], val: &[ValPair], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Usage("validation set is empty".into()));
    }
    let mc = model.config().clone();
    let target_shape = [mc.output_size, mc.output_size, mc.channels_out];
    for r in rows {
        if r.embedding.len() != mc.embed_dim {
            return Err(Error::dim("training embedding", &[r.embedding.len()], &[mc.embed_dim]));
        }
        if r.target.shape() != target_shape {
            return Err(Error::dim("training target", r.target.shape(), &target_shape));
        }
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let trainable: Vec<usize> = model
        .weights()
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind == ParamKind::Trainable)
        .map(|(i, _)| i)
        .collect();
    let mut adam = AdamState::new(trainable.iter().map(|&i| model.weights().params()[i].value.shape()));

    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0, model.weights().clone());
    let mut steps = 0;
    let mut stopped_early = false;
    let per_target = target_shape.iter().product::<usize>();

    'epochs: for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let b = batch.len();
            let mut emb = Vec::with_capacity(b * mc.embed_dim);
            let mut tgt = Vec::with_capacity(b * per_target);
            for &i in batch {
                emb.extend_from_slice(&rows[i].embedding);
                tgt.extend_from_slice(rows[i].target.data());
            }
            let noise = Tensor::from_fn([b, mc.noise_dim], |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z as f32
            });
            let target = Tensor::new([b, target_shape[0], target_shape[1], target_shape[2]], tgt)?;

            let (loss, grads, updates) = {
                let mut g = Graph::new();
                let e = g.leaf(Tensor::new([b, mc.embed_dim], emb)?, false);
                let z = g.leaf(noise, false);
                let out = model.forward(&mut g, e, z, Mode::Train, true)?;
                let loss = g.cce_loss(out.probs, &target)?;
                g.backward(loss)?;
                let grads: Vec<Option<Vec<f32>>> = trainable
                    .iter()
                    .map(|&i| g.grad_slice(out.params[i]).map(<[f32]>::to_vec))
                    .collect();
                (g.value(loss).data()[0] as f64, grads, out.bn_updates)
            };
            let grad_refs: Vec<Option<&[f32]>> = grads.iter().map(|g| g.as_deref()).collect();
            let weights = model.weights_mut();
            weights.update_running_stats(&updates, BN_MOMENTUM);
            let params = weights.params_mut();
            let mut targets: Vec<&mut Tensor> = Vec::with_capacity(trainable.len());
            for (i, p) in params.iter_mut().enumerate() {
                if p.kind == ParamKind::Trainable {
                    debug_assert!(trainable.binary_search(&i).is_ok());
                    targets.push(&mut p.value);
                }
            }
            adam_step(&mut targets, &grad_refs, &mut adam, cfg.learning_rate)?;
            if !loss.is_finite() {
                return Err(Error::Validation(format!("training diverged at step {steps} (loss {loss})")));
            }
            loss_sum += loss * b as f64;
            seen += b;
            steps += 1;
        }
        if seen == 0 {
            break;
        }
        let acc = validation_accuracy(model, val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_accuracy: acc,
        });
        if acc > best.0 {
            best = (acc, epoch, model.weights().clone());
        } else if cfg.early_stop_patience > 0 && epoch - best.1 >= cfg.early_stop_patience {
            stopped_early = true;
            break 'epochs;
        }
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }

    *model.weights_mut() = best.2;
    Ok(TrainReport {
        history,
        best_epoch: best.1,
        best_val_accuracy: best.0.max(0.0),
        steps,
        stopped_early,
        seconds: start.elapsed().as_secs_f64(),
        param_count: model.param_count(),
    })
}
