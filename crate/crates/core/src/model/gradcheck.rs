//! End-to-end gradient check of the generator's cross-entropy loss against
//! central differences, in 64-bit.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::generator::Generator;
use super::layers::Mode;
use super::weights::ParamKind;
use crate::autodiff::{relative_error, Graph};
use crate::error::Result;
use crate::tensor::Tensor;

/// Largest relative error seen for one parameter tensor (or `"embedding"`).
#[derive(Clone, Debug, PartialEq)]
pub struct GradError {
    pub name: String,
    pub checked: usize,
    /// Entries skipped because a ReLU boundary sat within the step even after
    /// shrinking it.
    pub kinks: usize,
    pub max_relative_error: f64,
}

enum Probe {
    Smooth(f64),
    Kink,
}

/// Central difference at `eps`, accepted once it agrees with the estimate
/// at a tenth of the step and the one-sided slopes there roughly agree. A
/// ReLU boundary inside the step breaks one of those, so the step shrinks up
/// to twice before giving up.
fn numeric(f0: f64, eps: f64, mut at: impl FnMut(f64) -> Result<f64>) -> Result<Probe> {
    let mut probe = |h: f64| -> Result<(f64, f64)> {
        let (up, down) = (at(h)?, at(-h)?);
        let gap = ((up - f0) / h - (f0 - down) / h).abs();
        Ok(((up - down) / (2.0 * h), gap))
    };
    let mut h = eps;
    let (mut coarse, _) = probe(h)?;
    for _ in 0..2 {
        let (fine, gap) = probe(h / 10.0)?;
        let scale = coarse.abs().max(fine.abs());
        if (coarse - fine).abs() <= 1e-8 + 1e-4 * scale && gap <= 1e-6 + 0.1 * scale {
            return Ok(Probe::Smooth(coarse));
        }
        h /= 10.0;
        coarse = fine;
    }
    Ok(Probe::Kink)
}

fn loss(model: &Generator<f64>, emb: &Tensor<f64>, noise: &Tensor<f64>, target: &Tensor<f64>, mode: Mode) -> Result<f64> {
    let mut g = Graph::new();
    let e = g.leaf(emb.clone(), false);
    let z = g.leaf(noise.clone(), false);
    let out = model.forward(&mut g, e, z, mode, false)?;
    let l = g.cce_loss(out.probs, target)?;
    Ok(g.value(l).data()[0])
}

/// Checks up to `samples` randomly chosen entries of every trainable tensor
/// and of the embedding input.
#[allow(clippy::too_many_arguments)]
pub fn check_gradients(
    model: &Generator<f64>,
    embedding: &Tensor<f64>,
    noise: &Tensor<f64>,
    target: &Tensor<f64>,
    mode: Mode,
    samples: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<GradError>> {
    let mut g = Graph::new();
    let e = g.leaf(embedding.clone(), true);
    let z = g.leaf(noise.clone(), false);
    let out = model.forward(&mut g, e, z, mode, true)?;
    let l = g.cce_loss(out.probs, target)?;
    g.backward(l)?;

    let f0 = loss(model, embedding, noise, target, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut report = Vec::new();
    for (idx, p) in model.weights().params().iter().enumerate() {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        let analytic = g.grad(out.params[idx]).unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()));
        let n = p.value.numel();
        let (mut worst, mut kinks) = (0.0f64, 0);
        let picks = sample(&mut rng, n, samples.min(n));
        for i in picks.iter() {
            let orig = p.value.data()[i];
            let probed = numeric(f0, eps, |h| {
                probe.weights_mut().params_mut()[idx].value.data_mut()[i] = orig + h;
                loss(&probe, embedding, noise, target, mode)
            })?;
            probe.weights_mut().params_mut()[idx].value.data_mut()[i] = orig;
            match probed {
                Probe::Smooth(d) => worst = worst.max(relative_error(analytic.data()[i], d)),
                Probe::Kink => kinks += 1,
            }
        }
        report.push(GradError {
            name: p.name.clone(),
            checked: picks.len(),
            kinks,
            max_relative_error: worst,
        });
    }

    let analytic = g.grad(e).expect("embedding requires grad");
    let n = embedding.numel();
    let picks = sample(&mut rng, n, samples.min(n));
    let (mut worst, mut kinks) = (0.0f64, 0);
    for i in picks.iter() {
        let probed = numeric(f0, eps, |h| {
            let mut shifted = embedding.clone();
            shifted.data_mut()[i] += h;
            loss(model, &shifted, noise, target, mode)
        })?;
        match probed {
            Probe::Smooth(d) => worst = worst.max(relative_error(analytic.data()[i], d)),
            Probe::Kink => kinks += 1,
        }
    }
    report.push(GradError {
        name: "embedding".into(),
        checked: picks.len(),
        kinks,
        max_relative_error: worst,
    });
    Ok(report)
}
