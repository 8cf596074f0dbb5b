use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-7;

/// First and second moment buffers, one pair per optimized tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'s>(shapes: impl IntoIterator<Item = &'s [usize]>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(|s| Tensor::zeros(s.to_vec())).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. `grads[i]` belongs to `params[i]`.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Option<&[f32]>], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Usage(format!(
            "adam_step got {} parameters, {} gradients and {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let g = g.ok_or_else(|| Error::Usage(format!("no gradient for trainable parameter #{i}")))?;
        if g.len() != p.numel() || state.m[i].shape() != p.shape() {
            return Err(Error::dim("adam_step", p.shape(), &[g.len()]));
        }
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powf(state.t as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(state.t as f64);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].unwrap();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j] as f64;
            let mj = ADAM_BETA1 * m[j] as f64 + (1.0 - ADAM_BETA1) * gj;
            let vj = ADAM_BETA2 * v[j] as f64 + (1.0 - ADAM_BETA2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let step = lr * (mj / c1) / ((vj / c2).sqrt() + ADAM_EPS);
            *w = (*w as f64 - step) as f32;
        }
    }
    Ok(())
}
