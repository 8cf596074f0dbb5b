//! Building blocks of the generator, expressed as graph operations over
//! already-registered parameter variables.

use crate::autodiff::{BatchStats, Graph, Var};
use crate::error::Result;
use crate::tensor::Scalar;

pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;
pub const IN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics and reports them.
    Train,
    /// Batch norm uses running statistics.
    Infer,
}

pub struct BatchNormVars<'p, T> {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: &'p [T],
    pub running_var: &'p [T],
}

pub fn batchnorm<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    bn: &BatchNormVars<'_, T>,
    mode: Mode,
) -> Result<(Var, Option<BatchStats<T>>)> {
    let eps = T::from_f64(BN_EPS);
    match mode {
        Mode::Train => {
            let (y, stats) = g.batch_norm_train(x, bn.gamma, bn.beta, eps)?;
            Ok((y, Some(stats)))
        }
        Mode::Infer => Ok((
            g.batch_norm_infer(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, eps)?,
            None,
        )),
    }
}

/// Two dense projections of the conditioning vector, one for the scale and
/// one for the shift.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionVars {
    pub gamma_w: Var,
    pub gamma_b: Var,
    pub beta_w: Var,
    pub beta_b: Var,
}

fn project<T: Scalar>(g: &mut Graph<'_, T>, cond: Var, p: &ProjectionVars) -> Result<(Var, Var)> {
    Ok((g.dense(cond, p.gamma_w, p.gamma_b)?, g.dense(cond, p.beta_w, p.beta_b)?))
}

/// Instance-normalizes `x` then applies a scale and shift predicted from `cond`.
pub fn conditional_instance_norm<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    cond: Var,
    p: &ProjectionVars,
) -> Result<Var> {
    let xn = g.instance_norm(x, T::from_f64(IN_EPS))?;
    let (gamma, beta) = project(g, cond, p)?;
    g.modulate(xn, gamma, beta)
}

/// Scale and shift predicted from `cond`, applied without normalization.
pub fn film<T: Scalar>(g: &mut Graph<'_, T>, x: Var, cond: Var, p: &ProjectionVars) -> Result<Var> {
    let (gamma, beta) = project(g, cond, p)?;
    g.modulate(x, gamma, beta)
}

pub struct ResidualBlockVars<'p, T> {
    pub conv1: (Var, Var),
    pub bn1: BatchNormVars<'p, T>,
    pub conv2: (Var, Var),
    pub bn2: BatchNormVars<'p, T>,
}

/// `relu(x + bn(conv(relu(bn(conv(x))))))`. Returns the batch statistics of
/// both norms in training mode.
pub fn residual_block<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    block: &ResidualBlockVars<'_, T>,
    mode: Mode,
) -> Result<(Var, [Option<BatchStats<T>>; 2])> {
    let h = g.conv2d(x, block.conv1.0, block.conv1.1)?;
    let (h, s1) = batchnorm(g, h, &block.bn1, mode)?;
    let h = g.relu(h);
    let h = g.conv2d(h, block.conv2.0, block.conv2.1)?;
    let (h, s2) = batchnorm(g, h, &block.bn2, mode)?;
    let y = g.add(x, h)?;
    Ok((g.relu(y), [s1, s2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape.to_vec(), |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn zero_convs_with_identity_norm_reduce_to_relu() {
        let x = randn(&[2, 4, 4, 3], 1);
        let zk = Tensor::<f64>::zeros([3, 3, 3, 3]);
        let zb = Tensor::<f64>::zeros([3]);
        let (ones, zeros) = (vec![1.0; 3], vec![0.0; 3]);
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), false);
        let (k, b) = (g.constant(&zk), g.constant(&zb));
        let gamma = g.leaf(Tensor::ones([3]), false);
        let beta = g.leaf(Tensor::zeros([3]), false);
        let bn = |_: ()| BatchNormVars {
            gamma,
            beta,
            running_mean: &zeros,
            running_var: &ones,
        };
        let block = ResidualBlockVars {
            conv1: (k, b),
            bn1: bn(()),
            conv2: (k, b),
            bn2: bn(()),
        };
        let (y, stats) = residual_block(&mut g, xv, &block, Mode::Infer).unwrap();
        assert!(stats.iter().all(Option::is_none));
        let expect = x.map(|v| v.max(0.0));
        assert!(g.value(y).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn batchnorm_train_normalizes_and_reports_stats() {
        let x = Tensor::<f64>::new([4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (m, v) = (vec![0.0], vec![1.0]);
        let mut g = Graph::new();
        let xv = g.leaf(x, false);
        let bn = BatchNormVars {
            gamma: g.leaf(Tensor::ones([1]), false),
            beta: g.leaf(Tensor::zeros([1]), false),
            running_mean: &m,
            running_var: &v,
        };
        let (y, stats) = batchnorm(&mut g, xv, &bn, Mode::Train).unwrap();
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![2.5]);
        assert_eq!(stats.var, vec![1.25]);
        let inv = 1.0 / (1.25f64 + BN_EPS).sqrt();
        let expect = [-1.5 * inv, -0.5 * inv, 0.5 * inv, 1.5 * inv];
        for (a, e) in g.value(y).data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    fn projection(g: &mut Graph<'_, f64>, e: usize, c: usize, seed: u64) -> ProjectionVars {
        ProjectionVars {
            gamma_w: g.leaf(randn(&[e, c], seed), true),
            gamma_b: g.leaf(Tensor::ones([c]), true),
            beta_w: g.leaf(randn(&[e, c], seed + 1), true),
            beta_b: g.leaf(Tensor::zeros([c]), true),
        }
    }

    #[test]
    fn cin_output_statistics_follow_projection() {
        let x = randn(&[2, 3, 3, 2], 4).map(|v| 5.0 * v + 2.0);
        let mut g = Graph::new();
        let xv = g.leaf(x, false);
        let c = g.leaf(randn(&[2, 6], 8), false);
        let p = projection(&mut g, 6, 2, 10);
        let y = conditional_instance_norm(&mut g, xv, c, &p).unwrap();
        let gamma = g.dense(c, p.gamma_w, p.gamma_b).unwrap();
        let beta = g.dense(c, p.beta_w, p.beta_b).unwrap();
        let (yv, gv, bv) = (g.value(y).clone(), g.value(gamma).clone(), g.value(beta).clone());
        for b in 0..2 {
            for ch in 0..2 {
                let vals: Vec<f64> = (0..9).map(|s| yv.data()[(b * 9 + s) * 2 + ch]).collect();
                let mean = vals.iter().sum::<f64>() / 9.0;
                let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
                assert!((mean - bv.at(&[b, ch])).abs() < 1e-9);
                assert!((sd - gv.at(&[b, ch]).abs()).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn conditioning_reaches_the_embedding() {
        for use_cin in [true, false] {
            let mut g = Graph::new();
            let xv = g.leaf(randn(&[1, 2, 2, 3], 2), true);
            let c = g.leaf(randn(&[1, 4], 3), true);
            let p = projection(&mut g, 4, 3, 5);
            let y = if use_cin {
                conditional_instance_norm(&mut g, xv, c, &p).unwrap()
            } else {
                film(&mut g, xv, c, &p).unwrap()
            };
            let w = g.leaf(randn(&[1, 2, 2, 3], 9), false);
            let prod = g.mul(y, w).unwrap();
            let loss = g.sum(prod);
            g.backward(loss).unwrap();
            let grad = g.grad(c).unwrap();
            assert!(grad.data().iter().any(|v| v.abs() > 1e-6));
        }
    }
}
