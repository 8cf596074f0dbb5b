use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Graph, Var};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the autodiff gradient of a scalar function against central
/// differences, in 64-bit. Returns the largest per-element relative error.
///
/// `f` receives a fresh graph and the input variable and must return a scalar
/// node.
pub fn grad_check<'a, F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'a, f64>, Var) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Usage(format!("grad_check eps must be positive, got {eps}")));
    }
    let mut graph = Graph::new();
    let input = graph.leaf(x.clone(), true);
    let out = f(&mut graph, input)?;
    graph.backward(out)?;
    let analytic = graph
        .grad(input)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.leaf(probe, false);
        let out = f(&mut g, v)?;
        Ok(g.value(out).data()[0])
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
