//! Reverse-mode autodiff on a tiny dense classifier, checked against
//! central differences.

use fivedollar::autodiff::{grad_check, Graph};
use fivedollar::Tensor;

fn main() -> fivedollar::Result<()> {
    let w = Tensor::<f64>::from_fn([4, 16], |i| ((i * 37 % 11) as f64 - 5.0) / 10.0);
    let b = Tensor::<f64>::from_fn([16], |i| i as f64 / 50.0);
    let mut target = Tensor::<f64>::zeros([2, 1, 1, 16]);
    target.data_mut()[3] = 1.0;
    target.data_mut()[16 + 9] = 1.0;

    // Softmax over the last axis of a [B,1,1,16] "image" is the generator's head.
    let model = |g: &mut Graph<'_, f64>, x| {
        let (w, b) = (g.leaf(w.clone(), false), g.leaf(b.clone(), false));
        let h = g.dense(x, w, b)?;
        let h = g.relu(h);
        let h = g.reshape(h, &[2, 1, 1, 16])?;
        let p = g.softmax_channels(h);
        g.cce_loss(p, &target)
    };

    let x = Tensor::<f64>::new([2, 4], vec![0.31, -0.17, 0.83, 0.12, -0.54, 0.41, 0.23, 0.88])?;
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let loss = model(&mut g, xv)?;
    g.backward(loss)?;
    println!("loss {:.6}", g.value(loss).data()[0]);
    println!("d loss / d x = {:?}", g.grad(xv).unwrap().data());
    println!("max relative error vs finite differences: {:.2e}", grad_check(model, &x, 1e-6)?);
    Ok(())
}
