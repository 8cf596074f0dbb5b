//! Whole-generator gradients against central differences, per parameter.

use fivedollar::model::{check_gradients, Conditioning, Generator, ModelConfig, Mode};
use fivedollar::Tensor;

fn main() -> fivedollar::Result<()> {
    let model = Generator::build(ModelConfig::new(3, 8, 3, 1, Conditioning::Film, 8), 0)?.cast::<f64>();
    let emb = Tensor::from_fn([2, 384], |i| ((i * 7919 % 101) as f64 - 50.0) / 500.0);
    let noise = Tensor::from_fn([2, 3], |i| i as f64 / 3.0 - 0.5);
    let mut target = Tensor::zeros([2, 8, 8, 16]);
    for (i, px) in target.data_mut().chunks_mut(16).enumerate() {
        px[i % 16] = 1.0;
    }
    for mode in [Mode::Train, Mode::Infer] {
        println!("{mode:?}");
        for r in check_gradients(&model, &emb, &noise, &target, mode, 8, 1e-4, 0)? {
            println!("  {:<28} {:>2} probes  max rel err {:.1e}", r.name, r.checked, r.max_relative_error);
        }
    }
    Ok(())
}
