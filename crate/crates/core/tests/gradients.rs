use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fivedollar::model::{check_gradients, Conditioning, Generator, ModelConfig, Mode};
use fivedollar::Tensor;

/// Small config with every parameter nudged off its initial value, so the
/// zero-initialized conditioning projections carry signal too.
fn perturbed(cond: Conditioning, n: usize, seed: u64) -> Generator<f64> {
    let mut m = Generator::build(ModelConfig::new(3, 8, 3, 1, cond, n), seed).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in m.weights_mut().params_mut() {
        for v in p.value.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += 0.1 * z;
        }
        if p.name.ends_with("running_var") {
            for v in p.value.data_mut() {
                *v = v.abs() + 0.5;
            }
        }
    }
    m
}

fn batch(n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = Tensor::from_fn([2, 384], |_| rng.sample::<f64, _>(StandardNormal) * 0.1);
    let noise = Tensor::from_fn([2, 3], |_| rng.sample(StandardNormal));
    let mut target = Tensor::zeros([2, n, n, 16]);
    for px in target.data_mut().chunks_mut(16) {
        px[rng.gen_range(0..16)] = 1.0;
    }
    (emb, noise, target)
}

#[test]
fn generator_gradients_match_finite_differences() {
    for (n, cond) in [8, 10, 16].into_iter().flat_map(|n| [Conditioning::Standard, Conditioning::Cin, Conditioning::Film].map(|c| (n, c))) {
        for mode in [Mode::Train, Mode::Infer] {
            let m = perturbed(cond, n, 7);
            let (e, z, t) = batch(n, 3);
            // Conv biases feeding batch-statistics BN have an exactly zero
            // gradient, so their error is pure rounding, about 2e-16 / eps.
            let report = check_gradients(&m, &e, &z, &t, mode, 12, 1e-4, 1).unwrap();
            let expected_tensors = m.weights().params().iter().filter(|p| !p.name.contains("running")).count() + 1;
            assert_eq!(report.len(), expected_tensors);
            for r in &report {
                assert!(r.checked > 0 && r.kinks * 4 <= r.checked);
                assert!(r.max_relative_error <= 1e-3, "N={n} {cond} {mode:?} {}: {:e}", r.name, r.max_relative_error);
            }
        }
    }
}
