use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::Tensor;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Direct sliding-window convolution with explicit zero padding.
fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, bias: &[f64]) -> Tensor<f64> {
    let [b, h, w, cin] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let ks = k.shape()[0];
    let cout = k.shape()[3];
    let pad = (ks / 2) as isize;
    let mut out = Tensor::zeros(vec![b, h, w, cout]);
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                for co in 0..cout {
                    let mut acc = bias[co];
                    for di in 0..ks {
                        for dj in 0..ks {
                            let (si, sj) = (i as isize + di as isize - pad, j as isize + dj as isize - pad);
                            if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += x.at(&[bi, si as usize, sj as usize, ci]) * k.at(&[di, dj, ci, co]);
                            }
                        }
                    }
                    let o = out.offset(&[bi, i, j, co]);
                    out.data_mut()[o] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn dense_identity_and_dot_product() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[1, 2], &[1.0, 2.0]), false);
    let w = g.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
    let b = g.leaf(t(&[2], &[0.0, 0.0]), false);
    let y = g.dense(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0]);

    let w = g.leaf(t(&[2, 1], &[3.0, 4.0]), false);
    let b = g.leaf(t(&[1], &[5.0]), false);
    let y = g.dense(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[16.0]);
}

#[test]
fn dense_input_gradient_is_weight_row_sums() {
    let w = random(&[3, 4], 1);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random(&[2, 3], 2), true);
    let wv = g.leaf(w.clone(), false);
    let b = g.leaf(Tensor::zeros(vec![4]), false);
    let y = g.dense(x, wv, b).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    let gx = g.grad(x).unwrap();
    for r in 0..2 {
        for i in 0..3 {
            let row_sum: f64 = (0..4).map(|j| w.at(&[i, j])).sum();
            assert!((gx.at(&[r, i]) - row_sum).abs() < 1e-12);
        }
    }
    let err = grad_check(
        |g, x| {
            let wv = g.leaf(w.clone(), false);
            let b = g.leaf(Tensor::zeros(vec![4]), false);
            let y = g.dense(x, wv, b)?;
            Ok(g.sum(y))
        },
        &random(&[2, 3], 2),
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn dense_shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::zeros(vec![1, 3]), false);
    let w = g.leaf(Tensor::zeros(vec![2, 2]), false);
    let b = g.leaf(Tensor::zeros(vec![2]), false);
    let err = g.dense(x, w, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn conv_identity_kernel_is_exact() {
    let x = random(&[2, 3, 3, 4], 3).cast::<f32>();
    let k = Tensor::<f32>::from_fn(vec![1, 1, 4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
    let mut g = Graph::<f32>::new();
    let xv = g.leaf(x.clone(), false);
    let kv = g.leaf(k, false);
    let b = g.leaf(Tensor::zeros(vec![4]), false);
    let y = g.conv2d(xv, kv, b).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv_all_ones_counts_window_overlap() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::ones(vec![1, 3, 3, 1]), false);
    let k = g.leaf(Tensor::ones(vec![3, 3, 1, 1]), false);
    let b = g.leaf(Tensor::zeros(vec![1]), false);
    let y = g.conv2d(x, k, b).unwrap();
    assert_eq!(g.value(y).data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
}

#[test]
fn conv_matches_sliding_window_oracle() {
    for (ks, seed) in [(1, 10), (3, 11), (5, 12), (7, 13)] {
        let x = random(&[2, 5, 4, 3], seed);
        let k = random(&[ks, ks, 3, 2], seed + 100);
        let bias = [0.25, -0.5];
        let mut g = Graph::<f64>::new();
        let xv = g.leaf(x.clone(), false);
        let kv = g.leaf(k.clone(), false);
        let b = g.leaf(t(&[2], &bias), false);
        let y = g.conv2d(xv, kv, b).unwrap();
        let expect = conv_oracle(&x, &k, &bias);
        assert!(g.value(y).max_abs_diff(&expect) < 1e-12, "kernel {ks}");
    }
}

#[test]
fn conv_kernel_gradient_matches_finite_differences() {
    let x = random(&[1, 4, 4, 2], 20);
    let err = grad_check(
        |g, k| {
            let xv = g.leaf(x.clone(), false);
            let b = g.leaf(Tensor::zeros(vec![3]), false);
            let y = g.conv2d(xv, k, b)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        },
        &random(&[3, 3, 2, 3], 21),
        1e-4,
    )
    .unwrap();
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn conv_rejects_even_kernel_and_channel_mismatch() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::zeros(vec![1, 4, 4, 2]), false);
    let even = g.leaf(Tensor::zeros(vec![4, 4, 2, 1]), false);
    let b = g.leaf(Tensor::zeros(vec![1]), false);
    assert!(matches!(g.conv2d(x, even, b), Err(crate::Error::Config { .. })));
    let wrong_c = g.leaf(Tensor::zeros(vec![3, 3, 5, 1]), false);
    assert!(matches!(g.conv2d(x, wrong_c, b), Err(crate::Error::Dimension { .. })));
}

#[test]
fn upsample_examples_and_backward() {
    let mut g = Graph::<f64>::new();
    let one = g.leaf(t(&[1, 1, 1, 1], &[7.0]), false);
    let y = g.upsample_nearest_2x(one).unwrap();
    assert_eq!(g.value(y).data(), &[7.0; 4]);

    let x = g.leaf(t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]), true);
    let y = g.upsample_nearest_2x(x).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 4, 1]);
    assert_eq!(
        g.value(y).data(),
        &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
    );
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[4.0; 4]);
}

#[test]
fn relu_values_and_mask() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[3], &[-1.0, 0.0, 2.0]), true);
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

    let pos = t(&[2, 2], &[0.5, 1.0, 2.0, 3.0]);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(pos.clone(), false);
    let y = g.relu(x);
    assert_eq!(g.value(y), &pos);
}

#[test]
fn softmax_uniform_stable_and_shift_invariant() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(vec![1, 2, 2, 16]), false);
    let y = g.softmax_channels(x);
    assert!(g.value(y).data().iter().all(|&p| (p - 1.0 / 16.0).abs() < 1e-15));

    let mut big = vec![0.0; 16];
    big[0] = 1000.0;
    let x = g.leaf(t(&[1, 1, 1, 16], &big), false);
    let y = g.softmax_channels(x);
    let p = g.value(y).data();
    assert!((p[0] - 1.0).abs() < 1e-12 && p[1..].iter().all(|&v| v < 1e-300 && v.is_finite()));

    let r = random(&[2, 2, 2, 16], 5);
    let shifted = r.map(|v| v + 37.5);
    let a = g.leaf(r, false);
    let b = g.leaf(shifted, false);
    let (pa, pb) = (g.softmax_channels(a), g.softmax_channels(b));
    assert!(g.value(pa).max_abs_diff(g.value(pb)) < 1e-6);
}

#[test]
fn concat_examples() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(t(&[1, 2], &[1.0, 2.0]), true);
    let b = g.leaf(t(&[1, 1], &[3.0]), true);
    let c = g.concat_last_axis(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);
    let s = g.sum(c);
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap().data(), &[1.0, 1.0]);
    assert_eq!(g.grad(b).unwrap().data(), &[1.0]);

    let mut g = Graph::<f64>::new();
    let a = g.leaf(t(&[1, 2], &[1.0, 2.0]), false);
    let empty = g.leaf(Tensor::new(vec![1, 0], vec![]).unwrap(), false);
    let c = g.concat_last_axis(a, empty).unwrap();
    assert_eq!(g.value(c), g.value(a));

    let wrong = g.leaf(Tensor::zeros(vec![2, 1]), false);
    assert!(g.concat_last_axis(a, wrong).is_err());
}

#[test]
fn backward_contracts() {
    let x0 = random(&[2, 3], 7);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(x0.clone(), true);
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    assert!(matches!(g.backward(s), Err(crate::Error::Usage(_))));

    let mut g = Graph::<f64>::new();
    let x = g.leaf(x0.clone(), true);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    let expect = x0.map(|v| 2.0 * v);
    assert!(g.grad(x).unwrap().max_abs_diff(&expect) < 1e-15);

    let mut g = Graph::<f64>::new();
    let x = g.leaf(x0, true);
    assert!(matches!(g.backward(x), Err(crate::Error::Usage(_))));
}

#[test]
fn grad_check_contracts() {
    let square_sum = |g: &mut Graph<f64>, x: Var| -> crate::Result<Var> {
        let sq = g.mul(x, x)?;
        Ok(g.sum(sq))
    };
    assert!(grad_check(square_sum, &random(&[3, 4], 8), 1e-3).unwrap() <= 1e-6);
    assert!(matches!(
        grad_check(square_sum, &random(&[2], 8), 0.0),
        Err(crate::Error::Usage(_))
    ));
}

#[test]
fn grad_check_through_conv_batchnorm_softmax_cce() {
    let kernel = random(&[3, 3, 2, 16], 30);
    let gamma = random(&[16], 31).map(|v| 1.0 + 0.5 * v);
    let beta = random(&[16], 32);
    let mean = random(&[16], 33).map(|v| 0.1 * v);
    let var = random(&[16], 34).map(|v| 1.0 + 0.5 * v.abs());
    let mut target = Tensor::<f64>::zeros(vec![2, 3, 3, 16]);
    for p in 0..18 {
        target.data_mut()[p * 16 + (p * 7) % 16] = 1.0;
    }
    let err = grad_check(
        |g, x| {
            let k = g.leaf(kernel.clone(), false);
            let b = g.leaf(Tensor::zeros(vec![16]), false);
            let y = g.conv2d(x, k, b)?;
            let gm = g.leaf(gamma.clone(), false);
            let bt = g.leaf(beta.clone(), false);
            let y = g.batch_norm_infer(y, gm, bt, mean.data(), var.data(), 1e-3)?;
            let p = g.softmax_channels(y);
            g.cce_loss(p, &target)
        },
        &random(&[2, 3, 3, 2], 35),
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn cce_gradient_through_softmax_is_probs_minus_target() {
    let logits = random(&[2, 2, 2, 16], 40);
    let mut target = Tensor::<f64>::zeros(vec![2, 2, 2, 16]);
    for p in 0..8 {
        target.data_mut()[p * 16 + (3 * p) % 16] = 1.0;
    }
    let mut g = Graph::<f64>::new();
    let x = g.leaf(logits, true);
    let p = g.softmax_channels(x);
    let loss = g.cce_loss(p, &target).unwrap();
    g.backward(loss).unwrap();
    let probs = g.value(p).clone();
    let grad = g.grad(x).unwrap();
    for i in 0..grad.numel() {
        let expect = (probs.data()[i] - target.data()[i]) / 8.0;
        assert!((grad.data()[i] - expect).abs() < 1e-4);
    }
}

#[test]
fn cce_reference_values() {
    let mut target = Tensor::<f64>::zeros(vec![1, 2, 2, 16]);
    for p in 0..4 {
        target.data_mut()[p * 16 + p] = 1.0;
    }
    let mut g = Graph::<f64>::new();
    let exact = g.leaf(target.clone(), false);
    let l = g.cce_loss(exact, &target).unwrap();
    assert!(g.value(l).data()[0] <= 1e-6);
    let uniform = g.leaf(Tensor::full(vec![1, 2, 2, 16], 1.0 / 16.0), false);
    let l = g.cce_loss(uniform, &target).unwrap();
    assert!((g.value(l).data()[0] - 16f64.ln()).abs() < 1e-5);
    assert!((16f64.ln() - 2.7726).abs() < 1e-4);
}

#[test]
fn forward_ops_are_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(random(&[2, 4, 4, 3], 50).cast(), false);
        let k = g.leaf(random(&[3, 3, 3, 16], 51).cast(), false);
        let b = g.leaf(Tensor::zeros(vec![16]), false);
        let y = g.conv2d(x, k, b).unwrap();
        let y = g.upsample_nearest_2x(y).unwrap();
        let y = g.relu(y);
        let y = g.softmax_channels(y);
        g.value(y).clone()
    };
    assert_eq!(run(), run());
}

fn small_shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=4, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_op_matches_finite_differences(shape in small_shape(), seed in any::<u64>()) {
        let x = random(&shape, seed);
        let c = shape[3];
        let w2 = random(&[c, 3], seed ^ 1);
        let k = random(&[3, 3, c, 2], seed ^ 2);
        let weights = random(&shape, seed ^ 3);
        let gamma = random(&[c], seed ^ 4).map(|v| 1.0 + 0.5 * v);
        let beta = random(&[c], seed ^ 5);
        let modg = random(&[shape[0], c], seed ^ 6);
        let modb = random(&[shape[0], c], seed ^ 7);
        // A random weighting turns every op's output into a non-trivial scalar.
        let weigh = |g: &mut Graph<f64>, y: Var| -> crate::Result<Var> {
            let w = g.leaf(random(g.shape(y), seed ^ 99), false);
            let p = g.mul(y, w)?;
            Ok(g.sum(p))
        };
        type Check<'a> = Box<dyn Fn(&mut Graph<f64>, Var) -> crate::Result<Var> + 'a>;
        let checks: Vec<(&str, Check<'_>)> = vec![
            ("dense", Box::new(|g, x| {
                let rows = g.value(x).numel() / c;
                let x2 = g.reshape(x, &[rows, c])?;
                let w = g.leaf(w2.clone(), false);
                let b = g.leaf(Tensor::zeros(vec![3]), false);
                let y = g.dense(x2, w, b)?;
                weigh(g, y)
            })),
            ("conv2d", Box::new(|g, x| {
                let kv = g.leaf(k.clone(), false);
                let b = g.leaf(Tensor::zeros(vec![2]), false);
                let y = g.conv2d(x, kv, b)?;
                weigh(g, y)
            })),
            ("upsample", Box::new(|g, x| { let y = g.upsample_nearest_2x(x)?; weigh(g, y) })),
            ("softmax", Box::new(|g, x| { let y = g.softmax_channels(x); weigh(g, y) })),
            ("mul", Box::new(|g, x| {
                let w = g.leaf(weights.clone(), false);
                let y = g.mul(x, w)?;
                let y = g.mul(y, x)?;
                Ok(g.sum(y))
            })),
            ("modulate", Box::new(|g, x| {
                let gm = g.leaf(modg.clone(), false);
                let bt = g.leaf(modb.clone(), false);
                let y = g.modulate(x, gm, bt)?;
                weigh(g, y)
            })),
            ("batch_norm_train", Box::new(|g, x| {
                let gm = g.leaf(gamma.clone(), false);
                let bt = g.leaf(beta.clone(), false);
                let (y, _) = g.batch_norm_train(x, gm, bt, 1e-3)?;
                weigh(g, y)
            })),
        ];
        for (name, f) in &checks {
            if *name == "batch_norm_train" && x.numel() / c < 2 {
                continue;
            }
            let err = grad_check(f, &x, 1e-5).unwrap();
            prop_assert!(err <= 1e-3, "{} err {}", name, err);
        }
        if shape[1] * shape[2] >= 2 {
            let err = grad_check(|g, x| { let y = g.instance_norm(x, 1e-5)?; weigh(g, y) }, &x, 1e-5).unwrap();
            prop_assert!(err <= 1e-3, "instance_norm err {}", err);
        }
        // ReLU is checked away from its kink.
        let away = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let err = grad_check(|g, x| { let y = g.relu(x); weigh(g, y) }, &away, 1e-5).unwrap();
        prop_assert!(err <= 1e-3, "relu err {}", err);
    }

    #[test]
    fn softmax_rows_are_distributions(shape in small_shape(), seed in any::<u64>()) {
        let x = random(&shape, seed).map(|v| v * 20.0).cast::<f32>();
        let mut g = Graph::<f32>::new();
        let v = g.leaf(x, false);
        let y = g.softmax_channels(v);
        let c = shape[3];
        for row in g.value(y).data().chunks(c) {
            let s: f32 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}
