use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{Graph, Var};

/// Clipping floor inside the log of the categorical cross-entropy.
pub const CCE_EPS: f64 = 1e-7;

pub(super) enum Op<T> {
    Leaf,
    Dense { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, b: Var, ksize: usize, cols: Option<Vec<T>> },
    Upsample2x { x: Var },
    Relu { x: Var },
    SoftmaxLast { x: Var },
    ConcatLast { a: Var, b: Var },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    SumAll { x: Var },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    BatchNormInfer { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    Modulate { x: Var, gamma: Var, beta: Var },
    Cce { probs: Var, target: Vec<T> },
}

impl<T> Op<T> {
    pub(super) fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Dense { x, w, b } | Op::Conv2d { x, k: w, b, .. } => vec![x, w, b],
            Op::Upsample2x { x }
            | Op::Relu { x }
            | Op::SoftmaxLast { x }
            | Op::Reshape { x }
            | Op::SumAll { x }
            | Op::InstanceNorm { x, .. } => vec![x],
            Op::ConcatLast { a, b } | Op::Add { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::BatchNormTrain { x, gamma, beta, .. }
            | Op::BatchNormInfer { x, gamma, beta, .. }
            | Op::Modulate { x, gamma, beta } => vec![x, gamma, beta],
            Op::Cce { probs, .. } => vec![probs],
        }
    }
}

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    let c = *shape.last().unwrap_or(&1);
    let rows = shape.iter().product::<usize>() / c.max(1);
    (rows, c)
}

fn rank4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[b, h, w, c] => Ok([b, h, w, c]),
        _ => Err(Error::dim(op, shape, &[0, 0, 0, 0])),
    }
}

/// Copies every `k x k` neighbourhood of a zero-padded channels-last batch into
/// one row, giving a `[b*h*w, k*k*c]` matrix.
fn im2col<T: Scalar>(x: &[T], [b, h, w, c]: [usize; 4], k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let row_len = k * k * c;
    let mut cols = vec![T::zero(); b * h * w * row_len];
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                let row = ((bi * h + i) * w + j) * row_len;
                let j0 = j as isize - pad;
                let lo = (-j0).max(0) as usize;
                let hi = ((w as isize - j0).min(k as isize)).max(0) as usize;
                if lo >= hi {
                    continue;
                }
                for di in 0..k {
                    let si = i as isize + di as isize - pad;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src = ((bi * h + si as usize) * w + (j0 + lo as isize) as usize) * c;
                    let dst = row + (di * k + lo) * c;
                    let len = (hi - lo) * c;
                    cols[dst..dst + len].copy_from_slice(&x[src..src + len]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds rows back into image positions.
fn col2im_add<T: Scalar>(cols: &[T], [b, h, w, c]: [usize; 4], k: usize, dx: &mut [T]) {
    let pad = (k / 2) as isize;
    let row_len = k * k * c;
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                let row = ((bi * h + i) * w + j) * row_len;
                let j0 = j as isize - pad;
                let lo = (-j0).max(0) as usize;
                let hi = ((w as isize - j0).min(k as isize)).max(0) as usize;
                if lo >= hi {
                    continue;
                }
                for di in 0..k {
                    let si = i as isize + di as isize - pad;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst = ((bi * h + si as usize) * w + (j0 + lo as isize) as usize) * c;
                    let src = row + (di * k + lo) * c;
                    let len = (hi - lo) * c;
                    for (d, &s) in dx[dst..dst + len].iter_mut().zip(&cols[src..src + len]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Normalizes each of `groups` contiguous-or-strided groups; returns
/// `(xhat, inv_std, mean, var)`. `index(g, e)` maps group/element to a flat
/// offset.
fn normalize_groups<T: Scalar>(
    x: &[T],
    groups: usize,
    per_group: usize,
    eps: T,
    index: impl Fn(usize, usize) -> usize,
) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
    let n = T::from_f64(per_group as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); groups];
    let mut means = vec![T::zero(); groups];
    let mut vars = vec![T::zero(); groups];
    for g in 0..groups {
        let mean = (0..per_group).map(|e| x[index(g, e)]).sum::<T>() / n;
        let var = (0..per_group)
            .map(|e| {
                let d = x[index(g, e)] - mean;
                d * d
            })
            .sum::<T>()
            / n;
        let s = T::one() / (var + eps).sqrt();
        for e in 0..per_group {
            let o = index(g, e);
            xhat[o] = (x[o] - mean) * s;
        }
        inv_std[g] = s;
        means[g] = mean;
        vars[g] = var;
    }
    (xhat, inv_std, means, vars)
}

impl<'a, T: Scalar> Graph<'a, T> {
    /// `x[B,Din] @ w[Din,Dout] + b[Dout]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::dim("dense", xs, ws));
        }
        if bs != [ws[1]] {
            return Err(Error::dim("dense bias", bs, &[ws[1]]));
        }
        let (rows, din, dout) = (xs[0], xs[1], ws[1]);
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(rows * dout);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        T::gemm(
            rows,
            din,
            dout,
            T::one(),
            self.value(x).data(),
            din as isize,
            1,
            self.value(w).data(),
            dout as isize,
            1,
            T::one(),
            &mut out,
        );
        let value = Tensor::new([rows, dout], out)?;
        Ok(self.push_op(value, Op::Dense { x, w, b }))
    }

    /// Stride-1 convolution with "same" zero padding. `kernel` is
    /// `[K, K, Cin, Cout]` with odd `K`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let xs = rank4("conv2d", self.shape(x))?;
        let ks = rank4("conv2d kernel", self.shape(kernel))?;
        let [kh, kw, cin, cout] = ks;
        if kh != kw || kh % 2 == 0 {
            return Err(Error::config(
                "kernel",
                format!("must be square with odd size, got {kh}x{kw}"),
            ));
        }
        if cin != xs[3] {
            return Err(Error::dim("conv2d", &xs, &ks));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::dim("conv2d bias", self.shape(bias), &[cout]));
        }
        let [b, h, w, _] = xs;
        let rows = b * h * w;
        let inner = kh * kh * cin;
        let owned_cols = (kh > 1).then(|| im2col(self.value(x).data(), xs, kh));
        let a = owned_cols.as_deref().unwrap_or(self.value(x).data());

        let bias_v = self.value(bias).data();
        let mut out = Vec::with_capacity(rows * cout);
        for _ in 0..rows {
            out.extend_from_slice(bias_v);
        }
        T::gemm(
            rows,
            inner,
            cout,
            T::one(),
            a,
            inner as isize,
            1,
            self.value(kernel).data(),
            cout as isize,
            1,
            T::one(),
            &mut out,
        );
        let cols = if self.requires_grad(kernel) { owned_cols } else { None };
        let value = Tensor::new([b, h, w, cout], out)?;
        Ok(self.push_op(
            value,
            Op::Conv2d {
                x,
                k: kernel,
                b: bias,
                ksize: kh,
                cols,
            },
        ))
    }

    /// Nearest-neighbour 2x spatial upsampling of a `[B,H,W,C]` tensor.
    pub fn upsample_nearest_2x(&mut self, x: Var) -> Result<Var> {
        let [b, h, w, c] = rank4("upsample_nearest_2x", self.shape(x))?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); b * 4 * h * w * c];
        for bi in 0..b {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    let s = ((bi * h + i / 2) * w + j / 2) * c;
                    let d = ((bi * 2 * h + i) * 2 * w + j) * c;
                    out[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
        let value = Tensor::new([b, 2 * h, 2 * w, c], out)?;
        Ok(self.push_op(value, Op::Upsample2x { x }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push_op(value, Op::Relu { x })
    }

    /// Softmax over the last axis with max-subtraction.
    pub fn softmax_channels(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let (rows, c) = split_last(src.shape());
        let mut out = src.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let value = Tensor::new(src.shape().to_vec(), out).expect("same shape");
        self.push_op(value, Op::SoftmaxLast { x })
    }

    /// Concatenates along the last axis; all leading extents must agree.
    pub fn concat_last_axis(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim("concat_last_axis", sa, sb));
        }
        let (da, db) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = sa[..sa.len() - 1].iter().product::<usize>();
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * (da + db));
        for r in 0..rows {
            out.extend_from_slice(&va[r * da..(r + 1) * da]);
            out.extend_from_slice(&vb[r * db..(r + 1) * db]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = da + db;
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, Op::ConcatLast { a, b }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push_op(value, Op::Reshape { x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b))?;
        Ok(self.push_op(value, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p * q)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_op(value, Op::Mul { a, b }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push_op(value, Op::SumAll { x })
    }

    /// Batch normalization with batch statistics over every axis but the
    /// last. Returns the observed statistics for running-average updates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let (rows, c) = split_last(self.shape(x));
        self.check_affine("batch_norm", gamma, beta, c)?;
        if rows < 2 {
            return Err(Error::Usage(format!(
                "training-mode batch norm needs at least 2 values per channel, got {rows}"
            )));
        }
        let (xhat, inv_std, mean, var) =
            normalize_groups(self.value(x).data(), c, rows, eps, |g, e| e * c + g);
        let value = self.affine_channels(&xhat, x, gamma, beta, c);
        let var_node = self.push_op(
            value,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((var_node, BatchStats { mean, var }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (_, c) = split_last(self.shape(x));
        self.check_affine("batch_norm", gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::dim("batch_norm running stats", &[running_mean.len()], &[c]));
        }
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xhat: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - running_mean[i % c]) * inv_std[i % c])
            .collect();
        let value = self.affine_channels(&xhat, x, gamma, beta, c);
        Ok(self.push_op(
            value,
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Per-sample, per-channel normalization over the spatial axes of a
    /// `[B,H,W,C]` tensor, without affine parameters.
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let [b, h, w, c] = rank4("instance_norm", self.shape(x))?;
        let hw = h * w;
        if hw < 2 {
            return Err(Error::Usage(format!(
                "instance norm needs at least 2 spatial positions, got {h}x{w}"
            )));
        }
        let (xhat, inv_std, _, _) = normalize_groups(self.value(x).data(), b * c, hw, eps, |g, e| {
            let (bi, ci) = (g / c, g % c);
            (bi * hw + e) * c + ci
        });
        let value = Tensor::new([b, h, w, c], xhat)?;
        Ok(self.push_op(value, Op::InstanceNorm { x, inv_std }))
    }

    /// Per-sample, per-channel affine modulation `gamma[b,c] * x + beta[b,c]`.
    pub fn modulate(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (b, c) = (xs[0], *xs.last().unwrap());
        for p in [gamma, beta] {
            if self.shape(p) != [b, c] {
                return Err(Error::dim("modulate", self.shape(p), &[b, c]));
            }
        }
        let per_sample = xs.iter().product::<usize>() / b;
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let bc = (i / per_sample) * c + i % c;
                g[bc] * v + be[bc]
            })
            .collect();
        let value = Tensor::new(xs, data)?;
        Ok(self.push_op(value, Op::Modulate { x, gamma, beta }))
    }

    /// Mean over all positions of `-sum_c target * ln(probs + 1e-7)`.
    pub fn cce_loss(&mut self, probs: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(probs) != target.shape() {
            return Err(Error::dim("cce_loss", self.shape(probs), target.shape()));
        }
        let (rows, _) = split_last(target.shape());
        let eps = T::from_f64(CCE_EPS);
        let total: T = self
            .value(probs)
            .data()
            .iter()
            .zip(target.data())
            .filter(|(_, &t)| t != T::zero())
            .map(|(&p, &t)| -t * (p + eps).ln())
            .sum();
        let value = Tensor::scalar(total / T::from_f64(rows as f64));
        Ok(self.push_op(
            value,
            Op::Cce {
                probs,
                target: target.data().to_vec(),
            },
        ))
    }

    fn check_affine(&self, op: &'static str, gamma: Var, beta: Var, c: usize) -> Result<()> {
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::dim(op, self.shape(p), &[c]));
            }
        }
        Ok(())
    }

    fn affine_channels(&self, xhat: &[T], x: Var, gamma: Var, beta: Var, c: usize) -> Tensor<T> {
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| g[i % c] * v + b[i % c])
            .collect();
        Tensor::new(self.shape(x).to_vec(), data).expect("same shape")
    }

    pub(super) fn backward_node(&mut self, idx: usize, gy: &[T]) {
        let Graph { nodes, grads, .. } = self;
        let nodes: &[_] = nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let shape = |v: Var| nodes[v.0].value.shape();
        macro_rules! buf {
            ($v:expr) => {
                Graph::grad_buf(grads, nodes, $v)
            };
        }

        match &nodes[idx].op {
            Op::Leaf => {}
            &Op::Dense { x, w, b } => {
                let (rows, din) = (shape(x)[0], shape(x)[1]);
                let dout = shape(w)[1];
                if let Some(dx) = buf!(x) {
                    T::gemm(rows, dout, din, T::one(), gy, dout as isize, 1, val(w), 1, dout as isize, T::one(), dx);
                }
                if let Some(dw) = buf!(w) {
                    T::gemm(din, rows, dout, T::one(), val(x), 1, din as isize, gy, dout as isize, 1, T::one(), dw);
                }
                if let Some(db) = buf!(b) {
                    for r in 0..rows {
                        for (d, &g) in db.iter_mut().zip(&gy[r * dout..(r + 1) * dout]) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Conv2d { x, k, b, ksize, cols } => {
                let (x, k, b, ksize) = (*x, *k, *b, *ksize);
                let xs = rank4("conv2d", shape(x)).expect("checked in forward");
                let cout = shape(k)[3];
                let rows = xs[0] * xs[1] * xs[2];
                let inner = ksize * ksize * xs[3];
                if let Some(dk) = buf!(k) {
                    let a = cols.as_deref().unwrap_or(val(x));
                    T::gemm(inner, rows, cout, T::one(), a, 1, inner as isize, gy, cout as isize, 1, T::one(), dk);
                }
                if let Some(db) = buf!(b) {
                    for r in 0..rows {
                        for (d, &g) in db.iter_mut().zip(&gy[r * cout..(r + 1) * cout]) {
                            *d += g;
                        }
                    }
                }
                if nodes[x.0].requires_grad {
                    if ksize == 1 {
                        let dx = buf!(x).unwrap();
                        T::gemm(rows, cout, inner, T::one(), gy, cout as isize, 1, val(k), 1, cout as isize, T::one(), dx);
                    } else {
                        let mut dcols = vec![T::zero(); rows * inner];
                        T::gemm(rows, cout, inner, T::one(), gy, cout as isize, 1, val(k), 1, cout as isize, T::zero(), &mut dcols);
                        col2im_add(&dcols, xs, ksize, buf!(x).unwrap());
                    }
                }
            }
            &Op::Upsample2x { x } => {
                if let Some(dx) = buf!(x) {
                    let [b, h, w, c] = rank4("upsample", shape(x)).expect("checked");
                    for bi in 0..b {
                        for i in 0..2 * h {
                            for j in 0..2 * w {
                                let s = ((bi * 2 * h + i) * 2 * w + j) * c;
                                let d = ((bi * h + i / 2) * w + j / 2) * c;
                                for ci in 0..c {
                                    dx[d + ci] += gy[s + ci];
                                }
                            }
                        }
                    }
                }
            }
            &Op::Relu { x } => {
                let xv = val(x);
                if let Some(dx) = buf!(x) {
                    for ((d, &g), &v) in dx.iter_mut().zip(gy).zip(xv) {
                        if v > T::zero() {
                            *d += g;
                        }
                    }
                }
            }
            &Op::SoftmaxLast { x } => {
                let y = nodes[idx].value.data();
                let (rows, c) = split_last(shape(x));
                if let Some(dx) = buf!(x) {
                    for r in 0..rows {
                        let s = r * c..(r + 1) * c;
                        let dot: T = gy[s.clone()].iter().zip(&y[s.clone()]).map(|(&g, &p)| g * p).sum();
                        for i in s {
                            dx[i] += y[i] * (gy[i] - dot);
                        }
                    }
                }
            }
            &Op::ConcatLast { a, b } => {
                let da = *shape(a).last().unwrap();
                let db = *shape(b).last().unwrap();
                let rows = nodes[a.0].value.numel() / da.max(1);
                let width = da + db;
                if let Some(ga) = buf!(a) {
                    for r in 0..rows {
                        for i in 0..da {
                            ga[r * da + i] += gy[r * width + i];
                        }
                    }
                }
                if let Some(gb) = buf!(b) {
                    for r in 0..rows {
                        for i in 0..db {
                            gb[r * db + i] += gy[r * width + da + i];
                        }
                    }
                }
            }
            &Op::Reshape { x } => {
                if let Some(dx) = buf!(x) {
                    for (d, &g) in dx.iter_mut().zip(gy) {
                        *d += g;
                    }
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(d) = buf!(v) {
                        for (d, &g) in d.iter_mut().zip(gy) {
                            *d += g;
                        }
                    }
                }
            }
            &Op::Mul { a, b } => {
                for (v, other) in [(a, b), (b, a)] {
                    let ov = val(other);
                    if let Some(d) = buf!(v) {
                        for ((d, &g), &o) in d.iter_mut().zip(gy).zip(ov) {
                            *d += g * o;
                        }
                    }
                }
            }
            &Op::SumAll { x } => {
                if let Some(dx) = buf!(x) {
                    for d in dx.iter_mut() {
                        *d += gy[0];
                    }
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let (rows, c) = split_last(shape(x));
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (i, (&g, &xh)) in gy.iter().zip(xhat).enumerate() {
                    sum_g[i % c] += g;
                    sum_gx[i % c] += g * xh;
                }
                let gam = val(gamma);
                if let Some(dx) = buf!(x) {
                    let m = T::from_f64(rows as f64);
                    for (i, d) in dx.iter_mut().enumerate() {
                        let ch = i % c;
                        *d += gam[ch] * inv_std[ch] / m
                            * (m * gy[i] - sum_g[ch] - xhat[i] * sum_gx[ch]);
                    }
                }
                if let Some(dg) = buf!(gamma) {
                    for (d, s) in dg.iter_mut().zip(&sum_gx) {
                        *d += *s;
                    }
                }
                if let Some(dbeta) = buf!(beta) {
                    for (d, s) in dbeta.iter_mut().zip(&sum_g) {
                        *d += *s;
                    }
                }
            }
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let (_, c) = split_last(shape(x));
                let gam = val(gamma);
                if let Some(dx) = buf!(x) {
                    for (i, d) in dx.iter_mut().enumerate() {
                        *d += gy[i] * gam[i % c] * inv_std[i % c];
                    }
                }
                if let Some(dg) = buf!(gamma) {
                    for (i, (&g, &xh)) in gy.iter().zip(xhat).enumerate() {
                        dg[i % c] += g * xh;
                    }
                }
                if let Some(dbeta) = buf!(beta) {
                    for (i, &g) in gy.iter().enumerate() {
                        dbeta[i % c] += g;
                    }
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let x = *x;
                let y = nodes[idx].value.data();
                let [b, h, w, c] = rank4("instance_norm", shape(x)).expect("checked");
                let hw = h * w;
                let m = T::from_f64(hw as f64);
                if let Some(dx) = buf!(x) {
                    for bi in 0..b {
                        for ci in 0..c {
                            let at = |e: usize| (bi * hw + e) * c + ci;
                            let sum_g: T = (0..hw).map(|e| gy[at(e)]).sum();
                            let sum_gx: T = (0..hw).map(|e| gy[at(e)] * y[at(e)]).sum();
                            let s = inv_std[bi * c + ci];
                            for e in 0..hw {
                                let o = at(e);
                                dx[o] += s / m * (m * gy[o] - sum_g - y[o] * sum_gx);
                            }
                        }
                    }
                }
            }
            &Op::Modulate { x, gamma, beta } => {
                let xs = shape(x);
                let (b, c) = (xs[0], *xs.last().unwrap());
                let per_sample = nodes[x.0].value.numel() / b;
                let bc = |i: usize| (i / per_sample) * c + i % c;
                let gam = val(gamma);
                let xv = val(x);
                if let Some(dx) = buf!(x) {
                    for (i, d) in dx.iter_mut().enumerate() {
                        *d += gy[i] * gam[bc(i)];
                    }
                }
                if let Some(dg) = buf!(gamma) {
                    for (i, &g) in gy.iter().enumerate() {
                        dg[bc(i)] += g * xv[i];
                    }
                }
                if let Some(dbeta) = buf!(beta) {
                    for (i, &g) in gy.iter().enumerate() {
                        dbeta[bc(i)] += g;
                    }
                }
            }
            Op::Cce { probs, target } => {
                let probs = *probs;
                let (rows, _) = split_last(shape(probs));
                let scale = gy[0] / T::from_f64(rows as f64);
                let eps = T::from_f64(CCE_EPS);
                let p = val(probs);
                if let Some(dp) = buf!(probs) {
                    for ((d, &t), &pv) in dp.iter_mut().zip(target).zip(p) {
                        if t != T::zero() {
                            *d -= scale * t / (pv + eps);
                        }
                    }
                }
            }
        }
    }
}
