//! Forward and backward passes for the layer kinds the network is built from.
//!
//! Layers are plain parameter holders. Forward passes are pure functions of
//! the layer and its input (train-mode batch norm additionally updates its
//! running statistics), and backward passes take whatever the forward pass
//! cached and return fresh gradient buffers instead of accumulating into the
//! layer. All tensors use `(n, c, h, w)` layout.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor};

/// Square-kernel 2-D convolution with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out_channels, in_channels, kernel, kernel)`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialised convolution.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "conv needs positive channels/kernel/stride, got in={in_channels} out={out_channels} k={kernel} s={stride}"
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        })
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * (self.in_channels * self.kernel * self.kernel + 1)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        let bad = || {
            Error::shape(
                "conv_forward",
                format!(
                    "(n, {}, h, w) with h + 2*{} >= {}",
                    self.in_channels, self.padding, self.kernel
                ),
                input,
            )
        };
        if input.c != self.in_channels {
            return Err(bad());
        }
        let span = |x: usize| {
            (x + 2 * self.padding)
                .checked_sub(self.kernel)
                .map(|d| d / self.stride + 1)
        };
        let (oh, ow) = span(input.h).zip(span(input.w)).ok_or_else(bad)?;
        Ok(Shape4::new(input.n, self.out_channels, oh, ow))
    }

    /// Unfolds one sample into a `(patch_len, oh*ow)` column matrix.
    fn im2col(&self, sample: &[T], in_shape: Shape4, out_shape: Shape4, cols: &mut [T]) {
        let k = self.kernel;
        let p = out_shape.plane_len();
        let pad = self.padding as isize;
        for ci in 0..self.in_channels {
            let plane = &sample[ci * in_shape.plane_len()..(ci + 1) * in_shape.plane_len()];
            for u in 0..k {
                for v in 0..k {
                    let row = &mut cols[((ci * k + u) * k + v) * p..][..p];
                    for oi in 0..out_shape.h {
                        let ih = (oi * self.stride + u) as isize - pad;
                        let dst = &mut row[oi * out_shape.w..(oi + 1) * out_shape.w];
                        if ih < 0 || ih >= in_shape.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[ih as usize * in_shape.w..][..in_shape.w];
                        for (oj, d) in dst.iter_mut().enumerate() {
                            let iw = (oj * self.stride + v) as isize - pad;
                            *d = if iw < 0 || iw >= in_shape.w as isize {
                                T::zero()
                            } else {
                                src[iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Conv2d::im2col`]: scatters column gradients back onto a sample.
    fn col2im(&self, cols: &[T], in_shape: Shape4, out_shape: Shape4, sample: &mut [T]) {
        let k = self.kernel;
        let p = out_shape.plane_len();
        let pad = self.padding as isize;
        for ci in 0..self.in_channels {
            let plane =
                &mut sample[ci * in_shape.plane_len()..(ci + 1) * in_shape.plane_len()];
            for u in 0..k {
                for v in 0..k {
                    let row = &cols[((ci * k + u) * k + v) * p..][..p];
                    for oi in 0..out_shape.h {
                        let ih = (oi * self.stride + u) as isize - pad;
                        if ih < 0 || ih >= in_shape.h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * in_shape.w..][..in_shape.w];
                        let src = &row[oi * out_shape.w..(oi + 1) * out_shape.w];
                        for (oj, &g) in src.iter().enumerate() {
                            let iw = (oj * self.stride + v) as isize - pad;
                            if iw >= 0 && iw < in_shape.w as isize {
                                dst[iw as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let in_shape = x.shape();
        let out_shape = self.output_shape(in_shape)?;
        let p = out_shape.plane_len();
        let kk = self.patch_len();
        let mut out = Tensor::zeros(out_shape);
        if out_shape.numel() == 0 {
            return Ok(out);
        }
        out.data_mut()
            .par_chunks_mut(out_shape.sample_len())
            .enumerate()
            .for_each(|(n, dst)| {
                let mut cols = vec![T::zero(); kk * p];
                self.im2col(x.sample(n), in_shape, out_shape, &mut cols);
                for (o, row) in dst.chunks_mut(p).enumerate() {
                    row.fill(self.bias[o]);
                }
                T::gemm(
                    self.out_channels,
                    kk,
                    p,
                    T::one(),
                    &self.weight,
                    (kk as isize, 1),
                    &cols,
                    (p as isize, 1),
                    T::one(),
                    dst,
                    (p as isize, 1),
                );
            });
        Ok(out)
    }

    /// Gradients of `sum(grad_out * forward(x))` with respect to input, weights and bias.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let in_shape = x.shape();
        let out_shape = self.output_shape(in_shape)?;
        if grad_out.shape() != out_shape {
            return Err(Error::shape(
                "conv_backward",
                out_shape.to_string(),
                grad_out.shape(),
            ));
        }
        let p = out_shape.plane_len();
        let kk = self.patch_len();
        let mut grad_input = Tensor::zeros(in_shape);
        let mut grad_weight = vec![T::zero(); self.weight.len()];
        let mut grad_bias = vec![T::zero(); self.out_channels];
        if in_shape.numel() == 0 {
            return Ok(ConvGrads {
                input: grad_input,
                weight: grad_weight,
                bias: grad_bias,
            });
        }

        // Per-sample weight gradients, reduced afterwards in batch order.
        let partials: Vec<Vec<T>> = grad_input
            .data_mut()
            .par_chunks_mut(in_shape.sample_len())
            .enumerate()
            .map(|(n, gx)| {
                let g = grad_out.sample(n);
                let mut cols = vec![T::zero(); kk * p];
                self.im2col(x.sample(n), in_shape, out_shape, &mut cols);
                let mut gw = vec![T::zero(); self.weight.len()];
                // gw (O x kk) = g (O x P) @ cols^T (P x kk)
                T::gemm(
                    self.out_channels,
                    p,
                    kk,
                    T::one(),
                    g,
                    (p as isize, 1),
                    &cols,
                    (1, p as isize),
                    T::zero(),
                    &mut gw,
                    (kk as isize, 1),
                );
                // gcols (kk x P) = W^T (kk x O) @ g (O x P)
                T::gemm(
                    kk,
                    self.out_channels,
                    p,
                    T::one(),
                    &self.weight,
                    (1, kk as isize),
                    g,
                    (p as isize, 1),
                    T::zero(),
                    &mut cols,
                    (p as isize, 1),
                );
                self.col2im(&cols, in_shape, out_shape, gx);
                gw
            })
            .collect();

        for gw in &partials {
            for (acc, &v) in grad_weight.iter_mut().zip(gw) {
                *acc += v;
            }
        }
        for n in 0..out_shape.n {
            for (o, gb) in grad_bias.iter_mut().enumerate() {
                let start = out_shape.index(n, o, 0, 0);
                *gb += grad_out.data()[start..start + p].iter().copied().sum::<T>();
            }
        }
        Ok(ConvGrads {
            input: grad_input,
            weight: grad_weight,
            bias: grad_bias,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            weight: cast_vec(&self.weight),
            bias: cast_vec(&self.bias),
        }
    }
}

pub(crate) fn cast_vec<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::from_f64(x.as_f64())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalise with batch statistics and update the running estimates.
    Train,
    /// Normalise with the running estimates; no state change.
    Eval,
}

/// Per-channel batch normalisation over the `(n, h, w)` axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T = f32> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

/// What train-mode batch norm needs to run its backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

impl<T: Scalar> BatchNorm2d<T> {
    /// Identity affine (`gamma = 1`, `beta = 0`) with running mean 0 and variance 1.
    pub fn new(channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("batch norm needs at least one channel".into()));
        }
        Ok(Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::from_f64(BATCHNORM_EPS),
            momentum: T::from_f64(BATCHNORM_MOMENTUM),
        })
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn state_count(&self) -> usize {
        2 * self.channels
    }

    fn check(&self, x: &Tensor<T>, op: &'static str) -> Result<()> {
        if x.shape().c != self.channels {
            return Err(Error::shape(
                op,
                format!("(n, {}, h, w)", self.channels),
                x.shape(),
            ));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: BatchNormMode) -> Result<Tensor<T>> {
        match mode {
            BatchNormMode::Train => self.forward_train(x).map(|(y, _)| y),
            BatchNormMode::Eval => self.forward_eval(x),
        }
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x, "batchnorm_forward")?;
        let s = x.shape();
        let mut out = x.clone();
        let plane = s.plane_len();
        for (i, chunk) in out.data_mut().chunks_mut(plane.max(1)).enumerate() {
            if plane == 0 {
                break;
            }
            let c = i % s.c;
            let scale = self.gamma[c] / (self.running_var[c] + self.eps).sqrt();
            let shift = self.beta[c] - scale * self.running_mean[c];
            for v in chunk {
                *v = scale * *v + shift;
            }
        }
        Ok(out)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        self.check(x, "batchnorm_forward")?;
        let s = x.shape();
        let count = s.n * s.plane_len();
        if count < 2 {
            return Err(Error::DegenerateBatch {
                op: "batchnorm_forward",
                count,
            });
        }
        let plane = s.plane_len();
        let m = T::from_f64(count as f64);
        let mut mean = vec![T::zero(); s.c];
        let mut var = vec![T::zero(); s.c];
        for n in 0..s.n {
            for c in 0..s.c {
                let start = s.index(n, c, 0, 0);
                mean[c] += x.data()[start..start + plane].iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for n in 0..s.n {
            for c in 0..s.c {
                let start = s.index(n, c, 0, 0);
                var[c] += x.data()[start..start + plane]
                    .iter()
                    .map(|&v| (v - mean[c]) * (v - mean[c]))
                    .sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let mut normalized = x.clone();
        let mut out = x.clone();
        for n in 0..s.n {
            for c in 0..s.c {
                let start = s.index(n, c, 0, 0);
                let xs = &mut normalized.data_mut()[start..start + plane];
                for v in xs.iter_mut() {
                    *v = (*v - mean[c]) * inv_std[c];
                }
                let ys = &mut out.data_mut()[start..start + plane];
                for (y, &xh) in ys.iter_mut().zip(&normalized.data()[start..start + plane]) {
                    *y = self.gamma[c] * xh + self.beta[c];
                }
            }
        }

        let keep = T::one() - self.momentum;
        for c in 0..s.c {
            self.running_mean[c] = keep * self.running_mean[c] + self.momentum * mean[c];
            self.running_var[c] = keep * self.running_var[c] + self.momentum * var[c];
        }
        Ok((out, BatchNormCache { normalized, inv_std }))
    }

    /// Train-mode backward through the batch statistics.
    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<BatchNormGrads<T>> {
        let s = cache.normalized.shape();
        if grad_out.shape() != s {
            return Err(Error::shape(
                "batchnorm_backward",
                s.to_string(),
                grad_out.shape(),
            ));
        }
        let plane = s.plane_len();
        let m = T::from_f64((s.n * plane) as f64);
        let mut grad_gamma = vec![T::zero(); s.c];
        let mut grad_beta = vec![T::zero(); s.c];
        for n in 0..s.n {
            for c in 0..s.c {
                let start = s.index(n, c, 0, 0);
                let g = &grad_out.data()[start..start + plane];
                let xh = &cache.normalized.data()[start..start + plane];
                for (&gv, &xv) in g.iter().zip(xh) {
                    grad_beta[c] += gv;
                    grad_gamma[c] += gv * xv;
                }
            }
        }
        // dx = gamma * inv_std / m * (m*dy - sum(dy) - xhat * sum(dy*xhat))
        let mut grad_input = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let start = s.index(n, c, 0, 0);
                let k = self.gamma[c] * cache.inv_std[c] / m;
                let g = &grad_out.data()[start..start + plane];
                let xh = &cache.normalized.data()[start..start + plane];
                let dst = &mut grad_input.data_mut()[start..start + plane];
                for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(xh) {
                    *d = k * (m * gv - grad_beta[c] - xv * grad_gamma[c]);
                }
            }
        }
        Ok(BatchNormGrads {
            input: grad_input,
            gamma: grad_gamma,
            beta: grad_beta,
        })
    }

    /// Eval-mode backward: the running statistics are constants.
    pub fn backward_eval(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<BatchNormGrads<T>> {
        self.check(x, "batchnorm_backward")?;
        if grad_out.shape() != x.shape() {
            return Err(Error::shape(
                "batchnorm_backward",
                x.shape().to_string(),
                grad_out.shape(),
            ));
        }
        let s = x.shape();
        let plane = s.plane_len();
        let mut grad_input = grad_out.clone();
        let mut grad_gamma = vec![T::zero(); s.c];
        let mut grad_beta = vec![T::zero(); s.c];
        for n in 0..s.n {
            for c in 0..s.c {
                let start = s.index(n, c, 0, 0);
                let inv_std = T::one() / (self.running_var[c] + self.eps).sqrt();
                let xs = &x.data()[start..start + plane];
                let gs = &mut grad_input.data_mut()[start..start + plane];
                for (g, &xv) in gs.iter_mut().zip(xs) {
                    grad_beta[c] += *g;
                    grad_gamma[c] += *g * (xv - self.running_mean[c]) * inv_std;
                    *g *= self.gamma[c] * inv_std;
                }
            }
        }
        Ok(BatchNormGrads {
            input: grad_input,
            gamma: grad_gamma,
            beta: grad_beta,
        })
    }

    pub fn cast<U: Scalar>(&self) -> BatchNorm2d<U> {
        BatchNorm2d {
            channels: self.channels,
            gamma: cast_vec(&self.gamma),
            beta: cast_vec(&self.beta),
            running_mean: cast_vec(&self.running_mean),
            running_var: cast_vec(&self.running_var),
            eps: U::from_f64(self.eps.as_f64()),
            momentum: U::from_f64(self.momentum.as_f64()),
        }
    }
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
    out
}

/// Passes `grad_out` where `x > 0`; the subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            x.shape().to_string(),
            grad_out.shape(),
        ));
    }
    let mut out = grad_out.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if !(v > T::zero()) {
            *g = T::zero();
        }
    }
    Ok(out)
}

/// Unpadded max pooling. Ties resolve to the first element in row-major window order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
}

/// Flat input offsets of each output's winning element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolCache {
    pub input_shape: Shape4,
    pub argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "max pool needs positive kernel and stride, got k={kernel} s={stride}"
            )));
        }
        Ok(Self { kernel, stride })
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.h < self.kernel || input.w < self.kernel {
            return Err(Error::shape(
                "maxpool_forward",
                format!("spatial extent >= {}", self.kernel),
                input,
            ));
        }
        Ok(Shape4::new(
            input.n,
            input.c,
            (input.h - self.kernel) / self.stride + 1,
            (input.w - self.kernel) / self.stride + 1,
        ))
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
        let s = x.shape();
        let os = self.output_shape(s)?;
        let mut out = Tensor::zeros(os);
        let mut argmax = vec![0usize; os.numel()];
        let data = x.data();
        for n in 0..s.n {
            for c in 0..s.c {
                for i in 0..os.h {
                    for j in 0..os.w {
                        let mut best = s.index(n, c, i * self.stride, j * self.stride);
                        for u in 0..self.kernel {
                            for v in 0..self.kernel {
                                let idx = s.index(n, c, i * self.stride + u, j * self.stride + v);
                                if data[idx] > data[best] {
                                    best = idx;
                                }
                            }
                        }
                        let o = os.index(n, c, i, j);
                        argmax[o] = best;
                        out.data_mut()[o] = data[best];
                    }
                }
            }
        }
        Ok((
            out,
            PoolCache {
                input_shape: s,
                argmax,
            },
        ))
    }

    /// Routes each output gradient to its window's winning input position.
    pub fn backward<T: Scalar>(&self, cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let os = self.output_shape(cache.input_shape)?;
        if grad_out.shape() != os {
            return Err(Error::shape(
                "maxpool_backward",
                os.to_string(),
                grad_out.shape(),
            ));
        }
        let mut grad = Tensor::zeros(cache.input_shape);
        for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
            grad.data_mut()[idx] += g;
        }
        Ok(grad)
    }
}

/// Fully connected layer on `(n, in_features, 1, 1)` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T = f32> {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out_features, in_features)`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::Config(format!(
                "linear needs positive sizes, got {in_features} -> {out_features}"
            )));
        }
        Ok(Self {
            in_features,
            out_features,
            weight: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        })
    }

    pub fn param_count(&self) -> usize {
        self.out_features * (self.in_features + 1)
    }

    fn check(&self, x: &Tensor<T>, op: &'static str) -> Result<()> {
        let s = x.shape();
        if s.sample_len() != self.in_features || s.h != 1 || s.w != 1 {
            return Err(Error::shape(
                op,
                format!("(n, {}, 1, 1)", self.in_features),
                s,
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x, "linear_forward")?;
        let n = x.shape().n;
        let (fi, fo) = (self.in_features, self.out_features);
        let mut out = Tensor::zeros((n, fo, 1, 1));
        for row in out.data_mut().chunks_mut(fo) {
            row.copy_from_slice(&self.bias);
        }
        // out (n x fo) += x (n x fi) @ W^T (fi x fo)
        T::gemm(
            n,
            fi,
            fo,
            T::one(),
            x.data(),
            (fi as isize, 1),
            &self.weight,
            (1, fi as isize),
            T::one(),
            out.data_mut(),
            (fo as isize, 1),
        );
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LinearGrads<T>> {
        self.check(x, "linear_backward")?;
        let n = x.shape().n;
        let (fi, fo) = (self.in_features, self.out_features);
        let expected = Shape4::new(n, fo, 1, 1);
        if grad_out.shape() != expected {
            return Err(Error::shape(
                "linear_backward",
                expected.to_string(),
                grad_out.shape(),
            ));
        }
        let g = grad_out.data();
        let mut weight = vec![T::zero(); fi * fo];
        // gW (fo x fi) = g^T (fo x n) @ x (n x fi)
        T::gemm(
            fo,
            n,
            fi,
            T::one(),
            g,
            (1, fo as isize),
            x.data(),
            (fi as isize, 1),
            T::zero(),
            &mut weight,
            (fi as isize, 1),
        );
        let mut input = Tensor::zeros(x.shape());
        // gx (n x fi) = g (n x fo) @ W (fo x fi)
        T::gemm(
            n,
            fo,
            fi,
            T::one(),
            g,
            (fo as isize, 1),
            &self.weight,
            (fi as isize, 1),
            T::zero(),
            input.data_mut(),
            (fi as isize, 1),
        );
        let mut bias = vec![T::zero(); fo];
        for row in g.chunks(fo) {
            for (b, &v) in bias.iter_mut().zip(row) {
                *b += v;
            }
        }
        Ok(LinearGrads {
            input,
            weight,
            bias,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            in_features: self.in_features,
            out_features: self.out_features,
            weight: cast_vec(&self.weight),
            bias: cast_vec(&self.bias),
        }
    }
}
