use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Training,
    /// Running statistics; nothing is mutated.
    Inference,
}

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Per-channel affine parameters and running statistics. All four vectors are
/// stored as `(1, c, 1, 1)` tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    pub mode: Mode,
}

impl<T: Scalar> BatchNormState<T> {
    /// gamma 1, beta 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        let s = Shape::new(1, channels, 1, 1);
        BatchNormState {
            gamma: Tensor::ones(s),
            beta: Tensor::zeros(s),
            running_mean: Tensor::zeros(s),
            running_var: Tensor::ones(s),
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
            mode: Mode::Training,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape().c
    }

    pub fn zero_grad(&mut self) {
        self.gamma.zero_grad();
        self.beta.zero_grad();
    }
}

/// Values saved by the forward pass for [`batchnorm2d_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache<T = f32> {
    shape: Shape,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Normalizes per channel. In [`Mode::Training`] batch statistics are used
/// and the running statistics are updated with `momentum` (the running
/// variance uses the unbiased batch variance); in [`Mode::Inference`] the
/// running statistics are used and `s` is left untouched.
pub fn batchnorm2d<T: Scalar>(
    x: &Tensor<T>,
    s: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    check_channels(x, s)?;
    if s.mode == Mode::Inference {
        return normalize(x, s, running_stats(s));
    }
    let xs = x.shape();
    let count = xs.n * xs.plane();
    let cnt = T::of(count as f64);
    let m = T::of(s.momentum);
    let mut mean = vec![T::zero(); xs.c];
    let mut var = vec![T::zero(); xs.c];
    for c in 0..xs.c {
        let sum: T = (0..xs.n).map(|n| x.plane(n, c).iter().copied().sum::<T>()).sum();
        let mu = sum / cnt;
        let sq: T = (0..xs.n)
            .map(|n| x.plane(n, c).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>())
            .sum();
        mean[c] = mu;
        var[c] = sq / cnt;
        let unbiased = if count > 1 { sq / T::of((count - 1) as f64) } else { var[c] };
        let rm = &mut s.running_mean.data_mut()[c];
        *rm = (T::one() - m) * *rm + m * mu;
        let rv = &mut s.running_var.data_mut()[c];
        *rv = (T::one() - m) * *rv + m * unbiased;
    }
    normalize(x, s, (mean, var, Mode::Training))
}

/// Inference-mode normalization through a shared reference, regardless of `s.mode`.
pub fn batchnorm2d_inference<T: Scalar>(x: &Tensor<T>, s: &BatchNormState<T>) -> Result<Tensor<T>> {
    check_channels(x, s)?;
    Ok(normalize(x, s, running_stats(s))?.0)
}

fn check_channels<T: Scalar>(x: &Tensor<T>, s: &BatchNormState<T>) -> Result<()> {
    if x.shape().c != s.channels() {
        return Err(Error::dim(
            "batchnorm2d",
            format!("input channels {} != state channels {}", x.shape().c, s.channels()),
        ));
    }
    Ok(())
}

fn running_stats<T: Scalar>(s: &BatchNormState<T>) -> (Vec<T>, Vec<T>, Mode) {
    let var = s.running_var.data().iter().map(|&v| v.max(T::zero())).collect();
    (s.running_mean.data().to_vec(), var, Mode::Inference)
}

fn normalize<T: Scalar>(
    x: &Tensor<T>,
    s: &BatchNormState<T>,
    (mean, var, mode): (Vec<T>, Vec<T>, Mode),
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let xs = x.shape();
    let plane = xs.plane();
    let eps = T::of(s.eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xs.len()];
    let mut out = Tensor::zeros(xs);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let start = (n * xs.c + c) * plane;
            let (g, b) = (s.gamma.data()[c], s.beta.data()[c]);
            let src = x.plane(n, c);
            let dst = &mut out.data_mut()[start..start + plane];
            for ((d, h), &v) in dst.iter_mut().zip(&mut xhat[start..start + plane]).zip(src) {
                *h = (v - mean[c]) * inv_std[c];
                *d = g * *h + b;
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            shape: xs,
            xhat,
            inv_std,
            mode,
        },
    ))
}

/// Accumulates gamma/beta gradients into `s`; returns the input gradient.
pub fn batchnorm2d_backward<T: Scalar>(
    s: &mut BatchNormState<T>,
    cache: &BatchNormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let xs = cache.shape;
    if grad_out.shape() != xs {
        return Err(Error::dim(
            "batchnorm2d_backward",
            format!("grad_out {} != input {xs}", grad_out.shape()),
        ));
    }
    let plane = xs.plane();
    let cnt = T::of((xs.n * plane) as f64);
    let mut dgamma = vec![T::zero(); xs.c];
    let mut dbeta = vec![T::zero(); xs.c];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let start = (n * xs.c + c) * plane;
            let g = grad_out.plane(n, c);
            let h = &cache.xhat[start..start + plane];
            dbeta[c] += g.iter().copied().sum();
            dgamma[c] += g.iter().zip(h).map(|(&a, &b)| a * b).sum();
        }
    }
    let mut grad_x = Tensor::zeros(xs);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let start = (n * xs.c + c) * plane;
            let scale = s.gamma.data()[c] * cache.inv_std[c];
            let g = grad_out.plane(n, c);
            let h = &cache.xhat[start..start + plane];
            let dst = &mut grad_x.data_mut()[start..start + plane];
            match cache.mode {
                Mode::Training => {
                    let (mb, mg) = (dbeta[c] / cnt, dgamma[c] / cnt);
                    for ((d, &gv), &hv) in dst.iter_mut().zip(g).zip(h) {
                        *d = scale * (gv - mb - hv * mg);
                    }
                }
                Mode::Inference => {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d = scale * gv;
                    }
                }
            }
        }
    }
    s.gamma.accumulate_grad(&dgamma);
    s.beta.accumulate_grad(&dbeta);
    Ok(grad_x)
}
