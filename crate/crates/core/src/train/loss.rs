use crate::error::{Error, Result};
use crate::ops::sigmoid_scalar;
use crate::tensor::{Scalar, Tensor};

/// Additive smoothing in the Dice term.
pub const DICE_SMOOTH: f64 = 1.0;

/// Soft Dice loss plus mean binary cross-entropy, both over every element of
/// the batch. Returns the loss and its gradient with respect to `logits`.
///
/// `loss = 1 − (2 Σ p·g + ε) / (Σ p + Σ g + ε) + mean BCE`, `p = σ(logits)`,
/// with BCE evaluated in the logit-stable form
/// `max(z, 0) − z·g + ln(1 + e^{−|z|})`.
pub fn dice_bce_loss<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if logits.shape() != target.shape() {
        return Err(Error::dim(
            "dice_bce_loss",
            format!("logits {} vs target {}", logits.shape(), target.shape()),
        ));
    }
    if let Some(bad) = target.data().iter().find(|&&g| g != T::zero() && g != T::one()) {
        return Err(Error::invalid(
            "dice_bce_loss",
            format!("target must be binary, found {bad}"),
        ));
    }
    let count = logits.len() as f64;
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut gsum = 0.0;
    let mut bce = 0.0;
    let probs: Vec<f64> = logits.data().iter().map(|&z| sigmoid_scalar(z.as_f64())).collect();
    for ((&z, &g), &p) in logits.data().iter().zip(target.data()).zip(&probs) {
        let (z, g) = (z.as_f64(), g.as_f64());
        inter += p * g;
        psum += p;
        gsum += g;
        bce += z.max(0.0) - z * g + (-z.abs()).exp().ln_1p();
    }
    let denom = psum + gsum + DICE_SMOOTH;
    let numer = 2.0 * inter + DICE_SMOOTH;
    let loss = 1.0 - numer / denom + bce / count;

    let grad = logits
        .data()
        .iter()
        .zip(target.data())
        .zip(&probs)
        .map(|((_, &g), &p)| {
            let g = g.as_f64();
            let d_dice_dp = -(2.0 * g * denom - numer) / (denom * denom);
            let dz = d_dice_dp * p * (1.0 - p) + (p - g) / count;
            T::of(dz)
        })
        .collect();
    Ok((loss, Tensor::from_vec(logits.shape(), grad)?))
}
