//! Central finite-difference verification of analytic gradients, run in `f64`.
//!
//! The error for each input tensor is `‖analytic − numeric‖₂ / ‖numeric‖₂`
//! (the denominator is floored at `1e-8` so that exactly-zero gradients
//! compare by absolute error). A backward pass that is off by a factor of two
//! therefore reports an error of 1.0.

use std::fmt;

use crate::error::Result;
use crate::tensor::Tensor;

/// Default central-difference step. Piecewise-linear networks need smaller
/// steps (see [`grad_check_with_step`]) so that no ReLU or max-pool decision
/// flips inside the stencil.
pub const STEP: f64 = 1e-5;
const NORM_FLOOR: f64 = 1e-8;

/// A scalar function of several tensors with a claimed analytic gradient.
pub trait Differentiable {
    fn name(&self) -> &str;
    fn value(&self, inputs: &[Tensor<f64>]) -> Result<f64>;
    /// One gradient tensor per input, same shapes.
    fn gradient(&self, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>;
}

/// [`Differentiable`] assembled from two closures.
pub struct FnOp<V, G> {
    name: String,
    value: V,
    gradient: G,
}

impl<V, G> FnOp<V, G>
where
    V: Fn(&[Tensor<f64>]) -> Result<f64>,
    G: Fn(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>,
{
    pub fn new(name: impl Into<String>, value: V, gradient: G) -> Self {
        FnOp {
            name: name.into(),
            value,
            gradient,
        }
    }
}

impl<V, G> Differentiable for FnOp<V, G>
where
    V: Fn(&[Tensor<f64>]) -> Result<f64>,
    G: Fn(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, inputs: &[Tensor<f64>]) -> Result<f64> {
        (self.value)(inputs)
    }

    fn gradient(&self, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
        (self.gradient)(inputs)
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub op: String,
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
    /// Set when the check could not run to completion (non-finite values, op errors).
    pub failure: Option<String>,
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "pass" } else { "FAIL" };
        write!(
            f,
            "{status} {}: max rel err {:.3e} (tol {:.0e})",
            self.op, self.max_rel_error, self.tol
        )?;
        if let Some(msg) = &self.failure {
            write!(f, " [{msg}]")?;
        }
        Ok(())
    }
}

impl GradReport {
    fn failed(op: &str, tol: f64, msg: String) -> Self {
        GradReport {
            op: op.to_string(),
            per_input: Vec::new(),
            max_rel_error: f64::INFINITY,
            tol,
            passed: false,
            failure: Some(msg),
        }
    }
}

pub fn grad_check(op: &dyn Differentiable, inputs: &[Tensor<f64>], tol: f64) -> GradReport {
    grad_check_with_step(op, inputs, tol, STEP)
}

pub fn grad_check_with_step(op: &dyn Differentiable, inputs: &[Tensor<f64>], tol: f64, step: f64) -> GradReport {
    let name = op.name().to_string();
    let analytic = match op.gradient(inputs) {
        Ok(g) => g,
        Err(e) => return GradReport::failed(&name, tol, format!("gradient failed: {e}")),
    };
    if analytic.len() != inputs.len() {
        return GradReport::failed(
            &name,
            tol,
            format!("{} gradients for {} inputs", analytic.len(), inputs.len()),
        );
    }
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    for (k, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[k].shape() {
            return GradReport::failed(&name, tol, format!("gradient {k} has wrong shape"));
        }
        if !grad.all_finite() {
            return GradReport::failed(&name, tol, format!("{name}: non-finite analytic gradient for input {k}"));
        }
        let mut diff_sq = 0.0;
        let mut num_sq = 0.0;
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = op.value(&work);
            work[k].data_mut()[i] = orig - step;
            let minus = op.value(&work);
            work[k].data_mut()[i] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => {
                    return GradReport::failed(&name, tol, format!("value failed: {e}"))
                }
            };
            if !plus.is_finite() || !minus.is_finite() {
                return GradReport::failed(&name, tol, format!("{name}: non-finite value while perturbing input {k}[{i}]"));
            }
            let numeric = (plus - minus) / (2.0 * step);
            diff_sq += (grad.data()[i] - numeric).powi(2);
            num_sq += numeric * numeric;
        }
        per_input.push(diff_sq.sqrt() / num_sq.sqrt().max(NORM_FLOOR));
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    GradReport {
        op: name,
        per_input,
        max_rel_error,
        tol,
        passed: max_rel_error <= tol,
        failure: None,
    }
}
