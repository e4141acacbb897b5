use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter, plus the
/// step counter. Buffers are allocated on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, param: usize) -> Option<&[f64]> {
        self.m.get(param).map(Vec::as_slice)
    }

    pub fn second_moment(&self, param: usize) -> Option<&[f64]> {
        self.v.get(param).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update over `params`, reading each tensor's
/// gradient buffer (a missing buffer counts as zero):
///
/// `m ← β1 m + (1 − β1) g`, `v ← β2 v + (1 − β2) g²`,
/// `θ ← θ − lr · m̂ / (√v̂ + eps)`.
///
/// Gradients are validated before anything is written, so a non-finite
/// gradient leaves parameters and state untouched.
pub fn adam_step<T: Scalar>(
    params: &mut [(String, &mut Tensor<T>)],
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if !state.m.is_empty() && state.m.len() != params.len() {
        return Err(Error::dim(
            "adam_step",
            format!("state tracks {} parameters, got {}", state.m.len(), params.len()),
        ));
    }
    for (name, p) in params.iter() {
        if let Some(g) = p.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    }
    for (k, (name, p)) in params.iter().enumerate() {
        if state.m[k].len() != p.len() {
            return Err(Error::dim("adam_step", format!("moment buffer size changed for {name}")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (_, p)) in params.iter_mut().enumerate() {
        let grad: Vec<f64> = match p.grad() {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; p.len()],
        };
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, theta) in p.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *theta = T::of(theta.as_f64() - lr * m_hat / (v_hat.sqrt() + cfg.eps));
        }
    }
    Ok(())
}

/// Reduce-on-plateau: after `patience` consecutive epochs without improving
/// the best validation loss by more than `threshold`, multiply the learning
/// rate by `factor`, never going below `min_lr`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    threshold: f64,
    min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub const THRESHOLD: f64 = 1e-4;
    pub const MIN_LR: f64 = 1e-7;

    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            threshold: Self::THRESHOLD,
            min_lr: Self::MIN_LR,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's validation loss and returns the learning rate for
    /// the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience.max(1) {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::full(Shape::new(1, 1, 1, 1), v)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut theta = scalar(0.0);
        theta.accumulate_grad(&[1.0]);
        let mut state = AdamState::new();
        adam_step(&mut [("theta".to_string(), &mut theta)], &mut state, &AdamConfig::default(), 0.1).unwrap();
        // m_hat = v_hat = 1
        assert!((theta.data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut theta = scalar(0.75);
        let mut state = AdamState::new();
        for _ in 0..10 {
            theta.accumulate_grad(&[0.0]);
            adam_step(&mut [("t".to_string(), &mut theta)], &mut state, &AdamConfig::default(), 1e-3).unwrap();
        }
        assert_eq!(theta.data()[0], 0.75);
        assert_eq!(state.steps(), 10);
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut theta = scalar(1.0);
        theta.accumulate_grad(&[f64::NAN]);
        let mut state = AdamState::new();
        let err = adam_step(&mut [("enc0.conv1.weight".to_string(), &mut theta)], &mut state, &AdamConfig::default(), 0.1)
            .unwrap_err();
        assert!(err.to_string().contains("enc0.conv1.weight"));
        assert_eq!(theta.data()[0], 1.0);
        assert_eq!(state.steps(), 0);
    }

    #[test]
    fn decreasing_losses_keep_lr() {
        let mut s = PlateauScheduler::new(1e-3, 0.5, 2);
        for k in 0..20 {
            assert_eq!(s.step(1.0 - 0.01 * k as f64), 1e-3);
        }
    }

    #[test]
    fn plateau_halves_at_patience() {
        let mut s = PlateauScheduler::new(1e-4, 0.5, 5);
        let lrs: Vec<f64> = (0..11).map(|_| s.step(0.3)).collect();
        // epoch 1 sets the best, epochs 2..=6 are the five bad epochs
        assert!(lrs[..5].iter().all(|&lr| lr == 1e-4));
        assert_eq!(lrs[5], 1e-4 * 0.5);
        assert_eq!(lrs[10], 1e-4 * 0.25);
    }

    #[test]
    fn improvements_below_threshold_count_as_plateau() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 1);
        s.step(1.0);
        assert_eq!(s.step(1.0 - 5e-5), 0.5);
    }
}
