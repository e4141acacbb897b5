#![allow(dead_code)]

use std::path::Path;

use drseg::data::{mask_to_luma, save_png, tensor_to_rgb, SamplePair};
use drseg::gradcheck::{grad_check, FnOp, GradReport};
use drseg::ops::{
    batchnorm2d, batchnorm2d_backward, conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, maxpool2d,
    maxpool2d_backward, relu, relu_backward, sigmoid, sigmoid_backward, BatchNormState, ConvParams,
};
use drseg::train::dice_bce_loss;
use drseg::{Result, Shape, Tensor, UNetConfig, UNetModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type T64 = Tensor<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn shaped_like(t: &T64, data: Vec<f64>) -> T64 {
    Tensor::from_vec(t.shape(), data).unwrap()
}

/// `Σ r ⊙ y`, the scalar every layer check differentiates.
fn project(y: &T64, r: &T64) -> f64 {
    y.dot(r).unwrap()
}

/// Projection weights matching `shape`.
fn probe(shape: Shape, rng: &mut ChaCha8Rng) -> T64 {
    Tensor::randn(shape, 1.0, rng)
}

pub fn check_conv2d(seed: u64, tol: f64) -> GradReport {
    let mut g = rng(seed);
    let (stride, pad) = [(1, 1), (2, 0), (1, 0), (2, 1)][seed as usize % 4];
    let x = Tensor::randn(Shape::new(2, 3, 6, 5), 1.0, &mut g);
    let w = Tensor::randn(Shape::new(4, 3, 3, 3), 0.5, &mut g);
    let b = Tensor::randn(Shape::new(1, 4, 1, 1), 0.5, &mut g);
    let out = conv2d(&x, &ConvParams::new(w.clone(), b.clone(), stride, pad).unwrap()).unwrap();
    let r = probe(out.shape(), &mut g);
    let r2 = r.clone();
    let op = FnOp::new(
        "conv2d",
        move |i: &[T64]| Ok(project(&conv2d(&i[0], &ConvParams::new(i[1].clone(), i[2].clone(), stride, pad)?)?, &r)),
        move |i: &[T64]| {
            let mut p = ConvParams::new(i[1].clone(), i[2].clone(), stride, pad)?;
            let gx = conv2d_backward(&i[0], &mut p, &r2)?;
            Ok(vec![gx, shaped_like(&p.weight, p.weight.grad().unwrap().to_vec()), shaped_like(&p.bias, p.bias.grad().unwrap().to_vec())])
        },
    );
    grad_check(&op, &[x, w, b], tol)
}

pub fn check_conv_transpose2d(seed: u64, tol: f64) -> GradReport {
    let mut g = rng(seed);
    let (k, stride, pad) = [(2, 2, 0), (3, 1, 1), (3, 2, 1), (2, 1, 0)][seed as usize % 4];
    let x = Tensor::randn(Shape::new(2, 3, 3, 4), 1.0, &mut g);
    let w = Tensor::randn(Shape::new(3, 2, k, k), 0.5, &mut g);
    let b = Tensor::randn(Shape::new(1, 2, 1, 1), 0.5, &mut g);
    let out = conv_transpose2d(&x, &ConvParams::new(w.clone(), b.clone(), stride, pad).unwrap()).unwrap();
    let r = probe(out.shape(), &mut g);
    let r2 = r.clone();
    let op = FnOp::new(
        "conv_transpose2d",
        move |i: &[T64]| {
            Ok(project(&conv_transpose2d(&i[0], &ConvParams::new(i[1].clone(), i[2].clone(), stride, pad)?)?, &r))
        },
        move |i: &[T64]| {
            let mut p = ConvParams::new(i[1].clone(), i[2].clone(), stride, pad)?;
            let gx = conv_transpose2d_backward(&i[0], &mut p, &r2)?;
            Ok(vec![gx, shaped_like(&p.weight, p.weight.grad().unwrap().to_vec()), shaped_like(&p.bias, p.bias.grad().unwrap().to_vec())])
        },
    );
    grad_check(&op, &[x, w, b], tol)
}

fn bn_state(gamma: &T64, beta: &T64) -> BatchNormState<f64> {
    let mut s = BatchNormState::new(gamma.shape().c);
    s.gamma = gamma.clone();
    s.beta = beta.clone();
    s
}

pub fn check_batchnorm2d(seed: u64, tol: f64) -> GradReport {
    let mut g = rng(seed);
    let x = Tensor::randn(Shape::new(3, 2, 4, 4), 1.5, &mut g);
    let gamma = Tensor::uniform(Shape::new(1, 2, 1, 1), 0.5, 1.5, &mut g);
    let beta = Tensor::randn(Shape::new(1, 2, 1, 1), 0.5, &mut g);
    let r = probe(x.shape(), &mut g);
    let r2 = r.clone();
    let op = FnOp::new(
        "batchnorm2d",
        move |i: &[T64]| Ok(project(&batchnorm2d(&i[0], &mut bn_state(&i[1], &i[2]))?.0, &r)),
        move |i: &[T64]| {
            let mut s = bn_state(&i[1], &i[2]);
            let (_, cache) = batchnorm2d(&i[0], &mut s)?;
            let gx = batchnorm2d_backward(&mut s, &cache, &r2)?;
            Ok(vec![gx, shaped_like(&s.gamma, s.gamma.grad().unwrap().to_vec()), shaped_like(&s.beta, s.beta.grad().unwrap().to_vec())])
        },
    );
    grad_check(&op, &[x, gamma, beta], tol)
}

pub fn check_relu(seed: u64, tol: f64) -> GradReport {
    let mut g = rng(seed);
    // keep every input at least 0.05 away from the kink
    let x = Tensor::<f64>::uniform(Shape::new(2, 3, 4, 4), -1.0, 1.0, &mut g).map(|v| v + 0.05 * v.signum());
    let r = probe(x.shape(), &mut g);
    let r2 = r.clone();
    let op = FnOp::new(
        "relu",
        move |i: &[T64]| Ok(project(&relu(&i[0]), &r)),
        move |i: &[T64]| Ok(vec![relu_backward(&i[0], &r2)?]),
    );
    grad_check(&op, &[x], tol)
}

pub fn check_sigmoid(seed: u64, tol: f64) -> GradReport {
    let mut g = rng(seed);
    let x = Tensor::randn(Shape::new(2, 2, 4, 4), 2.0, &mut g);
    let r = probe(x.shape(), &mut g);
    let r2 = r.clone();
    let op = FnOp::new(
        "sigmoid",
        move |i: &[T64]| Ok(project(&sigmoid(&i[0]), &r)),
        move |i: &[T64]| Ok(vec![sigmoid_backward(&sigmoid(&i[0]), &r2)?]),
    );
    grad_check(&op, &[x], tol)
}

pub fn check_maxpool2d(seed: u64, tol: f64) -> GradReport {
    let mut g = rng(seed);
    let shape = Shape::new(2, 2, 4, 6);
    // distinct values 0.01 apart so no perturbation changes a window's argmax
    let mut ranks: Vec<usize> = (0..shape.len()).collect();
    ranks.shuffle(&mut g);
    let x = Tensor::from_vec(shape, ranks.iter().map(|&k| k as f64 * 0.01).collect()).unwrap();
    let r = probe(Shape::new(2, 2, 2, 3), &mut g);
    let r2 = r.clone();
    let op = FnOp::new(
        "maxpool2d",
        move |i: &[T64]| Ok(project(&maxpool2d(&i[0])?.0, &r)),
        move |i: &[T64]| {
            let (_, idx) = maxpool2d(&i[0])?;
            Ok(vec![maxpool2d_backward(&idx, &r2)?])
        },
    );
    grad_check(&op, &[x], tol)
}

pub fn check_dice_bce(seed: u64, tol: f64) -> GradReport {
    let mut g = rng(seed);
    let z = Tensor::randn(Shape::new(1, 1, 4, 4), 1.5, &mut g);
    let target = Tensor::<f64>::uniform(z.shape(), 0.0, 1.0, &mut g).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let t2 = target.clone();
    let op = FnOp::new(
        "dice_bce_loss",
        move |i: &[T64]| Ok(dice_bce_loss(&i[0], &target)?.0),
        move |i: &[T64]| Ok(vec![dice_bce_loss(&i[0], &t2)?.1]),
    );
    grad_check(&op, &[z], tol)
}

pub const COMPOSITE_PARAMS: usize = 100;

/// Loss of a small U-Net with `(tensor index, element)` slots overwritten
/// from `values`.
fn composite_loss(base: &UNetModel<f64>, slots: &[(usize, usize)], x: &T64, values: &T64, target: &T64) -> Result<(f64, UNetModel<f64>, T64)> {
    let mut m = base.clone();
    {
        let mut params = m.parameters_mut();
        for (&(t, e), &v) in slots.iter().zip(values.data()) {
            params[t].1.data_mut()[e] = v;
        }
    }
    let (logits, cache) = m.forward_train(x)?;
    let (loss, grad) = dice_bce_loss(&logits, target)?;
    let gx = m.backward(&cache, &grad)?;
    Ok((loss, m, gx))
}

/// A deep ReLU network has thousands of kinks; at this step a perturbation
/// almost never crosses one, while `f64` round-off stays near 1e-7 relative.
pub const COMPOSITE_STEP: f64 = 1e-7;

pub fn check_unet_composite(seed: u64, tol: f64) -> GradReport {
    check_unet_composite_step(seed, tol, COMPOSITE_STEP)
}

pub fn check_unet_composite_step(seed: u64, tol: f64, step: f64) -> GradReport {
    let mut g = rng(seed);
    let cfg = UNetConfig {
        in_channels: 2,
        out_channels: 1,
        base_width: 4,
        depth: 2,
    };
    let mut base: UNetModel<f64> = UNetModel::<f32>::new(cfg, seed).unwrap().cast();
    let x = Tensor::randn(Shape::new(1, 2, 16, 16), 1.0, &mut g);
    let target = Tensor::<f64>::uniform(Shape::new(1, 1, 16, 16), 0.0, 1.0, &mut g).map(|v| if v > 0.6 { 1.0 } else { 0.0 });
    let sizes: Vec<usize> = base.parameters_mut().iter().map(|(_, t)| t.len()).collect();
    let mut all: Vec<(usize, usize)> = sizes.iter().enumerate().flat_map(|(t, &n)| (0..n).map(move |e| (t, e))).collect();
    all.shuffle(&mut g);
    let slots: Vec<(usize, usize)> = all[..COMPOSITE_PARAMS].to_vec();
    let values = {
        let params = base.parameters_mut();
        Tensor::from_vec(Shape::new(1, 1, 1, COMPOSITE_PARAMS), slots.iter().map(|&(t, e)| params[t].1.data()[e]).collect()).unwrap()
    };
    base.zero_grad();
    let (b1, s1, t1) = (base.clone(), slots.clone(), target.clone());
    let op = FnOp::new(
        "unet_composite",
        move |i: &[T64]| Ok(composite_loss(&b1, &s1, &i[0], &i[1], &t1)?.0),
        move |i: &[T64]| {
            let (_, mut m, gx) = composite_loss(&base, &slots, &i[0], &i[1], &target)?;
            let params = m.parameters_mut();
            let gp: Vec<f64> = slots.iter().map(|&(t, e)| params[t].1.grad().map_or(0.0, |g| g[e])).collect();
            Ok(vec![gx, Tensor::from_vec(i[1].shape(), gp)?])
        },
    );
    drseg::gradcheck::grad_check_with_step(&op, &[x, values], tol, step)
}

pub type Check = fn(u64, f64) -> GradReport;

/// `(name, check, tolerance)` for every differentiable op.
pub const GRADIENT_SUITE: &[(&str, Check, f64)] = &[
    ("conv2d", check_conv2d, 1e-4),
    ("conv_transpose2d", check_conv_transpose2d, 1e-4),
    ("batchnorm2d", check_batchnorm2d, 1e-4),
    ("relu", check_relu, 1e-4),
    ("sigmoid", check_sigmoid, 1e-4),
    ("maxpool2d", check_maxpool2d, 1e-4),
    ("dice_bce_loss", check_dice_bce, 1e-4),
    ("unet_composite", check_unet_composite, 1e-3),
];

/// Per-pixel confusion counts `(tp, fp, fn, tn)` by direct enumeration.
pub fn brute_counts(pred: &[f32], gt: &[f32]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for i in 0..pred.len() {
        let p = pred[i] > 0.5;
        let t = gt[i] > 0.5;
        if p && t {
            c.0 += 1;
        } else if p {
            c.1 += 1;
        } else if t {
            c.2 += 1;
        } else {
            c.3 += 1;
        }
    }
    c
}

/// Kappa by explicit double sums over a 5×5 table built one sample at a time.
pub fn brute_kappa(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let mut num = 0.0;
    for (&p, &t) in pred.iter().zip(truth) {
        num += ((p as f64 - t as f64) / 4.0).powi(2);
    }
    let mut den = 0.0;
    for &t in truth {
        for &p in pred {
            den += ((p as f64 - t as f64) / 4.0).powi(2);
        }
    }
    den /= n;
    if den == 0.0 {
        1.0
    } else {
        1.0 - num / den
    }
}

pub fn random_mask(shape: Shape, p: f64, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_, _, _, _| if rng.gen_bool(p) { 1.0 } else { 0.0 })
}

/// Writes pairs as `<root>/images/<id>.png` and `<root>/masks/<id>.png`.
pub fn write_dataset(root: &Path, pairs: &[SamplePair]) {
    std::fs::create_dir_all(root.join("images")).unwrap();
    std::fs::create_dir_all(root.join("masks")).unwrap();
    for p in pairs {
        save_png(&tensor_to_rgb(&p.image), root.join("images").join(format!("{}.png", p.id))).unwrap();
        save_png(&mask_to_luma(&p.mask), root.join("masks").join(format!("{}.png", p.id))).unwrap();
    }
}
