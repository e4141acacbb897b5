//! Finite-difference check of conv2d followed by sigmoid, then the same
//! composition with a deliberately wrong backward pass.
//!
//! cargo run --example gradient_check

use drseg::gradcheck::{grad_check, FnOp};
use drseg::ops::{conv2d, conv2d_backward, sigmoid, sigmoid_backward, ConvParams};
use drseg::{Result, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type T64 = Tensor<f64>;

fn value(i: &[T64]) -> Result<f64> {
    let p = ConvParams::with_zero_bias(i[1].clone(), 2, 1, 1)?;
    Ok(sigmoid(&conv2d(&i[0], &p)?).sum())
}

fn gradient(i: &[T64], scale: f64) -> Result<Vec<T64>> {
    let mut p = ConvParams::with_zero_bias(i[1].clone(), 2, 1, 1)?;
    let y = sigmoid(&conv2d(&i[0], &p)?);
    let gy = sigmoid_backward(&y, &Tensor::ones(y.shape()))?;
    let gx = conv2d_backward(&i[0], &mut p, &gy)?;
    let gw = Tensor::from_vec(p.weight.shape(), p.weight.grad().unwrap().to_vec())?;
    Ok(vec![gx.map(|v| v * scale), gw])
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::randn(Shape::new(1, 3, 6, 6), 1.0, &mut rng);
    let w = Tensor::randn(Shape::new(2, 3, 3, 3), 0.5, &mut rng);

    let good = FnOp::new("conv+sigmoid", value, |i: &[T64]| gradient(i, 1.0));
    println!("{}", grad_check(&good, &[x.clone(), w.clone()], 1e-4));

    let broken = FnOp::new("conv+sigmoid (x grad doubled)", value, |i: &[T64]| gradient(i, 2.0));
    println!("{}", grad_check(&broken, &[x, w], 1e-4));
}
