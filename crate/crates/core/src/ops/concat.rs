use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Channel-axis concatenation, `a`'s channels first. No implicit cropping.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::dim(
            "concat_channels",
            format!("n/h/w must agree: {sa} vs {sb}"),
        ));
    }
    let out = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(out.len());
    for n in 0..sa.n {
        data.extend_from_slice(a.item(n));
        data.extend_from_slice(b.item(n));
    }
    Tensor::from_vec(out, data)
}

/// Splits a concatenated gradient back into the parts for `a` (first
/// `a_channels`) and `b`.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, a_channels: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = grad.shape();
    if a_channels == 0 || a_channels >= s.c {
        return Err(Error::dim(
            "split_channels",
            format!("cannot split {} channels at {a_channels}", s.c),
        ));
    }
    let cut = a_channels * s.plane();
    let mut da = Vec::with_capacity(s.n * cut);
    let mut db = Vec::with_capacity(s.len() - s.n * cut);
    for n in 0..s.n {
        let item = grad.item(n);
        da.extend_from_slice(&item[..cut]);
        db.extend_from_slice(&item[cut..]);
    }
    Ok((
        Tensor::from_vec(Shape::new(s.n, a_channels, s.h, s.w), da)?,
        Tensor::from_vec(Shape::new(s.n, s.c - a_channels, s.h, s.w), db)?,
    ))
}
