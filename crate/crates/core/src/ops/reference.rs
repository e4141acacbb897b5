//! Direct-summation convolutions. Slow, but obviously correct; the im2col
//! kernels in [`super::conv`] are tested against these.

use crate::error::{Error, Result};
use crate::ops::ConvParams;
use crate::tensor::{Scalar, Shape, Tensor};

pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = p.weight.shape();
    if xs.c != ws.c {
        return Err(Error::dim("reference::conv2d", "channel mismatch"));
    }
    let (s, pad) = (p.stride as isize, p.padding as isize);
    let oh = (xs.h as isize + 2 * pad - ws.h as isize) / s + 1;
    let ow = (xs.w as isize + 2 * pad - ws.w as isize) / s + 1;
    if oh <= 0 || ow <= 0 {
        return Err(Error::dim("reference::conv2d", "non-positive output"));
    }
    let out = Shape::new(xs.n, ws.n, oh as usize, ow as usize);
    Ok(Tensor::from_fn(out, |n, o, y, xq| {
        let mut acc = p.bias.data()[o];
        for c in 0..xs.c {
            for ki in 0..ws.h {
                for kj in 0..ws.w {
                    let iy = y as isize * s + ki as isize - pad;
                    let ix = xq as isize * s + kj as isize - pad;
                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                        acc += x.at(n, c, iy as usize, ix as usize) * p.weight.at(o, c, ki, kj);
                    }
                }
            }
        }
        acc
    }))
}

/// Scatter-add formulation: every input pixel stamps a scaled kernel copy.
pub fn conv_transpose2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = p.weight.shape();
    if xs.c != ws.n {
        return Err(Error::dim("reference::conv_transpose2d", "channel mismatch"));
    }
    let (s, pad) = (p.stride as isize, p.padding as isize);
    let oh = (xs.h as isize - 1) * s - 2 * pad + ws.h as isize;
    let ow = (xs.w as isize - 1) * s - 2 * pad + ws.w as isize;
    if oh <= 0 || ow <= 0 {
        return Err(Error::dim("reference::conv_transpose2d", "non-positive output"));
    }
    let out_shape = Shape::new(xs.n, ws.c, oh as usize, ow as usize);
    let mut out = Tensor::from_fn(out_shape, |_, o, _, _| p.bias.data()[o]);
    for n in 0..xs.n {
        for c in 0..xs.c {
            for y in 0..xs.h {
                for xq in 0..xs.w {
                    let v = x.at(n, c, y, xq);
                    for o in 0..ws.c {
                        for ki in 0..ws.h {
                            for kj in 0..ws.w {
                                let oy = y as isize * s + ki as isize - pad;
                                let ox = xq as isize * s + kj as isize - pad;
                                if oy >= 0 && ox >= 0 && oy < oh && ox < ow {
                                    let i = out.index(n, o, oy as usize, ox as usize);
                                    out.data_mut()[i] += v * p.weight.at(c, o, ki, kj);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
