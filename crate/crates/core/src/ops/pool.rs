use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Flat input index of the selected element for every output cell.
#[derive(Debug, Clone)]
pub struct PoolIndices {
    input: Shape,
    argmax: Vec<usize>,
}

/// 2×2 max pooling with stride 2. Ties go to the first element in row-major
/// order within the window.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::dim(
            "maxpool2d",
            format!("spatial dims {}x{} must be even; pad the input to an even size", s.h, s.w),
        ));
    }
    let out_shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let data = x.data();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let top = base + 2 * oy * s.w + 2 * ox;
                    let mut best = top;
                    for cand in [top + 1, top + s.w, top + s.w + 1] {
                        if data[cand] > data[best] {
                            best = cand;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, PoolIndices { input: s, argmax }))
}

pub fn maxpool2d_backward<T: Scalar>(idx: &PoolIndices, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != idx.argmax.len() {
        return Err(Error::dim(
            "maxpool2d_backward",
            format!("grad_out {} does not match pooled output", grad_out.shape()),
        ));
    }
    let mut g = Tensor::zeros(idx.input);
    let dst = g.data_mut();
    for (&i, &v) in idx.argmax.iter().zip(grad_out.data()) {
        dst[i] += v;
    }
    Ok(g)
}
