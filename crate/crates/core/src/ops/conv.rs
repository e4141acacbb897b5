//! 2-D convolution and transposed convolution lowered to GEMM via im2col.

use ndarray::linalg::general_mat_mul;
use ndarray::ArrayView2;
use ndarray::ArrayViewMut2;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Kernel, bias, stride and padding of a convolution.
///
/// For [`conv2d`] the weight is laid out `(out_c, in_c, kh, kw)`. For
/// [`conv_transpose2d`] it is `(in_c, out_c, kh, kw)`, so that the same weight
/// tensor realizes an operator and its adjoint. The bias is `(1, out_c, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("conv", "stride must be >= 1"));
        }
        let b = bias.shape();
        if (b.n, b.h, b.w) != (1, 1, 1) {
            return Err(Error::dim("conv", format!("bias must be (1, c, 1, 1), got {b}")));
        }
        Ok(ConvParams {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// Zero-bias params with the given weight.
    pub fn with_zero_bias(weight: Tensor<T>, out_c: usize, stride: usize, padding: usize) -> Result<Self> {
        Self::new(weight, Tensor::zeros(Shape::new(1, out_c, 1, 1)), stride, padding)
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s.h, s.w)
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }
}

/// Sliding-window layout shared by both operators: an image of `c × h × w`
/// scanned by a `kh × kw` window produces `oh × ow` positions.
#[derive(Debug, Clone, Copy)]
struct Window {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds `img` (`c × h × w`) into a `rows × cols` patch matrix.
    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        let npos = self.cols();
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * npos..(row + 1) * npos];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let seg = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy as usize >= self.h {
                            seg.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in seg.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *v = if ix < 0 || ix as usize >= self.w {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: scatter-adds patches back into `img`.
    fn col2im<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        let npos = self.cols();
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * npos..(row + 1) * npos];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    alpha: T,
    a: &[T],
    (ar, ac): (usize, usize),
    trans_a: bool,
    b: &[T],
    (br, bc): (usize, usize),
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    let a = ArrayView2::from_shape((ar, ac), a).expect("gemm lhs shape");
    let b = ArrayView2::from_shape((br, bc), b).expect("gemm rhs shape");
    let a = if trans_a { a.reversed_axes() } else { a };
    let b = if trans_b { b.reversed_axes() } else { b };
    let mut c = ArrayViewMut2::from_shape((a.nrows(), b.ncols()), c).expect("gemm out shape");
    general_mat_mul(alpha, &a, &b, beta, &mut c);
}

fn out_extent(op: &'static str, axis: &str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = size + 2 * pad;
    if padded < k {
        return Err(Error::dim(
            op,
            format!("{axis}: kernel {k} exceeds padded input {padded}"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

fn conv_window<T: Scalar>(x: Shape, p: &ConvParams<T>) -> Result<Window> {
    let w = p.weight.shape();
    if x.c != w.c {
        return Err(Error::dim(
            "conv2d",
            format!("input channels {} != weight in_c {} (weight {w})", x.c, w.c),
        ));
    }
    if p.bias.shape().c != w.n {
        return Err(Error::dim(
            "conv2d",
            format!("bias length {} != weight out_c {}", p.bias.shape().c, w.n),
        ));
    }
    if p.stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be >= 1"));
    }
    Ok(Window {
        c: x.c,
        h: x.h,
        w: x.w,
        kh: w.h,
        kw: w.w,
        stride: p.stride,
        pad: p.padding,
        oh: out_extent("conv2d", "h", x.h, w.h, p.stride, p.padding)?,
        ow: out_extent("conv2d", "w", x.w, w.w, p.stride, p.padding)?,
    })
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad<T: Scalar>(bias: &mut Tensor<T>, grad_out: &Tensor<T>) {
    let s = grad_out.shape();
    let mut db = vec![T::zero(); s.c];
    for n in 0..s.n {
        for (c, acc) in db.iter_mut().enumerate() {
            *acc += grad_out.plane(n, c).iter().copied().sum();
        }
    }
    bias.accumulate_grad(&db);
}

/// Cross-correlation of `x` with `p.weight`, plus bias.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let win = conv_window(xs, p)?;
    let out_c = p.weight.shape().n;
    let out_shape = Shape::new(xs.n, out_c, win.oh, win.ow);
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![T::zero(); win.rows() * win.cols()];
    let pointwise = win.kh == 1 && win.kw == 1 && win.stride == 1 && win.pad == 0;
    for n in 0..xs.n {
        let dst = out.item_mut(n);
        if pointwise {
            gemm(T::one(), p.weight.data(), (out_c, win.rows()), false, x.item(n), (win.rows(), win.cols()), false, T::zero(), dst);
        } else {
            win.im2col(x.item(n), &mut cols);
            gemm(T::one(), p.weight.data(), (out_c, win.rows()), false, &cols, (win.rows(), win.cols()), false, T::zero(), dst);
        }
        add_bias(dst, p.bias.data(), win.cols());
    }
    Ok(out)
}

/// Backward of [`conv2d`]. Accumulates weight and bias gradients into `p` and
/// returns the gradient with respect to `x`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &mut ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let win = conv_window(xs, p)?;
    let out_c = p.weight.shape().n;
    let expect = Shape::new(xs.n, out_c, win.oh, win.ow);
    if grad_out.shape() != expect {
        return Err(Error::dim(
            "conv2d_backward",
            format!("grad_out {} != output {expect}", grad_out.shape()),
        ));
    }
    let (rows, npos) = (win.rows(), win.cols());
    let mut grad_x = Tensor::zeros(xs);
    let mut dw = vec![T::zero(); out_c * rows];
    let mut cols = vec![T::zero(); rows * npos];
    let mut dcols = vec![T::zero(); rows * npos];
    let pointwise = win.kh == 1 && win.kw == 1 && win.stride == 1 && win.pad == 0;
    for n in 0..xs.n {
        let g = grad_out.item(n);
        let patches: &[T] = if pointwise {
            x.item(n)
        } else {
            win.im2col(x.item(n), &mut cols);
            &cols
        };
        gemm(T::one(), g, (out_c, npos), false, patches, (rows, npos), true, T::one(), &mut dw);
        if pointwise {
            gemm(T::one(), p.weight.data(), (out_c, rows), true, g, (out_c, npos), false, T::zero(), grad_x.item_mut(n));
        } else {
            gemm(T::one(), p.weight.data(), (out_c, rows), true, g, (out_c, npos), false, T::zero(), &mut dcols);
            win.col2im(&dcols, grad_x.item_mut(n));
        }
    }
    p.weight.accumulate_grad(&dw);
    accumulate_bias_grad(&mut p.bias, grad_out);
    Ok(grad_x)
}

fn transpose_window<T: Scalar>(x: Shape, p: &ConvParams<T>) -> Result<Window> {
    let w = p.weight.shape();
    if x.c != w.n {
        return Err(Error::dim(
            "conv_transpose2d",
            format!("input channels {} != weight in_c {} (weight {w})", x.c, w.n),
        ));
    }
    if p.bias.shape().c != w.c {
        return Err(Error::dim(
            "conv_transpose2d",
            format!("bias length {} != weight out_c {}", p.bias.shape().c, w.c),
        ));
    }
    if p.stride == 0 {
        return Err(Error::invalid("conv_transpose2d", "stride must be >= 1"));
    }
    let extent = |axis: &str, size: usize, k: usize| -> Result<usize> {
        let full = (size - 1) * p.stride + k;
        if full <= 2 * p.padding {
            return Err(Error::dim(
                "conv_transpose2d",
                format!("{axis}: output extent {full} - 2*{} is not positive", p.padding),
            ));
        }
        Ok(full - 2 * p.padding)
    };
    Ok(Window {
        c: w.c,
        h: extent("h", x.h, w.h)?,
        w: extent("w", x.w, w.w)?,
        kh: w.h,
        kw: w.w,
        stride: p.stride,
        pad: p.padding,
        oh: x.h,
        ow: x.w,
    })
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same weight,
/// plus bias. Output extent is `(h - 1) * stride - 2 * pad + kh`.
pub fn conv_transpose2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let win = transpose_window(xs, p)?;
    let in_c = xs.c;
    let out_shape = Shape::new(xs.n, win.c, win.h, win.w);
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![T::zero(); win.rows() * win.cols()];
    for n in 0..xs.n {
        gemm(T::one(), p.weight.data(), (in_c, win.rows()), true, x.item(n), (in_c, win.cols()), false, T::zero(), &mut cols);
        let dst = out.item_mut(n);
        win.col2im(&cols, dst);
        add_bias(dst, p.bias.data(), win.h * win.w);
    }
    Ok(out)
}

/// Backward of [`conv_transpose2d`].
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &mut ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let win = transpose_window(xs, p)?;
    let expect = Shape::new(xs.n, win.c, win.h, win.w);
    if grad_out.shape() != expect {
        return Err(Error::dim(
            "conv_transpose2d_backward",
            format!("grad_out {} != output {expect}", grad_out.shape()),
        ));
    }
    let in_c = xs.c;
    let (rows, npos) = (win.rows(), win.cols());
    let mut grad_x = Tensor::zeros(xs);
    let mut dw = vec![T::zero(); in_c * rows];
    let mut gcols = vec![T::zero(); rows * npos];
    for n in 0..xs.n {
        win.im2col(grad_out.item(n), &mut gcols);
        gemm(T::one(), p.weight.data(), (in_c, rows), false, &gcols, (rows, npos), false, T::zero(), grad_x.item_mut(n));
        gemm(T::one(), x.item(n), (in_c, npos), false, &gcols, (rows, npos), true, T::one(), &mut dw);
    }
    p.weight.accumulate_grad(&dw);
    accumulate_bias_grad(&mut p.bias, grad_out);
    Ok(grad_x)
}
