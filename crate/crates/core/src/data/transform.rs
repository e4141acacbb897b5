use crate::tensor::{Shape, Tensor};

use super::SamplePair;

fn flip_tensor(t: &Tensor<f32>, horizontal: bool) -> Tensor<f32> {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, y, x| {
        if horizontal {
            t.at(n, c, y, s.w - 1 - x)
        } else {
            t.at(n, c, s.h - 1 - y, x)
        }
    })
}

/// Mirrors the column axis of image and mask.
pub fn hflip(pair: &SamplePair) -> SamplePair {
    SamplePair {
        id: pair.id.clone(),
        image: flip_tensor(&pair.image, true),
        mask: flip_tensor(&pair.mask, true),
    }
}

/// Mirrors the row axis of image and mask.
pub fn vflip(pair: &SamplePair) -> SamplePair {
    SamplePair {
        id: pair.id.clone(),
        image: flip_tensor(&pair.image, false),
        mask: flip_tensor(&pair.mask, false),
    }
}

/// Cosine and sine, exact for multiples of 90°.
fn cos_sin(angle_deg: f64) -> (f64, f64) {
    let r = angle_deg.rem_euclid(360.0);
    if r.fract() == 0.0 && (r as i64) % 90 == 0 {
        return match r as i64 {
            0 => (1.0, 0.0),
            90 => (0.0, 1.0),
            180 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
    }
    let t = angle_deg.to_radians();
    (t.cos(), t.sin())
}

/// Source coordinate for every destination pixel (inverse mapping about the
/// image center). Positive angles turn content clockwise as displayed
/// (rows grow downward).
fn source_coords(h: usize, w: usize, angle_deg: f64) -> impl Fn(usize, usize) -> (f64, f64) {
    let (cos, sin) = cos_sin(angle_deg);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    move |y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        (cy - sin * dx + cos * dy, cx + cos * dx + sin * dy)
    }
}

fn bilinear(t: &Tensor<f32>, n: usize, c: usize, sy: f64, sx: f64) -> f32 {
    let s = t.shape();
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let sample = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= s.h as f64 || xx >= s.w as f64 {
            0.0
        } else {
            t.at(n, c, yy as usize, xx as usize) as f64
        }
    };
    let top = sample(y0, x0) * (1.0 - fx) + if fx > 0.0 { sample(y0, x0 + 1.0) * fx } else { 0.0 };
    let bottom = if fy > 0.0 {
        sample(y0 + 1.0, x0) * (1.0 - fx) + if fx > 0.0 { sample(y0 + 1.0, x0 + 1.0) * fx } else { 0.0 }
    } else {
        0.0
    };
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Rotates about the image center, keeping the canvas size. The image is
/// sampled bilinearly and the mask by nearest neighbor; out-of-bounds
/// pixels become 0 and the mask is re-binarized at 0.5.
pub fn rotate(pair: &SamplePair, angle_deg: f64) -> SamplePair {
    let is = pair.image.shape();
    let src = source_coords(is.h, is.w, angle_deg);
    let image = Tensor::from_fn(is, |n, c, y, x| {
        let (sy, sx) = src(y, x);
        bilinear(&pair.image, n, c, sy, sx)
    });
    let ms: Shape = pair.mask.shape();
    let mask = Tensor::from_fn(ms, |n, c, y, x| {
        let (sy, sx) = src(y, x);
        let (ry, rx) = (sy.round(), sx.round());
        let v = if ry < 0.0 || rx < 0.0 || ry >= ms.h as f64 || rx >= ms.w as f64 {
            0.0
        } else {
            pair.mask.at(n, c, ry as usize, rx as usize)
        };
        if v >= 0.5 {
            1.0
        } else {
            0.0
        }
    });
    SamplePair {
        id: pair.id.clone(),
        image,
        mask,
    }
}
