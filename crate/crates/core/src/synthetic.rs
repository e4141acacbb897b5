//! Seeded toy segmentation data: filled ellipses as masks, images are the
//! mask plus Gaussian noise on every channel.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::SamplePair;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Ellipses drawn per mask, inclusive range.
    pub shapes: (usize, usize),
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            count: 8,
            height: 64,
            width: 64,
            channels: 3,
            shapes: (1, 3),
            noise_std: 0.1,
        }
    }
}

fn ellipse_mask(h: usize, w: usize, n_shapes: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let short = h.min(w) as f64;
    let ellipses: Vec<(f64, f64, f64, f64, f64)> = (0..n_shapes)
        .map(|_| {
            let ry = rng.gen_range(0.08..0.25) * short;
            let rx = rng.gen_range(0.08..0.25) * short;
            let cy = rng.gen_range(ry..(h as f64 - ry));
            let cx = rng.gen_range(rx..(w as f64 - rx));
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            (cy, cx, ry, rx, theta)
        })
        .collect();
    Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        let inside = ellipses.iter().any(|&(cy, cx, ry, rx, t)| {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let (u, v) = (dx * t.cos() + dy * t.sin(), -dx * t.sin() + dy * t.cos());
            (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
        });
        if inside {
            1.0
        } else {
            0.0
        }
    })
}

/// Deterministic in `seed`. Ids are `syn000`, `syn001`, ...
pub fn synthetic_pairs(spec: &SyntheticSpec, seed: u64) -> Vec<SamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite std");
    (0..spec.count)
        .map(|i| {
            let k = rng.gen_range(spec.shapes.0..=spec.shapes.1.max(spec.shapes.0));
            let mask = ellipse_mask(spec.height, spec.width, k, &mut rng);
            let plane = spec.height * spec.width;
            let mut data = Vec::with_capacity(spec.channels * plane);
            for _ in 0..spec.channels {
                data.extend(mask.data().iter().map(|&m| m + noise.sample(&mut rng) as f32));
            }
            let image = Tensor::from_vec(Shape::new(1, spec.channels, spec.height, spec.width), data)
                .expect("sized above");
            SamplePair::new(format!("syn{i:03}"), image, mask).expect("shapes agree")
        })
        .collect()
}
