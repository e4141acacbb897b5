//! Per-image metrics for noisy predictions against synthetic masks, their
//! mean, and quadratic weighted kappa on a toy grading task.
//!
//! cargo run --example segmentation_metrics

use drseg::metrics::{mean_record, quadratic_weighted_kappa, segmentation_metrics};
use drseg::synthetic::{synthetic_pairs, SyntheticSpec};
use drseg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> drseg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs = synthetic_pairs(&SyntheticSpec { count: 4, ..Default::default() }, 5);
    let mut records = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let flip = 0.02 * (i + 1) as f64;
        let pred = Tensor::from_fn(p.mask.shape(), |n, c, y, x| {
            let v = p.mask.at(n, c, y, x);
            if rng.gen_bool(flip) { 1.0 - v } else { v }
        });
        let r = segmentation_metrics(&p.id, &pred, &p.mask)?;
        println!("{r}");
        records.push(r);
    }
    println!("{}", mean_record(&records).expect("non-empty"));

    let truth: Vec<usize> = (0..200).map(|_| rng.gen_range(0..5)).collect();
    for noise in [0.0, 0.3, 1.0] {
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.gen_bool(noise) { rng.gen_range(0..5) } else { t })
            .collect();
        println!("kappa with {:.0}% random grades: {:.4}", noise * 100.0, quadratic_weighted_kappa(&pred, &truth)?);
    }
    Ok(())
}
