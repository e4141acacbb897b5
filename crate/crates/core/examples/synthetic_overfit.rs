//! Memorize eight synthetic 64x64 pairs and report train Dice per epoch.
//!
//! cargo run --release --example synthetic_overfit -- [seed] [max_epochs]

use drseg::metrics::{binarize, dice_coefficient};
use drseg::synthetic::{synthetic_pairs, SyntheticSpec};
use drseg::train::{TrainConfig, Trainer};
use drseg::unet::predict_probabilities;
use drseg::{Tensor, UNetConfig, UNetModel};

fn main() -> drseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let max_epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);

    let data = synthetic_pairs(&SyntheticSpec::default(), seed);
    let cfg = UNetConfig {
        base_width: 8,
        depth: 4,
        ..Default::default()
    };
    let mut model = UNetModel::new(cfg, seed)?;
    println!("{} parameters", model.param_count());
    let tc = TrainConfig {
        epochs: max_epochs,
        batch_size: 4,
        learning_rate: 1e-3,
        seed,
        ..Default::default()
    };
    let images: Vec<&Tensor> = data.iter().map(|p| &p.image).collect();
    let masks: Vec<&Tensor> = data.iter().map(|p| &p.mask).collect();
    let (x, y) = (Tensor::stack(&images)?, Tensor::stack(&masks)?);

    let mut trainer = Trainer::new(&mut model, tc)?;
    for _ in 0..max_epochs {
        let rec = trainer.run_epoch(&data, &data)?;
        let pred = binarize(&predict_probabilities(trainer.model(), &x)?, 0.5)?;
        let dice = dice_coefficient(&pred, &y)?;
        println!("{rec} dice={dice:.4}");
        if dice >= 0.95 {
            break;
        }
    }
    println!("{}", trainer.summary());
    Ok(())
}
