//! Saves a briefly trained model, reloads it, compares outputs bit for bit,
//! and shows the error for a truncated file.
//!
//! cargo run --example checkpoint_roundtrip

use drseg::synthetic::{synthetic_pairs, SyntheticSpec};
use drseg::train::{load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig};
use drseg::{Shape, Tensor, UNetConfig, UNetModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> drseg::Result<()> {
    let data = synthetic_pairs(&SyntheticSpec { count: 4, height: 32, width: 32, ..Default::default() }, 2);
    let mut model = UNetModel::new(UNetConfig { base_width: 4, depth: 2, ..Default::default() }, 2)?;
    let summary = train(&mut model, &data[..3], &data[3..], &TrainConfig { epochs: 2, ..Default::default() }, |r| {
        println!("{r}")
    })?;

    let path = std::env::temp_dir().join("drseg_example.ckpt");
    let last = summary.records.last().expect("two epochs");
    save_checkpoint(&Checkpoint::from_model(&model, last.epoch as u32, last.val_loss), &path)?;
    let ck = load_checkpoint::<f32>(&path)?;
    let loaded = ck.to_model()?;
    println!("{}: {} tensors, epoch {}, val_loss {:.6}", path.display(), ck.tensors.len(), ck.epoch, ck.best_val_loss);

    let probe = Tensor::uniform(Shape::new(1, 3, 32, 32), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    let (a, b) = (model.forward(&probe)?, loaded.forward(&probe)?);
    let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("forward outputs bit-identical: {same}");

    let bytes = ck.to_bytes();
    match Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() / 2]) {
        Ok(_) => println!("truncated file unexpectedly loaded"),
        Err(e) => println!("truncated file: {e}"),
    }
    Ok(())
}
