//! Forward-pass throughput at batch 1 and batch 4 on pre-loaded inputs.
//!
//! cargo run --release --example inference_fps -- [base_width] [side]

use drseg::metrics::measure_fps;
use drseg::{Shape, Tensor, UNetConfig, UNetModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> drseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let base_width: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let side: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(128);
    let model = UNetModel::<f32>::new(UNetConfig { base_width, ..Default::default() }, 0)?;
    println!("base_width {base_width}, {} parameters, {side}x{side} inputs", model.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for batch in [1, 4] {
        let inputs: Vec<Tensor> = (0..16 / batch)
            .map(|_| Tensor::uniform(Shape::new(batch, 3, side, side), 0.0, 1.0, &mut rng))
            .collect();
        let r = measure_fps(&model, &inputs, 2)?;
        println!("batch {batch}: {} frames in {:.3}s, {:.1} fps, {:.2} ms/frame", r.frames, r.secs, r.fps, r.mean_ms);
    }
    Ok(())
}
