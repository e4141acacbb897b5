//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.
//!
//! cargo test --test acceptance

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{brute_counts, brute_kappa, random_mask, rng, GRADIENT_SUITE};
use drseg::data::{augment_dataset, hflip, rotate, vflip, AugmentOptions, DatasetManifest, SamplePair};
use drseg::metrics::{binarize, dice_coefficient, measure_fps, quadratic_weighted_kappa, segmentation_metrics};
use drseg::ops::{self, reference, ConvParams};
use drseg::report::{compose_report, parse_structured_block, Findings, LesionState, Templates, Urgency};
use drseg::synthetic::{synthetic_pairs, SyntheticSpec};
use drseg::train::{load_checkpoint, save_checkpoint, train, Checkpoint, PlateauScheduler, TrainConfig, Trainer};
use drseg::unet::predict_probabilities;
use drseg::{Error, Shape, Tensor, UNetConfig, UNetModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let mut worst = Vec::new();
    for &(name, check, tol) in GRADIENT_SUITE {
        let mut max_err: f64 = 0.0;
        for seed in 0..20 {
            let r = check(seed, tol);
            ensure!(r.passed, "{name} seed {seed}: {r}");
            max_err = max_err.max(r.max_rel_error);
        }
        worst.push(format!("{name} {max_err:.1e}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "suite took {secs:.1}s");
    Ok(format!("8 ops x 20 seeds in {secs:.1}s; worst {}", worst.join(", ")))
}

fn random_conv(g: &mut ChaCha8Rng) -> (Tensor<f64>, ConvParams<f64>, ConvParams<f64>) {
    let (n, c, o) = (g.gen_range(1..3), g.gen_range(1..5), g.gen_range(1..5));
    let k = g.gen_range(1..5);
    let stride = g.gen_range(1..4);
    let pad = g.gen_range(0..k);
    let h = g.gen_range(k.max(2)..12);
    let w = g.gen_range(k.max(2)..12);
    let x = Tensor::randn(Shape::new(n, c, h, w), 1.0, g);
    let fwd = ConvParams::new(
        Tensor::randn(Shape::new(o, c, k, k), 1.0, g),
        Tensor::randn(Shape::new(1, o, 1, 1), 1.0, g),
        stride,
        pad,
    )
    .unwrap();
    let tr = ConvParams::new(
        Tensor::randn(Shape::new(c, o, k, k), 1.0, g),
        Tensor::randn(Shape::new(1, o, 1, 1), 1.0, g),
        stride,
        pad,
    )
    .unwrap();
    (x, fwd, tr)
}

fn conv_oracle() -> Outcome {
    let mut g = rng(2);
    let mut worst: f64 = 0.0;
    let mut transposed = 0;
    for i in 0..200 {
        let (x, fwd, tr) = random_conv(&mut g);
        let d = max_abs_diff(&ops::conv2d(&x, &fwd).unwrap(), &reference::conv2d(&x, &fwd).unwrap());
        ensure!(d <= 1e-6, "conv2d config {i}: diff {d:e}");
        worst = worst.max(d);
        if let (Ok(a), Ok(b)) = (ops::conv_transpose2d(&x, &tr), reference::conv_transpose2d(&x, &tr)) {
            let d = max_abs_diff(&a, &b);
            ensure!(d <= 1e-6, "conv_transpose2d config {i}: diff {d:e}");
            worst = worst.max(d);
            transposed += 1;
        }
    }
    ensure!(transposed >= 150, "only {transposed} transposed configs had a valid output");
    Ok(format!("200 conv2d + {transposed} conv_transpose2d configs, max diff {worst:.1e}"))
}

fn adjoint_identity() -> Outcome {
    let mut g = rng(3);
    let mut done = 0;
    let mut worst: f64 = 0.0;
    while done < 50 {
        let (n, c, o) = (g.gen_range(1..3), g.gen_range(1..5), g.gen_range(1..5));
        let (k, s, p) = (g.gen_range(1..5), g.gen_range(1..4), g.gen_range(0..2));
        let (h, w) = (g.gen_range(3..14), g.gen_range(3..14));
        if k > h + 2 * p || k > w + 2 * p || (h + 2 * p - k) % s != 0 || (w + 2 * p - k) % s != 0 {
            continue;
        }
        let x = Tensor::<f64>::randn(Shape::new(n, c, h, w), 1.0, &mut g);
        let weight = Tensor::randn(Shape::new(o, c, k, k), 1.0, &mut g);
        let fwd = ConvParams::with_zero_bias(weight.clone(), o, s, p).unwrap();
        let ax = ops::conv2d(&x, &fwd).unwrap();
        let y = Tensor::<f64>::randn(ax.shape(), 1.0, &mut g);
        let back = ops::conv_transpose2d(&y, &ConvParams::with_zero_bias(weight, c, s, p).unwrap()).unwrap();
        ensure!(back.shape() == x.shape(), "transpose shape {} vs {}", back.shape(), x.shape());
        let (lhs, rhs) = (ax.dot(&y).unwrap(), x.dot(&back).unwrap());
        let err = (lhs - rhs).abs();
        ensure!(err <= 1e-5, "instance {done}: {lhs} vs {rhs}");
        worst = worst.max(err);
        done += 1;
    }
    Ok(format!("50 instances, max |<Ax,y> - <x,A'y>| {worst:.1e}"))
}

fn metric_oracle() -> Outcome {
    let mut g = rng(4);
    let s = Shape::new(1, 1, 16, 16);
    let mut pairs: Vec<(Tensor<f32>, Tensor<f32>)> = (0..1000)
        .map(|_| {
            let p = g.gen_range(0.0..1.0);
            (random_mask(s, p, &mut g), random_mask(s, g.gen_range(0.0..1.0), &mut g))
        })
        .collect();
    pairs.push((Tensor::zeros(s), Tensor::zeros(s)));
    pairs.push((Tensor::ones(s), Tensor::ones(s)));
    for (i, (pred, gt)) in pairs.iter().enumerate() {
        let r = segmentation_metrics("m", pred, gt).map_err(|e| e.to_string())?;
        let c = r.counts;
        ensure!((c.tp, c.fp, c.fn_, c.tn) == brute_counts(pred.data(), gt.data()), "pair {i}: counts differ");
        ensure!(r.jaccard <= r.f1, "pair {i}: jaccard {} > f1 {}", r.jaccard, r.f1);
    }
    let empty = segmentation_metrics("e", &pairs[1000].0, &pairs[1000].1).unwrap();
    let full = segmentation_metrics("f", &pairs[1001].0, &pairs[1001].1).unwrap();
    ensure!(empty.ratios() == [1.0; 5] && full.ratios() == [1.0; 5], "edge cases not perfect");
    Ok("1002 pairs match brute-force counts exactly".into())
}

fn qwk_oracle() -> Outcome {
    let mut g = rng(5);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let truth: Vec<usize> = (0..200).map(|_| g.gen_range(0..5)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if g.gen_bool(0.6) { t } else { g.gen_range(0..5) })
            .collect();
        let k = quadratic_weighted_kappa(&pred, &truth).map_err(|e| e.to_string())?;
        let d = (k - brute_kappa(&pred, &truth)).abs();
        ensure!(d <= 1e-12, "list {i}: diff {d:e}");
        worst = worst.max(d);
        let perfect = quadratic_weighted_kappa(&truth, &truth).unwrap();
        ensure!(perfect == 1.0, "perfect agreement gave {perfect}");
    }
    let opposite = quadratic_weighted_kappa(&[0, 0, 4, 4], &[4, 4, 0, 0]).unwrap();
    ensure!(opposite == -1.0, "[0,0,4,4]/[4,4,0,0] gave {opposite}");
    Ok(format!("100 lists of 200, max diff {worst:.1e}; perfect 1.0, reversed -1.0"))
}

fn overfit_one(seed: u64) -> Result<(usize, f64), String> {
    let data = synthetic_pairs(&SyntheticSpec::default(), seed);
    let cfg = UNetConfig { base_width: 8, depth: 4, ..Default::default() };
    let mut model = UNetModel::new(cfg, seed).map_err(|e| e.to_string())?;
    let tc = TrainConfig { epochs: 300, batch_size: 4, learning_rate: 1e-3, seed, ..Default::default() };
    let images: Vec<&Tensor> = data.iter().map(|p| &p.image).collect();
    let masks: Vec<&Tensor> = data.iter().map(|p| &p.mask).collect();
    let (x, y) = (Tensor::stack(&images).unwrap(), Tensor::stack(&masks).unwrap());
    let mut trainer = Trainer::new(&mut model, tc).map_err(|e| e.to_string())?;
    let mut dice = 0.0;
    for epoch in 1..=300 {
        trainer.run_epoch(&data, &data).map_err(|e| e.to_string())?;
        let pred = binarize(&predict_probabilities(trainer.model(), &x).unwrap(), 0.5).unwrap();
        dice = dice_coefficient(&pred, &y).unwrap();
        if dice >= 0.95 {
            return Ok((epoch, dice));
        }
    }
    Err(format!("seed {seed}: dice {dice:.4} after 300 epochs"))
}

fn overfit() -> Outcome {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    for seed in [0, 1] {
        let (epoch, dice) = overfit_one(seed)?;
        parts.push(format!("seed {seed}: dice {dice:.4} at epoch {epoch}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs <= 600.0, "took {secs:.0}s");
    Ok(format!("{} ({secs:.1}s)", parts.join("; ")))
}

fn binary(m: &Tensor<f32>) -> bool {
    m.data().iter().all(|&v| v == 0.0 || v == 1.0)
}

fn augmentation() -> Outcome {
    let mut g = rng(7);
    let mut checked = 0;
    for i in 0..60 {
        let (h, w) = (g.gen_range(1..20), g.gen_range(1..20));
        let image = Tensor::uniform(Shape::new(1, 3, h, w), 0.0, 1.0, &mut g);
        let pair = SamplePair::new("a", image, random_mask(Shape::new(1, 1, h, w), 0.3, &mut g)).unwrap();
        ensure!(hflip(&hflip(&pair)) == pair && vflip(&vflip(&pair)) == pair, "pair {i}: flip not an involution");
        let r0 = rotate(&pair, 0.0);
        let d = r0.image.data().iter().zip(pair.image.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        ensure!(d <= 1e-6 && r0.mask == pair.mask, "pair {i}: rotate(0) differs by {d:e}");
        if h == w {
            ensure!(rotate(&pair, 90.0).mask.sum() == pair.mask.sum(), "pair {i}: 90 degree rotation changed count");
        }
        for out in [hflip(&pair), vflip(&pair), r0]
            .into_iter()
            .chain([15.0, 45.0, 90.0, 133.0, 180.0, 270.0, -60.0].map(|a| rotate(&pair, a)))
        {
            ensure!(binary(&out.mask), "pair {i}: mask not binary after a transform");
            checked += 1;
        }
    }
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let src = tmp.path().join("src");
    common::write_dataset(&src, &synthetic_pairs(&SyntheticSpec { count: 3, height: 24, width: 24, ..Default::default() }, 7));
    let m = DatasetManifest::scan(&src).map_err(|e| e.to_string())?;
    let out = augment_dataset(&m, tmp.path().join("out"), &AugmentOptions { size: (16, 16), ..Default::default() })
        .map_err(|e| e.to_string())?;
    ensure!(out.len() == 4 * m.len(), "{} pairs became {}", m.len(), out.len());
    for p in out.load_all((16, 16)).map_err(|e| e.to_string())? {
        ensure!(binary(&p.mask), "{} not binary on disk", p.id);
    }
    Ok(format!("60 pairs, {checked} transformed masks scanned; 3 pairs -> {} on disk", out.len()))
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn checkpoints() -> Outcome {
    let cfg = UNetConfig { base_width: 4, depth: 2, ..Default::default() };
    let mut model = UNetModel::<f32>::new(cfg, 8).unwrap();
    // one training step so running statistics differ from their defaults
    let data = synthetic_pairs(&SyntheticSpec { count: 2, height: 16, width: 16, ..Default::default() }, 8);
    train(&mut model, &data, &data, &TrainConfig { epochs: 1, ..Default::default() }, |_| {}).map_err(|e| e.to_string())?;
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let path = tmp.path().join("m.ckpt");
    save_checkpoint(&Checkpoint::from_model(&model, 1, 0.5), &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint::<f32>(&path).and_then(|c| c.to_model()).map_err(|e| e.to_string())?;
    for ((na, _, a), (nb, _, b)) in model.named_tensors().into_iter().zip(loaded.named_tensors()) {
        ensure!(na == nb && a.shape() == b.shape() && bits(a) == bits(b), "tensor {na} differs");
    }
    let probe = Tensor::uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut rng(9));
    ensure!(
        bits(&model.forward(&probe).unwrap()) == bits(&loaded.forward(&probe).unwrap()),
        "forward outputs differ"
    );

    let bytes = std::fs::read(&path).unwrap();
    let structured = |b: &[u8]| {
        let r = Checkpoint::<f32>::from_bytes(b).and_then(|c| c.to_model());
        matches!(r, Err(Error::Format(_)) | Err(Error::Corrupt { .. }))
    };
    for cut in 0..bytes.len() {
        ensure!(structured(&bytes[..cut]), "truncation at {cut} accepted");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    ensure!(structured(&longer), "trailing byte accepted");
    let header_len = 4 + 4 + 16 + 4 + 8 + 4;
    for pos in [0, 3, 4, 8, 12, 20, header_len - 4, header_len, header_len + 3] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0xA5;
        ensure!(structured(&bad), "flip at structural byte {pos} accepted");
    }
    let mut g = rng(10);
    for _ in 0..2000 {
        let mut bad = bytes.clone();
        for _ in 0..g.gen_range(1..4) {
            let i = g.gen_range(0..bad.len());
            bad[i] = g.gen();
        }
        let r = catch_unwind(|| Checkpoint::<f32>::from_bytes(&bad).and_then(|c| c.to_model()).map(|_| ()));
        ensure!(r.is_ok(), "decoder panicked on a corrupted file");
    }
    std::fs::write(&path, b"").unwrap();
    ensure!(matches!(load_checkpoint::<f32>(&path), Err(Error::Corrupt { .. })), "empty file accepted");
    Ok(format!("{} tensors bit-identical; {} truncations and 2000 random corruptions handled", model.named_tensors().len(), bytes.len()))
}

fn determinism() -> Outcome {
    let data = synthetic_pairs(&SyntheticSpec { count: 6, height: 32, width: 32, ..Default::default() }, 11);
    let (tr, va) = data.split_at(4);
    let run = || {
        let mut m = UNetModel::<f32>::new(UNetConfig { base_width: 4, depth: 3, ..Default::default() }, 11).unwrap();
        let cfg = TrainConfig { epochs: 6, batch_size: 2, learning_rate: 1e-3, seed: 11, ..Default::default() };
        let s = train(&mut m, tr, va, &cfg, |_| {}).unwrap();
        let losses: Vec<(u64, u64)> = s.records.iter().map(|r| (r.train_loss.to_bits(), r.val_loss.to_bits())).collect();
        let params: Vec<Vec<u32>> = m.named_tensors().into_iter().map(|(_, _, t)| bits(t)).collect();
        (losses, params)
    };
    let (a, b) = (run(), run());
    ensure!(a.0 == b.0, "epoch loss sequences differ");
    ensure!(a.1 == b.1, "final parameters differ");
    Ok(format!("2 runs x {} epochs identical in losses and {} parameter tensors", a.0.len(), a.1.len()))
}

fn composer() -> Outcome {
    let templates = Templates::default();
    let states = LesionState::ALL;
    let mut count = 0;
    for combo in 0..3usize.pow(6) {
        let mut s = [LesionState::Absent; 6];
        let mut rest = combo;
        for slot in &mut s {
            *slot = states[rest % 3];
            rest /= 3;
        }
        let mut prev = Urgency::Routine;
        for grade in 0..5u8 {
            let f = Findings::from_states(grade, s).map_err(|e| e.to_string())?;
            let r = compose_report(&f, &templates).map_err(|e| format!("grade {grade} combo {combo}: {e}"))?;
            ensure!(r.urgency >= prev, "combo {combo}: urgency fell at grade {grade}");
            ensure!(grade != 4 || r.urgency == Urgency::Immediate, "combo {combo}: grade 4 gave {}", r.urgency);
            let (back, u) = parse_structured_block(&r.render()).map_err(|e| e.to_string())?;
            ensure!(back == f && u == r.urgency, "combo {combo} grade {grade}: block does not round-trip");
            prev = r.urgency;
            count += 1;
        }
    }
    ensure!(count == 3645, "{count} combinations");
    Ok("3645 combinations composed; monotone; grade 4 immediate; blocks round-trip".into())
}

fn scheduler() -> Outcome {
    let lr0 = 1e-3;
    let mut s = PlateauScheduler::new(lr0, 0.5, 5);
    let mut trace = Vec::new();
    for _ in 0..206 {
        trace.push(s.step(0.42));
    }
    ensure!(trace[..5].iter().all(|&lr| lr == lr0), "lr changed before epoch 6: {:?}", &trace[..5]);
    ensure!(trace[5] == lr0 * 0.5, "lr after epoch 6 is {}", trace[5]);
    let min = trace.iter().copied().fold(f64::INFINITY, f64::min);
    ensure!(min >= PlateauScheduler::MIN_LR, "floor breached: {min:e}");
    ensure!(*trace.last().unwrap() == PlateauScheduler::MIN_LR, "floor not reached: {:e}", trace.last().unwrap());
    ensure!(trace.windows(2).all(|w| w[1] <= w[0]), "lr increased");
    Ok(format!("halved after epoch 6; floor {:e} held over 200 plateau epochs", PlateauScheduler::MIN_LR))
}

fn fps_sanity() -> Outcome {
    let model = UNetModel::<f32>::new(UNetConfig { base_width: 4, ..Default::default() }, 12).unwrap();
    let mut g = rng(12);
    let inputs: Vec<Tensor<f32>> = (0..8).map(|_| Tensor::uniform(Shape::new(1, 3, 64, 64), 0.0, 1.0, &mut g)).collect();
    let once = measure_fps(&model, &inputs, 2).map_err(|e| e.to_string())?;
    let reps = ((0.4 / once.secs.max(1e-6)).ceil() as usize).clamp(1, 200);
    let timed: Vec<Tensor<f32>> = inputs.iter().cycle().take(inputs.len() * reps).cloned().collect();
    let runs: Vec<f64> = (0..3)
        .map(|_| measure_fps(&model, &timed, 2).map(|r| r.fps))
        .collect::<drseg::Result<_>>()
        .map_err(|e| e.to_string())?;
    ensure!(runs.iter().all(|f| f.is_finite() && *f > 0.0), "non-positive fps {runs:?}");
    let mean = runs.iter().sum::<f64>() / 3.0;
    let spread = runs.iter().map(|f| (f - mean).abs() / mean).fold(0.0, f64::max);
    ensure!(spread <= 0.3, "runs {runs:?} deviate {:.0}% from their mean", spread * 100.0);
    Ok(format!("fps {:.1} / {:.1} / {:.1} over {} frames each, max deviation {:.1}%", runs[0], runs[1], runs[2], timed.len(), spread * 100.0))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradient suite", gradient_suite),
        ("convolution oracle", conv_oracle),
        ("adjoint identity", adjoint_identity),
        ("metric oracle", metric_oracle),
        ("qwk oracle", qwk_oracle),
        ("overfit", overfit),
        ("augmentation properties", augmentation),
        ("checkpoint round-trip", checkpoints),
        ("determinism", determinism),
        ("composer totality", composer),
        ("scheduler trace", scheduler),
        ("fps sanity", fps_sanity),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let dt = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name} ({dt:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name} ({dt:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
