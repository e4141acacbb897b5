use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{Rgb, RgbImage};

use crate::data::{load_sample, mask_to_luma, save_png, tensor_to_rgb, DatasetManifest};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::unet::{predict_probabilities, UNetModel};

use super::{binarize, mean_record, segmentation_metrics, MetricsRecord};

/// Separator width between triptych panels, in pixels.
pub const GUTTER: u32 = 10;
pub const GUTTER_GRAY: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpsReport {
    pub frames: usize,
    pub secs: f64,
    pub fps: f64,
    pub mean_ms: f64,
}

pub fn fps_from(frames: usize, secs: f64) -> Result<FpsReport> {
    if !(secs > 0.0) {
        return Err(Error::Resolution(format!(
            "{frames} frames took {secs}s; rerun with more samples"
        )));
    }
    Ok(FpsReport {
        frames,
        secs,
        fps: frames as f64 / secs,
        mean_ms: secs * 1e3 / frames.max(1) as f64,
    })
}

/// Forward-pass throughput over pre-loaded inputs. The first `warmup` inputs
/// (cycled) are run untimed; every input's batch items count as frames.
pub fn measure_fps(model: &UNetModel<f32>, inputs: &[Tensor<f32>], warmup: usize) -> Result<FpsReport> {
    if inputs.is_empty() {
        return Err(Error::invalid("measure_fps", "at least one timed input is required"));
    }
    for x in inputs.iter().cycle().take(warmup) {
        model.forward(x)?;
    }
    let mut frames = 0;
    let t0 = Instant::now();
    for x in inputs {
        std::hint::black_box(model.forward(x)?);
        frames += x.shape().n;
    }
    fps_from(frames, t0.elapsed().as_secs_f64())
}

/// `image | ground truth | prediction` with mid-gray gutters.
pub fn compose_triptych(image: &Tensor<f32>, gt: &Tensor<f32>, pred: &Tensor<f32>) -> Result<RgbImage> {
    let (a, b, c) = (image.shape(), gt.shape(), pred.shape());
    if (a.h, a.w) != (b.h, b.w) || (a.h, a.w) != (c.h, c.w) {
        return Err(Error::dim("render_triptych", format!("image {a}, ground truth {b}, prediction {c}")));
    }
    let (w, h) = (a.w as u32, a.h as u32);
    let mut out = RgbImage::from_pixel(3 * w + 2 * GUTTER, h, Rgb([GUTTER_GRAY; 3]));
    let panels = [tensor_to_rgb(image), gray_to_rgb(&mask_to_luma(gt)), gray_to_rgb(&mask_to_luma(pred))];
    for (i, panel) in panels.iter().enumerate() {
        image::imageops::replace(&mut out, panel, (i as u32 * (w + GUTTER)) as i64, 0);
    }
    Ok(out)
}

fn gray_to_rgb(g: &image::GrayImage) -> RgbImage {
    RgbImage::from_fn(g.width(), g.height(), |x, y| Rgb([g.get_pixel(x, y).0[0]; 3]))
}

pub fn render_triptych(image: &Tensor<f32>, gt: &Tensor<f32>, pred: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    save_png(&compose_triptych(image, gt, pred)?, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    pub size: (usize, usize),
    pub out_dir: PathBuf,
    pub triptychs: bool,
    pub warmup: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            size: crate::data::DEFAULT_SIZE,
            out_dir: PathBuf::from("eval"),
            triptychs: true,
            warmup: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub records: Vec<MetricsRecord>,
    pub mean: MetricsRecord,
    pub fps: FpsReport,
    /// `(stem, error)` for samples that could not be evaluated.
    pub failures: Vec<(String, String)>,
    pub csv_path: PathBuf,
}

pub fn write_metrics_csv(records: &[MetricsRecord], mean: &MetricsRecord, path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["id", "jaccard", "f1", "recall", "precision", "accuracy", "tp", "fp", "fn", "tn"])
        .map_err(csv_err)?;
    for r in records.iter().chain(std::iter::once(mean)) {
        let c = r.counts;
        let mut row = vec![r.id.clone()];
        row.extend(r.ratios().iter().map(|v| format!("{v:.6}")));
        row.extend([c.tp, c.fp, c.fn_, c.tn].iter().map(u64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Scores every manifest entry, writing `metrics.csv` (per-image rows plus a
/// `MEAN` row) and `<id>_triptych.png` files under `opts.out_dir`. Samples
/// that fail to load or score are recorded in `failures` and skipped.
pub fn evaluate_dataset(model: &UNetModel<f32>, manifest: &DatasetManifest, opts: &EvalOptions) -> Result<EvalOutcome> {
    if manifest.is_empty() {
        return Err(Error::Manifest("test manifest is empty".into()));
    }
    if model.config().out_channels != 1 {
        return Err(Error::Config("evaluation needs a single-output model".into()));
    }
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut inputs = Vec::new();
    for entry in &manifest.entries {
        let scored = load_sample(&entry.image, &entry.mask, opts.size).and_then(|s| {
            let probs = predict_probabilities(model, &s.image)?;
            let pred = binarize(&probs, opts.threshold)?;
            let rec = segmentation_metrics(s.id.clone(), &pred, &s.mask)?;
            if opts.triptychs {
                let path = opts.out_dir.join(format!("{}_triptych.png", s.id));
                render_triptych(&s.image, &s.mask, &pred, path)?;
            }
            Ok((rec, s.image))
        });
        match scored {
            Ok((rec, image)) => {
                records.push(rec);
                inputs.push(image);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", entry.stem);
                failures.push((entry.stem.clone(), e.to_string()));
            }
        }
    }
    let mean = mean_record(&records)
        .ok_or_else(|| Error::Manifest(format!("none of {} samples could be evaluated", manifest.len())))?;
    let fps = measure_fps(model, &inputs, opts.warmup)?;
    let csv_path = opts.out_dir.join("metrics.csv");
    write_metrics_csv(&records, &mean, &csv_path)?;
    Ok(EvalOutcome {
        records,
        mean,
        fps,
        failures,
        csv_path,
    })
}
