//! Command-line front end: `augment`, `train`, `eval`, `infer`, `report`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use image::imageops::{self, FilterType};

use crate::config::{default_of, RunConfig, DEFAULTS};
use crate::data::{
    augment_dataset, image_size, load_image, load_mask, mask_to_luma, save_png, split_train_val, AugmentOptions,
    DatasetManifest, IMAGE_EXTENSIONS, MASK_EXTENSIONS,
};
use crate::error::{Error, Result};
use crate::metrics::{binarize, evaluate_dataset, EvalOptions};
use crate::report::{
    compose_report, enrich_via_external, findings_from_masks, HttpGenerator, HttpGeneratorConfig, Lesion, Templates,
    TextGenerator,
};
use crate::train::{load_checkpoint, train};
use crate::unet::{predict_probabilities, UNetModel};

fn key_arg(key: &'static str, help: &'static str) -> Arg {
    let default = default_of(key).unwrap_or_else(|| panic!("no default for {key}"));
    let arg = Arg::new(key).long(key.replace('_', "-")).help(help).value_name("VALUE");
    if default.is_empty() {
        arg
    } else {
        arg.default_value(default)
    }
}

fn path_arg(id: &'static str, help: &'static str) -> Arg {
    Arg::new(id).long(id).value_name("PATH").value_parser(clap::value_parser!(PathBuf)).help(help)
}

fn config_arg() -> Arg {
    path_arg("config", "key=value settings file; flags override it")
}

fn model_args() -> Vec<Arg> {
    vec![
        key_arg("in_channels", "Input image channels"),
        key_arg("out_channels", "Output mask channels"),
        key_arg("base_width", "Channels of the first encoder stage"),
        key_arg("depth", "Number of down-sampling stages"),
    ]
}

pub fn command() -> Command {
    Command::new("drseg")
        .about("Fundus lesion segmentation: augment, train, evaluate, infer and report")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("augment")
                .about("Write resized originals plus flipped and rotated copies of every pair")
                .arg(path_arg("data", "Dataset root with images/ and masks/").required(true))
                .arg(path_arg("out", "Output root; images/ and masks/ are created").required(true))
                .arg(Arg::new("no-augment").long("no-augment").action(ArgAction::SetTrue).help("Only write resized originals"))
                .arg(key_arg("size", "Working resolution HxW"))
                .arg(key_arg("angle", "Rotation angle in degrees"))
                .arg(config_arg()),
        )
        .subcommand(
            Command::new("train")
                .about("Train a U-Net with Dice + BCE and keep the best validation checkpoint")
                .arg(path_arg("data", "Dataset root with images/ and masks/").required(true))
                .arg(path_arg("ckpt", "Checkpoint written on every validation improvement").required(true))
                .arg(config_arg())
                .args(model_args())
                .arg(key_arg("epochs", "Training epochs"))
                .arg(key_arg("batch_size", "Samples per optimizer step"))
                .arg(key_arg("learning_rate", "Initial Adam learning rate"))
                .arg(key_arg("beta1", "Adam first-moment decay"))
                .arg(key_arg("beta2", "Adam second-moment decay"))
                .arg(key_arg("adam_eps", "Adam denominator epsilon"))
                .arg(key_arg("scheduler_factor", "Learning-rate factor on plateau"))
                .arg(key_arg("scheduler_patience", "Plateau epochs before a reduction"))
                .arg(key_arg("val_ratio", "Fraction of pairs held out for validation"))
                .arg(key_arg("seed", "Seed for initialization, split and shuffling"))
                .arg(key_arg("size", "Working resolution HxW")),
        )
        .subcommand(
            Command::new("eval")
                .about("Per-image metrics CSV with a MEAN row, triptychs and an FPS line")
                .arg(path_arg("data", "Test dataset root with images/ and masks/").required(true))
                .arg(path_arg("ckpt", "Checkpoint to evaluate").required(true))
                .arg(path_arg("out", "Directory for metrics.csv and triptychs").required(true))
                .arg(Arg::new("no-triptychs").long("no-triptychs").action(ArgAction::SetTrue).help("Skip triptych images"))
                .arg(key_arg("threshold", "Probability threshold for foreground"))
                .arg(key_arg("size", "Working resolution HxW"))
                .arg(key_arg("warmup", "Untimed forward passes before FPS timing"))
                .arg(config_arg()),
        )
        .subcommand(
            Command::new("infer")
                .about("Write one binary mask PNG per input image, at the input's own size")
                .arg(path_arg("ckpt", "Checkpoint to run").required(true))
                .arg(path_arg("input", "Image file or directory of images").required(true))
                .arg(path_arg("out", "Directory for <stem>_mask.png files").required(true))
                .arg(key_arg("threshold", "Probability threshold for foreground"))
                .arg(key_arg("size", "Working resolution HxW"))
                .arg(config_arg()),
        )
        .subcommand(
            Command::new("report")
                .about("Compose a referral report from lesion masks (<lesion>.png) and a grade")
                .arg(path_arg("masks", "Directory holding <lesion>.{png,tif} masks").required(true))
                .arg(
                    Arg::new("grade")
                        .long("grade")
                        .required(true)
                        .value_parser(clap::value_parser!(u8).range(0..=4))
                        .help("Diabetic retinopathy grade 0-4"),
                )
                .arg(path_arg("templates", "Phrase overrides in key=value form"))
                .arg(path_arg("block", "Where to write the findings block").default_value("findings.txt"))
                .arg(key_arg("presence_threshold", "Foreground fraction at which a lesion counts as present"))
                .arg(key_arg("llm_endpoint", "Chat-completions URL for optional text enrichment"))
                .arg(key_arg("llm_model", "Model name sent to the endpoint"))
                .arg(key_arg("llm_token_env", "Environment variable holding the bearer token"))
                .arg(key_arg("llm_timeout_secs", "Enrichment timeout in seconds"))
                .arg(config_arg()),
        )
}

/// Defaults, then `--config`, then explicitly given flags.
fn run_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        cfg.apply_file(path)?;
    }
    for (key, _) in DEFAULTS {
        let given = m.try_contains_id(key).unwrap_or(false) && m.value_source(key) == Some(ValueSource::CommandLine);
        if given {
            cfg.apply_flag(key, m.get_one::<String>(key).expect("string flag"))?;
        }
    }
    for line in cfg.describe() {
        log::info!("setting {line}");
    }
    Ok(cfg)
}

fn path<'a>(m: &'a ArgMatches, id: &str) -> &'a Path {
    m.get_one::<PathBuf>(id).expect("required by clap")
}

fn load_model(ckpt: &Path) -> Result<UNetModel<f32>> {
    let ck = load_checkpoint::<f32>(ckpt)?;
    log::info!("loaded {} (epoch {}, best val_loss {})", ckpt.display(), ck.epoch, ck.best_val_loss);
    ck.to_model()
}

fn cmd_augment(m: &ArgMatches) -> Result<()> {
    let cfg = run_config(m)?;
    let manifest = DatasetManifest::scan(path(m, "data"))?;
    let opts = AugmentOptions {
        enabled: !m.get_flag("no-augment"),
        size: cfg.size()?,
        angle_deg: cfg.get("angle")?,
    };
    println!("{} pairs read", manifest.len());
    let out = augment_dataset(&manifest, path(m, "out"), &opts)?;
    println!("{} pairs written", out.len());
    Ok(())
}

fn cmd_train(m: &ArgMatches) -> Result<()> {
    let cfg = run_config(m)?;
    let unet = cfg.unet()?;
    let tc = cfg.train(Some(path(m, "ckpt").to_path_buf()))?;
    let size = cfg.size()?;
    let mult = unet.spatial_multiple();
    if size.0 % mult != 0 || size.1 % mult != 0 {
        return Err(Error::Config(format!("size {}x{} must be multiples of {mult} (2^depth)", size.0, size.1)));
    }
    let val_ratio: f64 = cfg.get("val_ratio")?;
    let manifest = DatasetManifest::scan(path(m, "data"))?;
    let (tr, va) = split_train_val(&manifest, 1.0 - val_ratio, tc.seed)?;
    let (train_set, val_set) = (tr.load_all(size)?, va.load_all(size)?);
    println!("{} training pairs, {} validation pairs", train_set.len(), val_set.len());
    let mut model = UNetModel::new(unet, tc.seed)?;
    let summary = train(&mut model, &train_set, &val_set, &tc, |r| println!("{r}"))?;
    println!("{summary}");
    Ok(())
}

fn cmd_eval(m: &ArgMatches) -> Result<()> {
    let cfg = run_config(m)?;
    let model = load_model(path(m, "ckpt"))?;
    let manifest = DatasetManifest::scan(path(m, "data"))?;
    let opts = EvalOptions {
        threshold: cfg.get("threshold")?,
        size: cfg.size()?,
        out_dir: path(m, "out").to_path_buf(),
        triptychs: !m.get_flag("no-triptychs"),
        warmup: cfg.get("warmup")?,
    };
    let outcome = evaluate_dataset(&model, &manifest, &opts)?;
    for r in &outcome.records {
        println!("{r}");
    }
    println!("{}", outcome.mean);
    println!("fps={:.3} mean_ms={:.3} frames={}", outcome.fps.fps, outcome.fps.mean_ms, outcome.fps.frames);
    for (stem, e) in &outcome.failures {
        eprintln!("failed {stem}: {e}");
    }
    println!(
        "{} evaluated, {} failed, csv at {}",
        outcome.records.len(),
        outcome.failures.len(),
        outcome.csv_path.display()
    );
    Ok(())
}

fn list_images(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Manifest(format!("no images in {}", input.display())));
    }
    Ok(out)
}

fn cmd_infer(m: &ArgMatches) -> Result<()> {
    let cfg = run_config(m)?;
    let model = load_model(path(m, "ckpt"))?;
    let threshold: f64 = cfg.get("threshold")?;
    let size = cfg.size()?;
    let out = path(m, "out");
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for img_path in list_images(path(m, "input"))? {
        let (h, w) = image_size(&img_path)?;
        let x = load_image(&img_path, size)?;
        let pred = binarize(&predict_probabilities(&model, &x)?, threshold)?;
        let mut mask = mask_to_luma(&pred);
        if (mask.height() as usize, mask.width() as usize) != (h, w) {
            mask = imageops::resize(&mask, w as u32, h as u32, FilterType::Nearest);
        }
        let stem = img_path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let dst = out.join(format!("{stem}_mask.png"));
        save_png(&mask, &dst)?;
        println!("{} -> {}", img_path.display(), dst.display());
    }
    Ok(())
}

fn find_mask(dir: &Path, lesion: Lesion) -> Option<PathBuf> {
    MASK_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{}.{ext}", lesion.key())))
        .find(|p| p.is_file())
}

fn cmd_report(m: &ArgMatches) -> Result<()> {
    let cfg = run_config(m)?;
    let dir = path(m, "masks");
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "mask directory not found")));
    }
    let mut masks = BTreeMap::new();
    for lesion in Lesion::ALL {
        if let Some(p) = find_mask(dir, lesion) {
            masks.insert(lesion, load_mask(&p, image_size(&p)?)?);
        }
    }
    let grade = *m.get_one::<u8>("grade").expect("required by clap");
    let findings = findings_from_masks(&masks, cfg.get("presence_threshold")?, grade)?;
    let templates = match m.get_one::<PathBuf>("templates") {
        Some(p) => Templates::from_file(p)?,
        None => Templates::default(),
    };
    let base = compose_report(&findings, &templates)?;
    let endpoint = cfg.raw("llm_endpoint");
    let client = (!endpoint.is_empty()).then(|| {
        HttpGenerator::new(HttpGeneratorConfig {
            endpoint: endpoint.to_string(),
            model: cfg.raw("llm_model").to_string(),
            token_env: cfg.raw("llm_token_env").to_string(),
        })
    });
    let timeout = Duration::from_secs_f64(cfg.get("llm_timeout_secs")?);
    let report = enrich_via_external(&findings, &base, client.as_ref().map(|c| c as &dyn TextGenerator), timeout);
    print!("{}", report.render());
    let block = path(m, "block");
    fs::write(block, report.structured_block()).map_err(|e| Error::io(block, e))?;
    Ok(())
}

/// Parses `args` (program name first) and runs the chosen command. Returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match matches.subcommand() {
        Some(("augment", m)) => cmd_augment(m),
        Some(("train", m)) => cmd_train(m),
        Some(("eval", m)) => cmd_eval(m),
        Some(("infer", m)) => cmd_infer(m),
        Some(("report", m)) => cmd_report(m),
        _ => unreachable!("subcommand_required"),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
