use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{
    hflip, load_sample, mask_to_luma, rotate, save_png, tensor_to_rgb, vflip, DatasetManifest, SamplePair,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentOptions {
    /// When false only the resized original is written.
    pub enabled: bool,
    pub size: (usize, usize),
    pub angle_deg: f64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            enabled: true,
            size: super::DEFAULT_SIZE,
            angle_deg: 45.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Original,
    HFlip,
    VFlip,
    Rotate,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Original, Variant::HFlip, Variant::VFlip, Variant::Rotate];

    pub fn suffix(self) -> &'static str {
        match self {
            Variant::Original => "orig",
            Variant::HFlip => "hflip",
            Variant::VFlip => "vflip",
            Variant::Rotate => "rot",
        }
    }

    pub fn apply(self, pair: &SamplePair, angle_deg: f64) -> SamplePair {
        match self {
            Variant::Original => pair.clone(),
            Variant::HFlip => hflip(pair),
            Variant::VFlip => vflip(pair),
            Variant::Rotate => rotate(pair, angle_deg),
        }
    }
}

/// Writes `<stem>_<variant>.png` under `<out>/images` and `<out>/masks` for
/// every source pair and returns the manifest of what was written.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    out_dir: impl AsRef<Path>,
    opts: &AugmentOptions,
) -> Result<DatasetManifest> {
    let out = out_dir.as_ref();
    let (img_dir, mask_dir) = (out.join("images"), out.join("masks"));
    for d in [&img_dir, &mask_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let variants: &[Variant] = if opts.enabled { &Variant::ALL } else { &Variant::ALL[..1] };
    for entry in &manifest.entries {
        let pair = load_sample(&entry.image, &entry.mask, opts.size)?;
        for &v in variants {
            let aug = v.apply(&pair, opts.angle_deg);
            let name = format!("{}_{}.png", entry.stem, v.suffix());
            let (ip, mp) = (img_dir.join(&name), mask_dir.join(&name));
            save_png(&tensor_to_rgb(&aug.image), &ip)?;
            save_png(&mask_to_luma(&aug.mask), &mp)?;
        }
    }
    DatasetManifest::scan(out)
}
