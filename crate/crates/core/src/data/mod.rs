//! Image/mask pairs on disk and in memory.
//!
//! Layout: `<root>/images/<stem>.{png,jpg,jpeg,bmp}` paired with
//! `<root>/masks/<stem>.{png,tif,tiff}` by identical file stem.

mod augment;
mod transform;

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, ImageReader, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub use augment::{augment_dataset, AugmentOptions, Variant};
pub use transform::{hflip, rotate, vflip};

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];
pub const MASK_EXTENSIONS: &[&str] = &["png", "tif", "tiff"];

/// Masks are foreground where the 8-bit luminance is at least this.
pub const MASK_THRESHOLD: u8 = 128;

/// Default working resolution `(height, width)`.
pub const DEFAULT_SIZE: (usize, usize) = (512, 512);

/// One normalized fundus image (`1 × 3 × H × W`, values in `[0, 1]`) and its
/// binary lesion mask (`1 × 1 × H × W`, values in `{0, 1}`).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl SamplePair {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let (i, m) = (image.shape(), mask.shape());
        if i.n != 1 || m.n != 1 || m.c != 1 || (i.h, i.w) != (m.h, m.w) {
            return Err(Error::dim(
                "sample_pair",
                format!("image {i} and mask {m} must be (1, c, H, W) and (1, 1, H, W)"),
            ));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("sample_pair", "mask must be binary"));
        }
        Ok(SamplePair {
            id: id.into(),
            image,
            mask,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.mask.shape();
        (s.h, s.w)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub stem: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Image/mask paths matched by stem, sorted by stem.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| exts.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.push((stem.to_string(), path.clone()));
        }
    }
    out.sort();
    Ok(out)
}

impl DatasetManifest {
    /// Scans `<root>/images` and `<root>/masks`.
    pub fn scan(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let images = list_files(&root.join("images"), IMAGE_EXTENSIONS)?;
        let masks = list_files(&root.join("masks"), MASK_EXTENSIONS)?;
        Self::pair(images, masks)
    }

    fn pair(images: Vec<(String, PathBuf)>, masks: Vec<(String, PathBuf)>) -> Result<Self> {
        for w in images.windows(2).chain(masks.windows(2)) {
            if w[0].0 == w[1].0 {
                return Err(Error::Manifest(format!("duplicate stem {:?}", w[0].0)));
            }
        }
        if images.len() != masks.len() {
            return Err(Error::Manifest(format!(
                "{} images but {} masks",
                images.len(),
                masks.len()
            )));
        }
        let entries = images
            .into_iter()
            .zip(masks)
            .map(|((stem, image), (mstem, mask))| {
                if stem != mstem {
                    Err(Error::Manifest(format!("image {stem:?} has no mask (next mask is {mstem:?})")))
                } else {
                    Ok(ManifestEntry { stem, image, mask })
                }
            })
            .collect::<Result<_>>()?;
        Ok(DatasetManifest { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stems(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.stem.as_str()).collect()
    }

    pub fn load_all(&self, size: (usize, usize)) -> Result<Vec<SamplePair>> {
        self.entries
            .iter()
            .map(|e| load_sample(&e.image, &e.mask, size).map(|mut p| {
                p.id = e.stem.clone();
                p
            }))
            .collect()
    }
}

/// Seeded shuffle, then the first `round(ratio · n)` entries train.
pub fn split_train_val(
    manifest: &DatasetManifest,
    ratio: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let n = manifest.len();
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "ratio {ratio} on {n} pairs leaves one side of the split empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| {
        let mut entries: Vec<_> = idx.iter().map(|&i| manifest.entries[i].clone()).collect();
        entries.sort_by(|a, b| a.stem.cmp(&b.stem));
        DatasetManifest { entries }
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Image {
            path: path.to_path_buf(),
            detail: "decoded image has zero size".into(),
        });
    }
    Ok(img)
}

/// `(height, width)` of an image file, read from its header.
pub fn image_size(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let (w, h) = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .into_dimensions()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    Ok((h as usize, w as usize))
}

/// Reads an RGB image, resizes it bilinearly to `size` and scales to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>, size: (usize, usize)) -> Result<Tensor<f32>> {
    let rgb = decode(path.as_ref())?.to_rgb8();
    let (h, w) = size;
    let rgb = if (rgb.height() as usize, rgb.width() as usize) == size {
        rgb
    } else {
        imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle)
    };
    Ok(rgb_to_tensor(&rgb))
}

/// Reads a mask (collapsed to luminance), resizes nearest-neighbor and
/// thresholds at [`MASK_THRESHOLD`].
pub fn load_mask(path: impl AsRef<Path>, size: (usize, usize)) -> Result<Tensor<f32>> {
    let luma = decode(path.as_ref())?.to_luma8();
    let (h, w) = size;
    let luma = if (luma.height() as usize, luma.width() as usize) == size {
        luma
    } else {
        imageops::resize(&luma, w as u32, h as u32, FilterType::Nearest)
    };
    Ok(luma_to_mask(&luma))
}

pub fn load_sample(image_path: impl AsRef<Path>, mask_path: impl AsRef<Path>, size: (usize, usize)) -> Result<SamplePair> {
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::Config("target size must be positive".into()));
    }
    let image_path = image_path.as_ref();
    let id = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let image = load_image(image_path, size)?;
    let mask = load_mask(mask_path, size)?;
    SamplePair::new(id, image, mask)
}

/// Channels-first float tensor from interleaved 8-bit RGB.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)
}

pub fn luma_to_mask(img: &GrayImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        if raw[y * w + x] >= MASK_THRESHOLD {
            1.0
        } else {
            0.0
        }
    })
}

/// Lossless PNG output; I/O failures keep their path.
pub fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: impl AsRef<Path>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let path = path.as_ref();
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                detail: other.to_string(),
            },
        })
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Batch item 0 of a `(n, 3, H, W)` or `(n, 1, H, W)` tensor as 8-bit RGB.
pub fn tensor_to_rgb(t: &Tensor<f32>) -> RgbImage {
    let s = t.shape();
    RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let px = |c: usize| to_u8(t.at(0, c.min(s.c - 1), y as usize, x as usize));
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Plane `(0, 0)` as white-on-black luminance; values `>= 0.5` are foreground.
pub fn mask_to_luma(t: &Tensor<f32>) -> GrayImage {
    let s = t.shape();
    GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Luma([if t.at(0, 0, y as usize, x as usize) >= 0.5 { 255 } else { 0 }])
    })
}
