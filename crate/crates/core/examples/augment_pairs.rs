//! Writes a small synthetic dataset, then its four-fold augmentation.
//!
//! cargo run --example augment_pairs -- [out_dir]

use std::path::PathBuf;

use drseg::data::{augment_dataset, mask_to_luma, save_png, tensor_to_rgb, AugmentOptions, DatasetManifest};
use drseg::synthetic::{synthetic_pairs, SyntheticSpec};

fn main() -> drseg::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("drseg_augment_example"));
    let src = root.join("source");
    for d in ["images", "masks"] {
        std::fs::create_dir_all(src.join(d)).expect("create source dirs");
    }
    let spec = SyntheticSpec { count: 3, height: 96, width: 96, ..Default::default() };
    for p in synthetic_pairs(&spec, 21) {
        save_png(&tensor_to_rgb(&p.image), src.join("images").join(format!("{}.png", p.id)))?;
        save_png(&mask_to_luma(&p.mask), src.join("masks").join(format!("{}.png", p.id)))?;
    }
    let manifest = DatasetManifest::scan(&src)?;
    let opts = AugmentOptions { size: (64, 64), ..Default::default() };
    let out = augment_dataset(&manifest, root.join("augmented"), &opts)?;
    println!("{} pairs -> {} pairs in {}", manifest.len(), out.len(), root.join("augmented").display());
    for stem in out.stems() {
        println!("  {stem}");
    }
    Ok(())
}
