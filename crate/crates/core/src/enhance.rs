//! Even-odd class balancing with dihedral augmentation, and stratified
//! train/validation/test splitting.

use std::path::Path;

use image::GrayImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    create_dir, write_png, DatasetManifest, DatasetStage, DrawOrigin, TileEntry, TileRecord,
    DEFECTIVE, NON_DEFECTIVE,
};
use crate::error::{Error, Result};
use crate::preprocess::MANIFEST_FILE;

/// One of the eight symmetries of the square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum AugmentTransform {
    Identity = 0,
    Rot90 = 1,
    Rot180 = 2,
    Rot270 = 3,
    FlipHorizontal = 4,
    FlipVertical = 5,
    Transpose = 6,
    AntiTranspose = 7,
}

impl AugmentTransform {
    pub const ALL: [AugmentTransform; 8] = [
        Self::Identity,
        Self::Rot90,
        Self::Rot180,
        Self::Rot270,
        Self::FlipHorizontal,
        Self::FlipVertical,
        Self::Transpose,
        Self::AntiTranspose,
    ];

    /// The subset that keeps a non-square raster's width and height.
    pub const SHAPE_PRESERVING: [AugmentTransform; 4] = [
        Self::Identity,
        Self::Rot180,
        Self::FlipHorizontal,
        Self::FlipVertical,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn swaps_axes(self) -> bool {
        matches!(
            self,
            Self::Rot90 | Self::Rot270 | Self::Transpose | Self::AntiTranspose
        )
    }

    /// Transforms valid for a `width` x `height` raster.
    pub fn valid_for(width: u32, height: u32) -> &'static [AugmentTransform] {
        if width == height {
            &Self::ALL
        } else {
            &Self::SHAPE_PRESERVING
        }
    }

    pub fn apply(self, src: &GrayImage) -> Result<GrayImage> {
        let (w, h) = src.dimensions();
        if w != h && self.swaps_axes() {
            return Err(Error::ShapeChangingTransform {
                transform: self.id(),
                width: w,
                height: h,
            });
        }
        let (ow, oh) = if self.swaps_axes() { (h, w) } else { (w, h) };
        Ok(GrayImage::from_fn(ow, oh, |x, y| {
            let (sx, sy) = match self {
                Self::Identity => (x, y),
                Self::Rot90 => (y, h - 1 - x),
                Self::Rot180 => (w - 1 - x, h - 1 - y),
                Self::Rot270 => (w - 1 - y, x),
                Self::FlipHorizontal => (w - 1 - x, y),
                Self::FlipVertical => (x, h - 1 - y),
                Self::Transpose => (y, x),
                Self::AntiTranspose => (w - 1 - y, h - 1 - x),
            };
            *src.get_pixel(sx, sy)
        }))
    }
}

impl TryFrom<u8> for AugmentTransform {
    type Error = String;

    fn try_from(id: u8) -> std::result::Result<Self, String> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| format!("transform id {id} is not in 0..8"))
    }
}

impl From<AugmentTransform> for u8 {
    fn from(t: AugmentTransform) -> u8 {
        t.id()
    }
}

/// Applies `t` to the tile raster; everything else carries over.
pub fn augment_tile(tile: &TileRecord, t: AugmentTransform) -> Result<TileRecord> {
    Ok(TileRecord {
        pixels: t.apply(&tile.pixels)?,
        transform: Some(t.id()),
        ..tile.clone()
    })
}

/// One resampling step: which enhanced-dataset entry was drawn and how it was transformed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub draw_index: usize,
    pub source: usize,
    pub transform: AugmentTransform,
}

/// Draw schedule for balancing: even indices take a random defective tile,
/// odd indices a random non-defective tile, both with replacement, each with
/// an independent uniformly random valid transform. One RNG stream, seeded.
pub fn plan_balance(enhanced: &DatasetManifest, seed: u64) -> Result<Vec<Draw>> {
    if enhanced.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pool = |label| -> Vec<usize> {
        enhanced
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect()
    };
    let defective = pool(DEFECTIVE);
    let clean = pool(NON_DEFECTIVE);
    if defective.is_empty() {
        return Err(Error::EmptyClass("defective"));
    }
    if clean.is_empty() {
        return Err(Error::EmptyClass("non-defective"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..enhanced.len())
        .map(|draw_index| {
            let pool = if draw_index % 2 == 0 {
                &defective
            } else {
                &clean
            };
            let source = pool[rng.gen_range(0..pool.len())];
            let rect = enhanced.entries[source].rect;
            let valid = AugmentTransform::valid_for(rect.width(), rect.height());
            let transform = valid[rng.gen_range(0..valid.len())];
            Draw {
                draw_index,
                source,
                transform,
            }
        })
        .collect())
}

/// File name of a resampled tile: the tile name with a `_d{draw_index}` suffix.
pub fn balanced_filename(entry: &TileEntry, draw_index: usize) -> String {
    let stem = entry.file.strip_suffix(".png").unwrap_or(&entry.file);
    let stem = Path::new(stem)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{stem}_d{draw_index}.png")
}

/// Builds the balanced dataset `D` (same size as `enhanced`) in `out_dir`,
/// writing augmented tiles and `manifest.json`.
pub fn balance_dataset(
    enhanced: &DatasetManifest,
    seed: u64,
    out_dir: &Path,
    enhanced_manifest: Option<&str>,
) -> Result<DatasetManifest> {
    let plan = plan_balance(enhanced, seed)?;
    create_dir(out_dir)?;
    let entries: Vec<TileEntry> = plan
        .par_iter()
        .map(|draw| {
            let src = &enhanced.entries[draw.source];
            let pixels = draw.transform.apply(&enhanced.load_tile(src)?)?;
            let file = balanced_filename(src, draw.draw_index);
            write_png(&out_dir.join(&file), &pixels)?;
            Ok(TileEntry {
                file,
                origin: Some(DrawOrigin {
                    source: src.file.clone(),
                    transform: draw.transform.id(),
                    draw_index: draw.draw_index,
                }),
                ..src.clone()
            })
        })
        .collect::<Result<_>>()?;

    let mut manifest = DatasetManifest::new(
        DatasetStage::Balanced,
        enhanced.grid,
        entries,
        out_dir.to_path_buf(),
    );
    manifest.seed = Some(seed);
    manifest.source_manifest = enhanced_manifest.map(str::to_string);
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!(
                "split ratios must be nonnegative, got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

/// Per-class split sizes `(train, val, test)`; val and test round down.
pub fn split_sizes(class_size: usize, spec: &SplitSpec) -> (usize, usize, usize) {
    // the epsilon keeps exact products such as 11350 * 0.1 from flooring one short
    let cut = |r: f64| (class_size as f64 * r + 1e-9).floor() as usize;
    let val = cut(spec.val);
    let test = cut(spec.test);
    (class_size - val - test, val, test)
}

/// Stratified split: each class is shuffled with the seeded RNG and cut at the
/// ratio boundaries. Entries keep their relative order from `balanced`.
pub fn split_dataset(balanced: &DatasetManifest, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if balanced.len() < 10 {
        return Err(Error::Config(format!(
            "need at least 10 tiles to split, got {}",
            balanced.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut buckets: [Vec<usize>; 3] = Default::default();
    for label in [NON_DEFECTIVE, DEFECTIVE] {
        let mut idx: Vec<usize> = (0..balanced.len())
            .filter(|&i| balanced.entries[i].label == label)
            .collect();
        idx.shuffle(&mut rng);
        let (train, val, _) = split_sizes(idx.len(), spec);
        buckets[0].extend_from_slice(&idx[..train]);
        buckets[1].extend_from_slice(&idx[train..train + val]);
        buckets[2].extend_from_slice(&idx[train + val..]);
    }

    let make = |mut idx: Vec<usize>, stage: DatasetStage, name: &'static str| {
        if idx.is_empty() {
            return Err(Error::EmptySplit { split: name });
        }
        idx.sort_unstable();
        let entries = idx.iter().map(|&i| balanced.entries[i].clone()).collect();
        let mut m = DatasetManifest::new(stage, balanced.grid, entries, balanced.root.clone());
        m.seed = Some(spec.seed);
        m.source_manifest = Some(MANIFEST_FILE.to_string());
        Ok(m)
    };
    let [train, val, test] = buckets;
    Ok(Splits {
        train: make(train, DatasetStage::Train, "train")?,
        val: make(val, DatasetStage::Val, "validation")?,
        test: make(test, DatasetStage::Test, "test")?,
    })
}
