//! Background cropping, annotation remapping and grid tiling of source images
//! into the labelled tile dataset.

mod canny;

use std::collections::HashSet;
use std::path::Path;

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use canny::{canny, CannyParams};

use crate::data::{
    create_dir, tile_filename, write_png, AnnotatedImage, DatasetManifest, DatasetStage, DefectBox,
    GridSpec, Rect, TileEntry, TileRecord, DEFECTIVE, NON_DEFECTIVE,
};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Crop rectangle in original-image pixels, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl CropBox {
    pub fn full(width: u32, height: u32) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn as_rect(&self) -> Rect {
        Rect::new(self.x0, self.y0, self.x1, self.y1)
    }
}

/// Bounding rectangle of all Canny edge pixels; the full image when there are none.
pub fn compute_crop_box(image: &AnnotatedImage, params: &CannyParams) -> CropBox {
    crop_box_of(&image.pixels, params)
}

pub fn crop_box_of(pixels: &GrayImage, params: &CannyParams) -> CropBox {
    let (w, h) = pixels.dimensions();
    let edges = canny(pixels, params);
    let mut bbox: Option<CropBox> = None;
    for (i, _) in edges.iter().enumerate().filter(|(_, e)| **e) {
        let (x, y) = ((i % w as usize) as u32, (i / w as usize) as u32);
        let b = bbox.get_or_insert(CropBox {
            x0: x,
            y0: y,
            x1: x + 1,
            y1: y + 1,
        });
        b.x0 = b.x0.min(x);
        b.y0 = b.y0.min(y);
        b.x1 = b.x1.max(x + 1);
        b.y1 = b.y1.max(y + 1);
    }
    bbox.unwrap_or_else(|| CropBox::full(w, h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cropped {
    pub image: AnnotatedImage,
    /// Defects that fell entirely outside the crop.
    pub dropped_defects: usize,
}

/// Crops to `crop` and moves annotations to the new origin, clipping boxes
/// that straddle the crop border and dropping those left with no area.
pub fn crop_and_remap(image: &AnnotatedImage, crop: CropBox) -> Cropped {
    let pixels =
        image::imageops::crop_imm(&image.pixels, crop.x0, crop.y0, crop.width(), crop.height())
            .to_image();
    let bounds = crop.as_rect();
    let mut dropped = 0;
    let mut defects = Vec::with_capacity(image.defects.len());
    for d in &image.defects {
        match d.rect().intersection(&bounds) {
            Some(r) => defects.push(DefectBox::from_rect(
                Rect::new(
                    r.x_min - crop.x0,
                    r.y_min - crop.y0,
                    r.x_max - crop.x0,
                    r.y_max - crop.y0,
                ),
                d.kind.clone(),
            )),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!(
            "image `{}`: {dropped} defect(s) outside the crop box were dropped",
            image.image_id
        );
    }
    Cropped {
        image: AnnotatedImage::new(image.image_id.clone(), pixels, defects),
        dropped_defects: dropped,
    }
}

/// Pixel rectangle of cell (`col`, `row`). Floor arithmetic, so remainder
/// pixels land in the last row and column and the cells partition the image.
pub fn tile_rect(width: u32, height: u32, grid: GridSpec, col: u32, row: u32) -> Rect {
    let cut = |i: u32, size: u32, parts: u32| (i as u64 * size as u64 / parts as u64) as u32;
    Rect::new(
        cut(col, width, grid.m),
        cut(row, height, grid.n),
        cut(col + 1, width, grid.m),
        cut(row + 1, height, grid.n),
    )
}

pub fn tile_overlaps_defect(tile: &Rect, defect: &DefectBox) -> bool {
    tile.overlaps(&defect.rect())
}

/// Splits an already-cropped image into `m*n` labelled tiles, columns outer
/// and rows inner.
pub fn tile_and_label(image: &AnnotatedImage, grid: GridSpec) -> Vec<TileRecord> {
    let (w, h) = image.pixels.dimensions();
    grid.cells_iter()
        .map(|(col, row)| {
            let rect = tile_rect(w, h, grid, col, row);
            let defective = image.defects.iter().any(|d| tile_overlaps_defect(&rect, d));
            TileRecord {
                image_id: image.image_id.clone(),
                col,
                row,
                rect,
                label: if defective { DEFECTIVE } else { NON_DEFECTIVE },
                pixels: image::imageops::crop_imm(
                    &image.pixels,
                    rect.x_min,
                    rect.y_min,
                    rect.width(),
                    rect.height(),
                )
                .to_image(),
                transform: None,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub grid: GridSpec,
    pub canny: CannyParams,
}

/// Crops, tiles and labels every source image, writing the tiles and a
/// manifest (`manifest.json`) into `out_dir`. The result has exactly
/// `N*m*n` entries in source order.
pub fn preprocess_dataset(
    source: &[AnnotatedImage],
    config: &PreprocessConfig,
    out_dir: &Path,
    source_manifest: Option<&str>,
) -> Result<DatasetManifest> {
    let grid = config.grid;
    let mut ids = HashSet::new();
    for img in source {
        img.validate()?;
        if !ids.insert(img.image_id.as_str()) {
            return Err(Error::DuplicateImageId(img.image_id.clone()));
        }
    }
    if source.is_empty() {
        log::warn!("source dataset is empty; writing an empty tile manifest");
    }
    create_dir(out_dir)?;

    let per_image: Vec<Vec<TileEntry>> = source
        .par_iter()
        .map(|img| {
            let crop = compute_crop_box(img, &config.canny);
            let cropped = crop_and_remap(img, crop).image;
            if cropped.width() < grid.m || cropped.height() < grid.n {
                return Err(Error::Config(format!(
                    "image `{}` crops to {}x{}, too small for a {}x{} grid",
                    img.image_id,
                    cropped.width(),
                    cropped.height(),
                    grid.m,
                    grid.n
                )));
            }
            tile_and_label(&cropped, grid)
                .into_iter()
                .map(|tile| {
                    let file = tile_filename(tile.label, &tile.image_id, tile.col, tile.row)?;
                    write_png(&out_dir.join(&file), &tile.pixels)?;
                    Ok(TileEntry {
                        file,
                        label: tile.label,
                        image_id: tile.image_id,
                        col: tile.col,
                        row: tile.row,
                        rect: tile.rect,
                        origin: None,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let entries: Vec<TileEntry> = per_image.into_iter().flatten().collect();
    debug_assert_eq!(entries.len(), source.len() * grid.cells());
    let mut manifest =
        DatasetManifest::new(DatasetStage::Enhanced, grid, entries, out_dir.to_path_buf());
    manifest.source_manifest = source_manifest.map(str::to_string);
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;
    use proptest::prelude::*;

    fn black(w: u32, h: u32) -> GrayImage {
        GrayImage::new(w, h)
    }

    #[test]
    fn black_image_crops_to_full_frame() {
        let img = AnnotatedImage::new("a", black(120, 80), vec![]);
        assert_eq!(
            compute_crop_box(&img, &CannyParams::default()),
            CropBox::full(120, 80)
        );
    }

    #[test]
    fn white_rectangle_crop_matches_nonzero_bbox() {
        let mut px = black(500, 400);
        for y in 100..300 {
            for x in 100..400 {
                px.put_pixel(x, y, Luma([255]));
            }
        }
        // oracle: bounding box of pixels with intensity > 0
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for (x, y, p) in px.enumerate_pixels() {
            if p[0] > 0 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        let img = AnnotatedImage::new("a", px, vec![]);
        let c = compute_crop_box(&img, &CannyParams::default());
        for (got, want) in [(c.x0, x0), (c.y0, y0), (c.x1, x1), (c.y1, y1)] {
            assert!(got.abs_diff(want) <= 2, "{c:?} vs ({x0},{y0},{x1},{y1})");
        }
    }

    #[test]
    fn crop_remaps_defects() {
        let img = AnnotatedImage::new(
            "a",
            black(300, 200),
            vec![
                DefectBox::new(150, 80, 170, 95),
                DefectBox::new(10, 60, 40, 70),
                DefectBox::new(90, 40, 110, 60).with_kind("dirt"),
            ],
        );
        let out = crop_and_remap(
            &img,
            CropBox {
                x0: 100,
                y0: 50,
                x1: 250,
                y1: 150,
            },
        );
        assert_eq!(out.image.width(), 150);
        assert_eq!(out.image.height(), 100);
        assert_eq!(out.dropped_defects, 1);
        assert_eq!(
            out.image.defects,
            vec![
                DefectBox::new(50, 30, 70, 45),
                DefectBox::new(0, 0, 10, 10).with_kind("dirt"),
            ]
        );
    }

    #[test]
    fn full_crop_is_identity() {
        let mut px = black(64, 48);
        px.put_pixel(5, 5, Luma([17]));
        let img = AnnotatedImage::new(
            "a",
            px,
            vec![
                DefectBox::new(0, 0, 64, 48),
                DefectBox::new(3, 4, 5, 6).with_kind("scratch"),
            ],
        );
        let out = crop_and_remap(&img, CropBox::full(64, 48));
        assert_eq!(out.image, img);
        assert_eq!(out.dropped_defects, 0);
    }

    #[test]
    fn tile_rect_examples() {
        let g = GridSpec { m: 10, n: 10 };
        assert_eq!(tile_rect(1000, 1000, g, 0, 0), Rect::new(0, 0, 100, 100));
        assert_eq!(
            tile_rect(1000, 1000, g, 9, 9),
            Rect::new(900, 900, 1000, 1000)
        );
        // floor(9*101/10) = 90, floor(10*101/10) = 101; floor(0*7/7)=0, floor(7/7)=1
        assert_eq!(
            tile_rect(101, 7, GridSpec { m: 10, n: 7 }, 9, 0),
            Rect::new(90, 0, 101, 1)
        );
    }

    #[test]
    fn tiling_labels() {
        let g = GridSpec::default();
        let clean = AnnotatedImage::new("a", black(200, 100), vec![]);
        let tiles = tile_and_label(&clean, g);
        assert_eq!(tiles.len(), 100);
        assert!(tiles.iter().all(|t| t.label == 0));
        assert_eq!((tiles[1].col, tiles[1].row), (0, 1));
        assert_eq!((tiles[10].col, tiles[10].row), (1, 0));

        let full = AnnotatedImage::new("a", black(200, 100), vec![DefectBox::new(0, 0, 200, 100)]);
        assert!(tile_and_label(&full, g).iter().all(|t| t.label == 1));

        let one = AnnotatedImage::new(
            "a",
            black(1000, 1000),
            vec![DefectBox::new(90, 90, 110, 110)],
        );
        let flagged: Vec<(u32, u32)> = tile_and_label(&one, g)
            .iter()
            .filter(|t| t.label == 1)
            .map(|t| (t.col, t.row))
            .collect();
        assert_eq!(flagged, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn preprocess_counts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PreprocessConfig {
            grid: GridSpec { m: 2, n: 2 },
            ..Default::default()
        };
        let img = AnnotatedImage::new("only", black(40, 40), vec![DefectBox::new(0, 0, 5, 5)]);
        let m = preprocess_dataset(&[img], &cfg, dir.path(), None).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.counts.defective, 1);
        assert!(dir.path().join("1_only_0_0.png").exists());
        assert!(dir.path().join(MANIFEST_FILE).exists());

        let empty = preprocess_dataset(&[], &cfg, &dir.path().join("e"), None).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn preprocess_rejects_duplicate_ids() {
        let dir = tempfile::tempdir().unwrap();
        let img = AnnotatedImage::new("dup", black(40, 40), vec![]);
        let err = preprocess_dataset(
            &[img.clone(), img],
            &PreprocessConfig::default(),
            dir.path(),
            None,
        );
        assert!(matches!(err, Err(Error::DuplicateImageId(_))));
    }

    fn raster_contains(r: &Rect, x: u32, y: u32) -> bool {
        x >= r.x_min && x < r.x_max && y >= r.y_min && y < r.y_max
    }

    proptest! {
        #[test]
        fn tiles_partition_the_image(w in 1u32..300, h in 1u32..300, m in 1u32..12, n in 1u32..12) {
            let g = GridSpec { m, n };
            let rects: Vec<Rect> = g.cells_iter().map(|(c, r)| tile_rect(w, h, g, c, r)).collect();
            let area: u64 = rects.iter().map(Rect::area).sum();
            prop_assert_eq!(area, w as u64 * h as u64);
            for (i, a) in rects.iter().enumerate() {
                prop_assert!(Rect::new(0, 0, w, h).contains_rect(a));
                for b in &rects[i + 1..] {
                    prop_assert!(!a.overlaps(b));
                }
            }
        }

        #[test]
        fn labels_match_pixel_oracle(
            w in 10u32..80, h in 10u32..80, m in 1u32..6, n in 1u32..6,
            boxes in proptest::collection::vec((0u32..80, 0u32..80, 1u32..20, 1u32..20), 0..4),
        ) {
            let defects: Vec<DefectBox> = boxes
                .into_iter()
                .map(|(x, y, bw, bh)| {
                    let x = x % w;
                    let y = y % h;
                    DefectBox::new(x, y, (x + bw).min(w), (y + bh).min(h))
                })
                .collect();
            let img = AnnotatedImage::new("p", black(w, h), defects.clone());
            for t in tile_and_label(&img, GridSpec { m, n }) {
                let hit = (t.rect.y_min..t.rect.y_max).any(|y| {
                    (t.rect.x_min..t.rect.x_max)
                        .any(|x| defects.iter().any(|d| raster_contains(&d.rect(), x, y)))
                });
                prop_assert_eq!(t.label == 1, hit);
            }
        }

        #[test]
        fn remap_preserves_inner_defect_size(
            x0 in 0u32..50, y0 in 0u32..50, dx in 0u32..40, dy in 0u32..40, dw in 1u32..30, dh in 1u32..30,
        ) {
            let crop = CropBox { x0, y0, x1: x0 + 100, y1: y0 + 100 };
            let d = DefectBox::new(x0 + dx, y0 + dy, x0 + dx + dw, y0 + dy + dh);
            let img = AnnotatedImage::new("p", black(200, 200), vec![d.clone()]);
            let out = crop_and_remap(&img, crop);
            let r = out.image.defects[0].rect();
            prop_assert_eq!((r.width(), r.height()), (d.rect().width(), d.rect().height()));
        }
    }
}
