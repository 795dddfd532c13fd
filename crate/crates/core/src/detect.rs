//! Sliding-window inspection: tile a target image on the training grid,
//! score every tile, and flag those above the threshold as pseudo bounding
//! boxes in original-image coordinates.

use std::io::Write;
use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AnnotatedImage, GridSpec, Rect, TileRecord};
use crate::error::{Error, Result};
use crate::model::TileClassifier;
use crate::preprocess::{compute_crop_box, crop_and_remap, tile_and_label, CannyParams, CropBox};

/// 1 iff `p` is strictly greater than `threshold`.
pub fn classify_score(p: f64, threshold: f64) -> u8 {
    u8::from(p > threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub grid: GridSpec,
    pub threshold: f64,
    pub apply_crop: bool,
    pub canny: CannyParams,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            threshold: 0.7,
            apply_crop: true,
            canny: CannyParams::default(),
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.threshold <= 0.5 {
            log::warn!(
                "threshold {} is not above 0.5; defective tiles may be over-reported",
                self.threshold
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileScore {
    pub col: u32,
    pub row: u32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlaggedTile {
    pub col: u32,
    pub row: u32,
    /// Tile rectangle in original-image pixels.
    pub rect: Rect,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub image_id: String,
    pub grid: GridSpec,
    pub threshold: f64,
    pub crop: CropBox,
    /// All `m*n` scores, columns outer and rows inner.
    pub scores: Vec<TileScore>,
    pub flagged: Vec<FlaggedTile>,
}

impl DetectionResult {
    /// Re-thresholds the stored scores.
    pub fn flagged_at(&self, threshold: f64) -> Vec<(u32, u32)> {
        self.scores
            .iter()
            .filter(|s| classify_score(s.score, threshold) == 1)
            .map(|s| (s.col, s.row))
            .collect()
    }
}

/// Crop (optionally) and tile an image exactly as preprocessing does.
/// Tile labels come from any annotations the image carries.
pub fn detection_tiles(
    image: &AnnotatedImage,
    config: &DetectionConfig,
) -> (CropBox, Vec<TileRecord>) {
    let crop = if config.apply_crop {
        compute_crop_box(image, &config.canny)
    } else {
        CropBox::full(image.width(), image.height())
    };
    let cropped = crop_and_remap(image, crop).image;
    (crop, tile_and_label(&cropped, config.grid))
}

pub fn detect_defects(
    model: &(impl TileClassifier + Sync),
    image: &AnnotatedImage,
    config: &DetectionConfig,
) -> Result<DetectionResult> {
    config.validate()?;
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::EmptyDataset);
    }
    let (crop, tiles) = detection_tiles(image, config);
    let raw: Vec<f64> = tiles
        .par_iter()
        .map(|t| model.predict_tile(&t.pixels))
        .collect::<Result<_>>()?;
    let scores: Vec<TileScore> = tiles
        .iter()
        .zip(&raw)
        .map(|(t, &score)| TileScore {
            col: t.col,
            row: t.row,
            score,
        })
        .collect();
    let flagged = tiles
        .iter()
        .zip(&raw)
        .filter(|(_, &s)| classify_score(s, config.threshold) == 1)
        .map(|(t, &score)| FlaggedTile {
            col: t.col,
            row: t.row,
            rect: t.rect.translate(crop.x0, crop.y0),
            score,
        })
        .collect();
    Ok(DetectionResult {
        image_id: image.image_id.clone(),
        grid: config.grid,
        threshold: config.threshold,
        crop,
        scores,
        flagged,
    })
}

const BOX_COLOR: Rgb<u8> = Rgb([255, 32, 32]);
const TEXT_COLOR: Rgb<u8> = Rgb([255, 255, 0]);
const BORDER: u32 = 2;

// 3x5 glyphs, one row per entry, bit 2 = leftmost column.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        _ => return None,
    })
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str) {
    for (i, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..3 {
                if bits & (4 >> dx) != 0 {
                    let (px, py) = (x + i as u32 * 4 + dx, y + dy as u32);
                    if px < img.width() && py < img.height() {
                        img.put_pixel(px, py, TEXT_COLOR);
                    }
                }
            }
        }
    }
}

/// Color copy of `image` with a 2-px rectangle on every flagged tile and its
/// score written inside the top-left corner when the tile is large enough.
pub fn render_overlay(image: &GrayImage, result: &DetectionResult) -> RgbImage {
    let mut out = RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let v = image.get_pixel(x, y)[0];
        Rgb([v, v, v])
    });
    for f in &result.flagged {
        let r = f
            .rect
            .intersection(&Rect::new(0, 0, image.width(), image.height()));
        let Some(r) = r else { continue };
        for y in r.y_min..r.y_max {
            for x in r.x_min..r.x_max {
                let edge = x < r.x_min + BORDER
                    || x + BORDER >= r.x_max
                    || y < r.y_min + BORDER
                    || y + BORDER >= r.y_max;
                if edge {
                    out.put_pixel(x, y, BOX_COLOR);
                }
            }
        }
        let label = format!("{:.2}", f.score);
        let text_w = label.len() as u32 * 4;
        if r.width() >= text_w + 2 * BORDER + 2 && r.height() >= 5 + 2 * BORDER + 2 {
            draw_text(&mut out, r.x_min + BORDER + 1, r.y_min + BORDER + 1, &label);
        }
    }
    out
}

/// One line of the detection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub image_id: String,
    pub col: u32,
    pub row: u32,
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
    pub score: f64,
}

impl FlagRecord {
    pub fn from_result(result: &DetectionResult) -> Vec<Self> {
        result
            .flagged
            .iter()
            .map(|f| Self {
                image_id: result.image_id.clone(),
                col: f.col,
                row: f.row,
                x_min: f.rect.x_min,
                y_min: f.rect.y_min,
                x_max: f.rect.x_max,
                y_max: f.rect.y_max,
                score: f.score,
            })
            .collect()
    }
}

/// Writes one JSON object per flagged tile, one per line.
pub fn write_report(path: &Path, results: &[DetectionResult]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in results.iter().flat_map(FlagRecord::from_result) {
        serde_json::to_writer(&mut buf, &rec).map_err(|e| Error::json(path, e))?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DefectBox;

    struct Constant(f64);

    impl TileClassifier for Constant {
        fn predict_tile(&self, _: &GrayImage) -> Result<f64> {
            Ok(self.0)
        }
    }

    /// Scores 1.0 on tiles containing any pixel of value 200, else 0.0.
    struct Marker;

    impl TileClassifier for Marker {
        fn predict_tile(&self, tile: &GrayImage) -> Result<f64> {
            Ok(if tile.pixels().any(|p| p[0] == 200) {
                1.0
            } else {
                0.0
            })
        }
    }

    fn no_crop() -> DetectionConfig {
        DetectionConfig {
            apply_crop: false,
            ..Default::default()
        }
    }

    #[test]
    fn strict_threshold() {
        assert_eq!(classify_score(0.71, 0.7), 1);
        assert_eq!(classify_score(0.70, 0.7), 0);
        for t in [0.01, 0.5, 0.7, 0.99] {
            assert_eq!(classify_score(0.0, t), 0);
        }
    }

    #[test]
    fn constant_zero_flags_nothing() {
        let img = AnnotatedImage::new("t", GrayImage::new(100, 100), vec![]);
        let r = detect_defects(&Constant(0.0), &img, &DetectionConfig::default()).unwrap();
        assert!(r.flagged.is_empty());
        assert_eq!(r.scores.len(), 100);
    }

    #[test]
    fn marker_model_recovers_ground_truth_tiles() {
        let mut px = GrayImage::from_pixel(200, 150, image::Luma([60]));
        let defect = DefectBox::new(37, 41, 58, 66);
        for y in defect.y_min..defect.y_max {
            for x in defect.x_min..defect.x_max {
                px.put_pixel(x, y, image::Luma([200]));
            }
        }
        let img = AnnotatedImage::new("t", px, vec![defect]);
        let cfg = no_crop();
        let r = detect_defects(&Marker, &img, &cfg).unwrap();
        let truth: Vec<(u32, u32)> = tile_and_label(&img, cfg.grid)
            .iter()
            .filter(|t| t.label == 1)
            .map(|t| (t.col, t.row))
            .collect();
        let got: Vec<(u32, u32)> = r.flagged.iter().map(|f| (f.col, f.row)).collect();
        assert_eq!(got, truth);
    }

    #[test]
    fn flagged_rects_map_back_through_crop() {
        let mut px = GrayImage::new(300, 240);
        for y in 40..200 {
            for x in 50..260 {
                px.put_pixel(x, y, image::Luma([120]));
            }
        }
        let img = AnnotatedImage::new("t", px, vec![]);
        let cfg = DetectionConfig::default();
        let r = detect_defects(&Constant(0.9), &img, &cfg).unwrap();
        assert_eq!(r.flagged.len(), 100);
        let (crop, tiles) = detection_tiles(&img, &cfg);
        assert!(crop.x0 >= 45 && crop.y0 >= 35);
        for (f, t) in r.flagged.iter().zip(&tiles) {
            assert_eq!(f.rect, t.rect.translate(crop.x0, crop.y0));
            assert!(img.bounds().contains_rect(&f.rect));
        }
    }

    #[test]
    fn threshold_monotonicity_on_fixed_scores() {
        let img = AnnotatedImage::new(
            "t",
            GrayImage::from_fn(60, 60, |x, y| image::Luma([(x * 4 + y) as u8])),
            vec![],
        );
        struct Mean;
        impl TileClassifier for Mean {
            fn predict_tile(&self, t: &GrayImage) -> Result<f64> {
                Ok(t.pixels().map(|p| p[0] as f64).sum::<f64>() / (t.len() as f64 * 255.0))
            }
        }
        let r = detect_defects(&Mean, &img, &no_crop()).unwrap();
        let low = r.flagged_at(0.6);
        let high = r.flagged_at(0.9);
        assert!(high.iter().all(|c| low.contains(c)));
    }

    #[test]
    fn overlay_contract() {
        let img = GrayImage::from_fn(100, 100, |x, y| image::Luma([(x + y) as u8]));
        let ann = AnnotatedImage::new("t", img.clone(), vec![]);
        let none = detect_defects(&Constant(0.1), &ann, &no_crop()).unwrap();
        let out = render_overlay(&img, &none);
        assert!(out.enumerate_pixels().all(|(x, y, p)| {
            let v = img.get_pixel(x, y)[0];
            *p == Rgb([v, v, v])
        }));

        let mut one = none.clone();
        let rect = Rect::new(10, 20, 20, 30);
        one.flagged = vec![FlaggedTile {
            col: 1,
            row: 2,
            rect,
            score: 0.93,
        }];
        let out = render_overlay(&img, &one);
        for (x, y) in [(10, 20), (19, 20), (10, 29), (19, 29), (11, 21)] {
            assert_eq!(*out.get_pixel(x, y), BOX_COLOR, "({x},{y})");
        }
        let changed: Vec<(u32, u32)> = out
            .enumerate_pixels()
            .filter(|(x, y, p)| {
                let v = img.get_pixel(*x, *y)[0];
                **p != Rgb([v, v, v])
            })
            .map(|(x, y, _)| (x, y))
            .collect();
        assert!(changed
            .iter()
            .all(|&(x, y)| rect.contains_rect(&Rect::new(x, y, x + 1, y + 1))));
        assert_eq!(img, ann.pixels);

        let mut two = none;
        two.flagged = vec![
            FlaggedTile {
                col: 0,
                row: 0,
                rect: Rect::new(0, 0, 50, 50),
                score: 0.8,
            },
            FlaggedTile {
                col: 1,
                row: 0,
                rect: Rect::new(50, 0, 100, 50),
                score: 0.75,
            },
        ];
        let out = render_overlay(&img, &two);
        // both inner borders present: no merging into one box
        assert_eq!(*out.get_pixel(49, 25), BOX_COLOR);
        assert_eq!(*out.get_pixel(50, 25), BOX_COLOR);
        // score text drawn inside the larger tiles
        assert!(out.pixels().any(|p| *p == TEXT_COLOR));
    }

    #[test]
    fn report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let img = AnnotatedImage::new("t", GrayImage::new(40, 40), vec![]);
        let r = detect_defects(
            &Constant(0.8),
            &img,
            &DetectionConfig {
                grid: GridSpec { m: 2, n: 2 },
                ..no_crop()
            },
        )
        .unwrap();
        let path = dir.path().join("detections.jsonl");
        write_report(&path, &[r]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        let first: FlagRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(
            (first.x_min, first.y_min, first.x_max, first.y_max),
            (0, 0, 20, 20)
        );
    }
}
