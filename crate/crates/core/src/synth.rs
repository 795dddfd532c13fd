//! Procedural stand-in for inspection imagery: a striped object on a
//! near-black background with scratch and dirt defects whose bounding boxes
//! are known exactly.
//!
//! Everything is keyed on `(seed, index)`. The object placement and the
//! defect geometry come from separate random streams, and defects are placed
//! in a normalized object frame inside a region every shape contains, so
//! switching `object_shape` changes the silhouette but not the defects.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{save_source_manifest, AnnotatedImage, DefectBox, SourceManifest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectShape {
    RoundedRectangle,
    Ellipse,
    Polygon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripePattern {
    pub amplitude: f64,
    pub period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectKind {
    Scratch,
    Dirt,
}

impl DefectKind {
    pub fn name(self) -> &'static str {
        match self {
            DefectKind::Scratch => "scratch",
            DefectKind::Dirt => "dirt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub object_shape: ObjectShape,
    pub width: u32,
    pub height: u32,
    /// Inclusive intensity band of the background.
    pub background: (u8, u8),
    /// Mean intensity of the object surface.
    pub object_intensity: u8,
    pub pattern: Option<StripePattern>,
    /// Inclusive range of defects per image.
    pub defect_count: (u32, u32),
    pub kinds: Vec<DefectKind>,
    /// Intensity offset of defect pixels from the object mean.
    pub contrast: u8,
    /// Inclusive scratch thickness range, pixels.
    pub scratch_thickness: (u32, u32),
    /// Inclusive scratch length range, pixels.
    pub scratch_length: (u32, u32),
    /// Inclusive dirt radius range, pixels.
    pub dirt_radius: (u32, u32),
    /// Set by the caller; the pipeline derives it from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            object_shape: ObjectShape::RoundedRectangle,
            width: 320,
            height: 280,
            background: (0, 10),
            object_intensity: 110,
            pattern: Some(StripePattern {
                amplitude: 35.0,
                period: 14.0,
            }),
            defect_count: (1, 4),
            kinds: vec![DefectKind::Scratch, DefectKind::Dirt],
            contrast: 100,
            scratch_thickness: (2, 3),
            scratch_length: (20, 50),
            dirt_radius: (3, 7),
            seed: 0,
        }
    }
}

const SURFACE_NOISE: f64 = 4.0;
/// Defects must stay inside this fraction of the object's ellipse.
const SAFE_RADIUS: f64 = 0.8;
const PLACEMENT_ATTEMPTS: usize = 200;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.width < 32 || self.height < 32 {
            return bad("image must be at least 32x32");
        }
        if self.background.0 > self.background.1 {
            return bad("background band is inverted");
        }
        if self.defect_count.0 > self.defect_count.1 {
            return bad("defect count range is inverted");
        }
        if self.defect_count.1 > 0 && self.kinds.is_empty() {
            return bad("no defect kinds enabled");
        }
        for (name, (lo, hi)) in [
            ("scratch thickness", self.scratch_thickness),
            ("scratch length", self.scratch_length),
            ("dirt radius", self.dirt_radius),
        ] {
            if lo == 0 || lo > hi {
                return bad(&format!("{name} range must be positive and ordered"));
            }
        }
        let amp = self.pattern.map_or(0.0, |p| p.amplitude);
        let lo = self.object_intensity as f64 - amp - SURFACE_NOISE;
        let hi = self.object_intensity as f64 + amp + SURFACE_NOISE;
        let (dark, bright) = self.defect_levels();
        if lo <= self.background.1 as f64 {
            return bad("object surface is not brighter than the background");
        }
        if dark as f64 >= lo || bright as f64 <= hi {
            return bad("defect contrast does not clear the surface texture");
        }
        Ok(())
    }

    /// Intensities of dirt (dark) and scratch (bright) pixels.
    fn defect_levels(&self) -> (u8, u8) {
        (
            self.object_intensity.saturating_sub(self.contrast),
            self.object_intensity.saturating_add(self.contrast),
        )
    }
}

/// Object placement: center and semi-axes in pixels, stripe direction.
#[derive(Debug, Clone, Copy)]
struct Placement {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    stripe_angle: f64,
    stripe_phase: f64,
}

impl Placement {
    fn draw(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Self {
        let (w, h) = (spec.width as f64, spec.height as f64);
        let ax = w * rng.gen_range(0.36..0.44);
        let ay = h * rng.gen_range(0.36..0.44);
        Self {
            cx: w / 2.0 + rng.gen_range(-0.04..0.04) * w,
            cy: h / 2.0 + rng.gen_range(-0.04..0.04) * h,
            ax,
            ay,
            stripe_angle: rng.gen_range(0.0..PI),
            stripe_phase: rng.gen_range(0.0..2.0 * PI),
        }
    }

    /// Normalized object-frame coordinates of a pixel center.
    fn to_frame(self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.ax, (y - self.cy) / self.ay)
    }

    fn to_pixel(self, u: f64, v: f64) -> (f64, f64) {
        (self.cx + u * self.ax, self.cy + v * self.ay)
    }

    fn contains(&self, shape: ObjectShape, x: f64, y: f64) -> bool {
        let (u, v) = self.to_frame(x, y);
        match shape {
            ObjectShape::Ellipse => u * u + v * v <= 1.0,
            ObjectShape::RoundedRectangle => {
                let r = 0.35;
                let (du, dv) = (
                    (u.abs() - (1.0 - r)).max(0.0),
                    (v.abs() - (1.0 - r)).max(0.0),
                );
                u.abs() <= 1.0 && v.abs() <= 1.0 && du * du + dv * dv <= r * r
            }
            ObjectShape::Polygon => {
                // regular octagon with vertices on the unit circle
                let apothem = (PI / 8.0).cos();
                (0..8).all(|k| {
                    let a = k as f64 * PI / 4.0;
                    u * a.cos() + v * a.sin() <= apothem
                })
            }
        }
    }
}

/// A defect's pixel footprint.
struct Footprint {
    kind: DefectKind,
    pixels: Vec<(u32, u32)>,
}

fn stamp_disk(mask: &mut Vec<(u32, u32)>, x: f64, y: f64, r: f64, w: u32, h: u32) {
    let (x0, x1) = (
        (x - r).floor().max(0.0) as u32,
        ((x + r).ceil() as u32).min(w - 1),
    );
    let (y0, y1) = (
        (y - r).floor().max(0.0) as u32,
        ((y + r).ceil() as u32).min(h - 1),
    );
    for py in y0..=y1 {
        for px in x0..=x1 {
            let (dx, dy) = (px as f64 + 0.5 - x, py as f64 + 0.5 - y);
            if dx * dx + dy * dy <= r * r {
                mask.push((px, py));
            }
        }
    }
}

fn draw_footprint(spec: &SceneSpec, place: &Placement, rng: &mut ChaCha8Rng) -> Footprint {
    let kind = spec.kinds[rng.gen_range(0..spec.kinds.len())];
    let (w, h) = (spec.width, spec.height);
    // anchor in the object frame, inside the safe disk
    let rho = SAFE_RADIUS * rng.gen::<f64>().sqrt();
    let theta = rng.gen_range(0.0..2.0 * PI);
    let (ax, ay) = place.to_pixel(rho * theta.cos(), rho * theta.sin());
    let mut pixels = Vec::new();
    match kind {
        DefectKind::Dirt => {
            let rx = rng.gen_range(spec.dirt_radius.0..=spec.dirt_radius.1) as f64;
            let ry = rx * rng.gen_range(0.6..1.0);
            let rot = rng.gen_range(0.0..PI);
            let reach = rx.ceil() as i64 + 1;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (px, py) = (ax.floor() as i64 + dx, ay.floor() as i64 + dy);
                    if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                        continue;
                    }
                    let (ox, oy) = (px as f64 + 0.5 - ax, py as f64 + 0.5 - ay);
                    let (u, v) = (
                        ox * rot.cos() + oy * rot.sin(),
                        -ox * rot.sin() + oy * rot.cos(),
                    );
                    if (u / rx).powi(2) + (v / ry).powi(2) <= 1.0 {
                        pixels.push((px as u32, py as u32));
                    }
                }
            }
        }
        DefectKind::Scratch => {
            let thickness =
                rng.gen_range(spec.scratch_thickness.0..=spec.scratch_thickness.1) as f64;
            let length = rng.gen_range(spec.scratch_length.0..=spec.scratch_length.1) as f64;
            let segments = rng.gen_range(1..=3);
            let mut heading = rng.gen_range(0.0..2.0 * PI);
            let (mut x, mut y) = (ax, ay);
            for _ in 0..segments {
                let seg = length / segments as f64;
                let steps = (seg * 2.0).ceil() as usize;
                for s in 0..=steps {
                    let t = seg * s as f64 / steps as f64;
                    stamp_disk(
                        &mut pixels,
                        x + t * heading.cos(),
                        y + t * heading.sin(),
                        thickness / 2.0,
                        w,
                        h,
                    );
                }
                x += seg * heading.cos();
                y += seg * heading.sin();
                heading += rng.gen_range(-0.6..0.6);
            }
        }
    }
    pixels.sort_unstable();
    pixels.dedup();
    Footprint { kind, pixels }
}

fn footprint_box(pixels: &[(u32, u32)]) -> DefectBox {
    let x0 = pixels.iter().map(|p| p.0).min().unwrap_or(0);
    let y0 = pixels.iter().map(|p| p.1).min().unwrap_or(0);
    let x1 = pixels.iter().map(|p| p.0).max().unwrap_or(0) + 1;
    let y1 = pixels.iter().map(|p| p.1).max().unwrap_or(0) + 1;
    DefectBox::new(x0, y0, x1, y1)
}

fn rng_for(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(4).wrapping_add(stream));
    rng
}

fn render(spec: &SceneSpec, index: u64, with_defects: bool) -> Result<AnnotatedImage> {
    spec.validate()?;
    let place = Placement::draw(spec, &mut rng_for(spec.seed, index, 0));
    let mut noise = rng_for(spec.seed, index, 1);
    let (w, h) = (spec.width, spec.height);
    let (sin_a, cos_a) = place.stripe_angle.sin_cos();
    let mut pixels = GrayImage::from_fn(w, h, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let bg = noise.gen_range(spec.background.0..=spec.background.1);
        let jitter = noise.gen_range(-SURFACE_NOISE..=SURFACE_NOISE);
        if !place.contains(spec.object_shape, fx, fy) {
            return Luma([bg]);
        }
        let stripe = spec.pattern.map_or(0.0, |p| {
            p.amplitude
                * ((fx * cos_a + fy * sin_a) * 2.0 * PI / p.period + place.stripe_phase).sin()
        });
        Luma([(spec.object_intensity as f64 + stripe + jitter)
            .round()
            .clamp(0.0, 255.0) as u8])
    });

    let mut defect_rng = rng_for(spec.seed, index, 2);
    let count = defect_rng.gen_range(spec.defect_count.0..=spec.defect_count.1);
    let mut defects: Vec<DefectBox> = Vec::with_capacity(count as usize);
    let mut footprints = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let fp = draw_footprint(spec, &place, &mut defect_rng);
            let safe = fp.pixels.iter().all(|&(x, y)| {
                let (u, v) = place.to_frame(x as f64 + 0.5, y as f64 + 0.5);
                u * u + v * v <= 0.85 * 0.85
            });
            let bx = footprint_box(&fp.pixels);
            // keep a 2-px gap between boxes so each stays pixel-tight
            let padded = crate::data::Rect::new(
                bx.x_min.saturating_sub(2),
                bx.y_min.saturating_sub(2),
                bx.x_max + 2,
                bx.y_max + 2,
            );
            if fp.pixels.is_empty() || !safe || defects.iter().any(|d| d.rect().overlaps(&padded)) {
                continue;
            }
            defects.push(bx.with_kind(fp.kind.name()));
            footprints.push(fp);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::DefectPlacement {
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }

    if with_defects {
        let (dark, bright) = spec.defect_levels();
        for fp in &footprints {
            let level = match fp.kind {
                DefectKind::Scratch => bright,
                DefectKind::Dirt => dark,
            };
            for &(x, y) in &fp.pixels {
                pixels.put_pixel(x, y, Luma([level]));
            }
        }
    } else {
        defects.clear();
    }
    Ok(AnnotatedImage::new(
        format!("img{index:04}"),
        pixels,
        defects,
    ))
}

/// Renders image `index` of the scene with its exact defect boxes.
pub fn generate_image(spec: &SceneSpec, index: u64) -> Result<AnnotatedImage> {
    render(spec, index, true)
}

/// The same image with no defects drawn (and an empty annotation list).
pub fn render_clean(spec: &SceneSpec, index: u64) -> Result<AnnotatedImage> {
    render(spec, index, false)
}

/// Writes `count` images and `manifest.json` into `out_dir`.
pub fn generate_dataset(spec: &SceneSpec, count: usize, out_dir: &Path) -> Result<SourceManifest> {
    if count == 0 {
        return Err(Error::Config(
            "synth: image count must be at least 1".into(),
        ));
    }
    let images: Vec<AnnotatedImage> = (0..count as u64)
        .into_par_iter()
        .map(|i| generate_image(spec, i))
        .collect::<Result<_>>()?;
    save_source_manifest(&out_dir.join(crate::preprocess::MANIFEST_FILE), &images)
}
