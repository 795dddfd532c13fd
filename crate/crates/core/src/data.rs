//! Domain types shared by every stage: rectangles, annotated images, grid
//! specs, tile records, dataset manifests and the tile naming scheme.
//!
//! All rectangles are half-open pixel intervals `[x_min, x_max) x [y_min, y_max)`
//! with the origin at the top-left corner.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label of a tile that shows no defect.
pub const NON_DEFECTIVE: u8 = 0;
/// Label of a tile that overlaps at least one defect.
pub const DEFECTIVE: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl Rect {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> u32 {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> u32 {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Intersection, or `None` when the rectangles share no pixel.
    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let r = Rect {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        };
        (r.x_min < r.x_max && r.y_min < r.y_max).then_some(r)
    }

    /// Positive-area overlap. Rectangles that only touch along an edge do not overlap.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.intersection(other).is_some()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x_min >= self.x_min
            && other.y_min >= self.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }

    pub fn translate(&self, dx: u32, dy: u32) -> Rect {
        Rect::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }
}

/// One annotated defect. `kind` is carried for reference and never used for labelling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

impl DefectBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
            kind: None,
        }
    }

    pub fn with_kind(mut self, kind: impl Into<String>) -> Self {
        self.kind = Some(kind.into());
        self
    }

    pub fn from_rect(rect: Rect, kind: Option<String>) -> Self {
        Self {
            x_min: rect.x_min,
            y_min: rect.y_min,
            x_max: rect.x_max,
            y_max: rect.y_max,
            kind,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.x_min, self.y_min, self.x_max, self.y_max)
    }

    /// Non-empty and fully inside a `width` x `height` image.
    pub fn is_within(&self, width: u32, height: u32) -> bool {
        self.x_min < self.x_max
            && self.y_min < self.y_max
            && self.x_max <= width
            && self.y_max <= height
    }
}

/// A grayscale source image with its defect annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub pixels: GrayImage,
    pub defects: Vec<DefectBox>,
}

impl AnnotatedImage {
    pub fn new(image_id: impl Into<String>, pixels: GrayImage, defects: Vec<DefectBox>) -> Self {
        Self {
            image_id: image_id.into(),
            pixels,
            defects,
        }
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width(), self.height())
    }

    pub fn validate(&self) -> Result<()> {
        validate_image_id(&self.image_id)?;
        for d in &self.defects {
            if !d.is_within(self.width(), self.height()) {
                return Err(Error::DefectOutOfBounds {
                    image_id: self.image_id.clone(),
                    x_min: d.x_min,
                    y_min: d.y_min,
                    x_max: d.x_max,
                    y_max: d.y_max,
                    width: self.width(),
                    height: self.height(),
                });
            }
        }
        Ok(())
    }
}

/// Grid of `m` columns by `n` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub m: u32,
    pub n: u32,
}

impl GridSpec {
    pub fn new(m: u32, n: u32) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Config(format!(
                "grid must be at least 1x1, got {m}x{n}"
            )));
        }
        Ok(Self { m, n })
    }

    pub fn cells(&self) -> usize {
        self.m as usize * self.n as usize
    }

    /// Cell coordinates in column-major order: outer loop columns, inner loop rows.
    pub fn cells_iter(&self) -> impl Iterator<Item = (u32, u32)> {
        let n = self.n;
        (0..self.m).flat_map(move |col| (0..n).map(move |row| (col, row)))
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { m: 10, n: 10 }
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// Parses `MxN`, e.g. `10x10`.
    fn from_str(s: &str) -> Result<Self> {
        let (m, n) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("grid `{s}` is not of the form MxN")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("grid `{s}` is not of the form MxN")))
        };
        GridSpec::new(parse(m)?, parse(n)?)
    }
}

/// One grid cell cut out of a (cropped) source image.
#[derive(Debug, Clone, PartialEq)]
pub struct TileRecord {
    pub image_id: String,
    pub col: u32,
    pub row: u32,
    pub rect: Rect,
    pub label: u8,
    pub pixels: GrayImage,
    /// Dihedral transform applied after tiling, if any.
    pub transform: Option<u8>,
}

pub fn validate_image_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\', '\0']) || id == "." || id == ".." {
        return Err(Error::InvalidImageId(id.to_string()));
    }
    Ok(())
}

/// File name of a tile: `{label}_{image_id}_{col}_{row}.png`.
pub fn tile_filename(label: u8, image_id: &str, col: u32, row: u32) -> Result<String> {
    if label > DEFECTIVE {
        return Err(Error::InvalidLabel(label));
    }
    validate_image_id(image_id)?;
    Ok(format!("{label}_{image_id}_{col}_{row}.png"))
}

/// Inverse of [`tile_filename`]. The label is the first field and col/row the
/// last two, so underscores inside the image id are unambiguous.
pub fn parse_tile_filename(name: &str) -> Option<(u8, String, u32, u32)> {
    let stem = name.strip_suffix(".png")?;
    let (label, rest) = stem.split_once('_')?;
    let (rest, row) = rest.rsplit_once('_')?;
    let (id, col) = rest.rsplit_once('_')?;
    if label.len() != 1 || id.is_empty() {
        return None;
    }
    let label: u8 = label.parse().ok().filter(|l| *l <= DEFECTIVE)?;
    Some((label, id.to_string(), col.parse().ok()?, row.parse().ok()?))
}

// --- source annotation manifest -------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceManifest {
    pub images: Vec<SourceEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEntry {
    pub id: String,
    /// PNG path, relative to the manifest's directory.
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub defects: Vec<DefectBox>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn read_gray_png(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .into_luma8())
}

pub fn write_png(path: &Path, img: &GrayImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Reads and validates an annotation manifest, loading every referenced PNG.
/// Images are returned in manifest order.
pub fn load_source_manifest(path: &Path) -> Result<Vec<AnnotatedImage>> {
    let manifest: SourceManifest = read_json(path)?;
    let base = manifest_dir(path);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(manifest.images.len());
    for entry in manifest.images {
        validate_image_id(&entry.id)?;
        if !seen.insert(entry.id.clone()) {
            return Err(Error::DuplicateImageId(entry.id));
        }
        for d in &entry.defects {
            if !d.is_within(entry.width, entry.height) {
                return Err(Error::DefectOutOfBounds {
                    image_id: entry.id.clone(),
                    x_min: d.x_min,
                    y_min: d.y_min,
                    x_max: d.x_max,
                    y_max: d.y_max,
                    width: entry.width,
                    height: entry.height,
                });
            }
        }
        let pixels = read_gray_png(&base.join(&entry.path))?;
        if pixels.dimensions() != (entry.width, entry.height) {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                reason: format!(
                    "image `{}` is {}x{} on disk but declared {}x{}",
                    entry.id,
                    pixels.width(),
                    pixels.height(),
                    entry.width,
                    entry.height
                ),
            });
        }
        out.push(AnnotatedImage::new(entry.id, pixels, entry.defects));
    }
    Ok(out)
}

/// Writes each image as `{id}.png` next to an annotation manifest at `path`.
pub fn save_source_manifest(path: &Path, images: &[AnnotatedImage]) -> Result<SourceManifest> {
    let base = manifest_dir(path);
    create_dir(&base)?;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(images.len());
    for img in images {
        img.validate()?;
        if !seen.insert(img.image_id.as_str()) {
            return Err(Error::DuplicateImageId(img.image_id.clone()));
        }
        let file = format!("{}.png", img.image_id);
        write_png(&base.join(&file), &img.pixels)?;
        entries.push(SourceEntry {
            id: img.image_id.clone(),
            path: file,
            width: img.width(),
            height: img.height(),
            defects: img.defects.clone(),
        });
    }
    let manifest = SourceManifest { images: entries };
    write_json(path, &manifest)?;
    Ok(manifest)
}

// --- tile dataset manifest ------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub non_defective: usize,
    pub defective: usize,
}

impl ClassCounts {
    pub fn of(entries: &[TileEntry]) -> Self {
        let defective = entries.iter().filter(|e| e.label == DEFECTIVE).count();
        Self {
            non_defective: entries.len() - defective,
            defective,
        }
    }

    pub fn total(&self) -> usize {
        self.defective + self.non_defective
    }
}

/// How a resampled tile was derived from an enhanced-dataset tile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawOrigin {
    /// Source tile path, relative to the enhanced manifest's directory.
    pub source: String,
    pub transform: u8,
    pub draw_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileEntry {
    /// Tile PNG path, relative to the manifest's directory.
    pub file: String,
    pub label: u8,
    pub image_id: String,
    pub col: u32,
    pub row: u32,
    pub rect: Rect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<DrawOrigin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetStage {
    Enhanced,
    Balanced,
    Train,
    Val,
    Test,
}

/// Ordered list of tiles plus class totals and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub stage: DatasetStage,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_manifest: Option<String>,
    pub counts: ClassCounts,
    pub entries: Vec<TileEntry>,
    /// Directory tile paths are resolved against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(
        stage: DatasetStage,
        grid: GridSpec,
        entries: Vec<TileEntry>,
        root: PathBuf,
    ) -> Self {
        Self {
            stage,
            grid,
            seed: None,
            source_manifest: None,
            counts: ClassCounts::of(&entries),
            entries,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tile_path(&self, entry: &TileEntry) -> PathBuf {
        self.root.join(&entry.file)
    }

    pub fn load_tile(&self, entry: &TileEntry) -> Result<GrayImage> {
        read_gray_png(&self.tile_path(entry))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m: DatasetManifest = read_json(path)?;
        let counts = ClassCounts::of(&m.entries);
        if counts != m.counts {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                reason: format!(
                    "declared counts {:?} do not match the {} entries ({:?})",
                    m.counts,
                    m.entries.len(),
                    counts
                ),
            });
        }
        if let Some(bad) = m.entries.iter().find(|e| e.label > DEFECTIVE) {
            return Err(Error::InvalidLabel(bad.label));
        }
        m.root = manifest_dir(path);
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        write_json(path, self)
    }
}
