//! Stage runners behind the command-line tool. Each stage reads its inputs
//! from the working directory (or explicit overrides), writes its outputs and
//! a run log, and hands off to the next stage through files.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{create_dir, load_source_manifest, write_json, DatasetManifest, GridSpec};
use crate::detect::{detect_defects, render_overlay, write_report, DetectionConfig};
use crate::enhance::{balance_dataset, split_dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_tiles, MetricsReport};
use crate::model::{
    build_classifier, load_model, save_model, train, BackboneSpec, ClassifierConfig, TrainedModel,
};
use crate::preprocess::{preprocess_dataset, CannyParams, PreprocessConfig, MANIFEST_FILE};
use crate::synth::{generate_dataset, ObjectShape, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Preprocess,
    Enhance,
    Train,
    Evaluate,
    Detect,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::Enhance => "enhance",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Detect => "detect",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Root of all stage outputs.
    pub work_dir: Option<PathBuf>,
    /// Annotation manifest of the source images; defaults to the synth output.
    pub source_manifest: Option<PathBuf>,
    /// Manifest of target images for detection and target evaluation.
    pub target_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    pub target_count: usize,
    pub target_shape: ObjectShape,
    pub scene: SceneSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 40,
            target_count: 5,
            target_shape: ObjectShape::Ellipse,
            scene: SceneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub backbone: String,
    /// Overrides the backbone's native input size.
    pub input_size: Option<u32>,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Falls back to the top-level seed.
    pub seed: Option<u64>,
    pub freeze_backbone_epochs: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        Self {
            backbone: crate::model::TINY.to_string(),
            input_size: None,
            dropout: c.dropout_rate,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.learning_rate,
            seed: None,
            freeze_backbone_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Decision threshold for the held-out test split.
    pub threshold: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    pub threshold: f64,
    pub apply_crop: bool,
    pub overlays: bool,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            apply_crop: true,
            overlays: true,
        }
    }
}

/// Fully resolved pipeline configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub grid: GridSpec,
    pub canny: CannyParams,
    pub split: SplitSpec,
    pub model: ModelSection,
    pub evaluate: EvaluateSection,
    pub detect: DetectSection,
}

impl PipelineConfig {
    /// Parses a TOML document; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.grid.m, self.grid.n)?;
        self.split.validate()?;
        self.classifier_config().validate()?;
        self.detection_config().validate()?;
        if !(0.0..1.0).contains(&self.evaluate.threshold) {
            return Err(Error::Config(format!(
                "evaluate.threshold must lie in [0, 1), got {}",
                self.evaluate.threshold
            )));
        }
        if self.canny.low >= self.canny.high {
            return Err(Error::Config("canny.low must be below canny.high".into()));
        }
        BackboneSpec::resolve(&self.model.backbone)?;
        self.synth.scene.validate()
    }

    pub fn work_dir(&self) -> PathBuf {
        self.paths
            .work_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("work"))
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            dropout_rate: self.model.dropout,
            epochs: self.model.epochs,
            batch_size: self.model.batch_size,
            learning_rate: self.model.lr,
            seed: self.model.seed.unwrap_or(self.seed),
            freeze_backbone_epochs: self.model.freeze_backbone_epochs,
        }
    }

    pub fn detection_config(&self) -> DetectionConfig {
        DetectionConfig {
            grid: self.grid,
            threshold: self.detect.threshold,
            apply_crop: self.detect.apply_crop,
            canny: self.canny,
        }
    }

    pub fn backbone(&self) -> Result<BackboneSpec> {
        let mut spec = BackboneSpec::resolve(&self.model.backbone)?;
        if let Some(size) = self.model.input_size {
            spec.input_size = size;
        }
        Ok(spec)
    }

    pub fn source_scene(&self) -> SceneSpec {
        SceneSpec {
            seed: self.seed,
            ..self.synth.scene.clone()
        }
    }

    pub fn target_scene(&self) -> SceneSpec {
        SceneSpec {
            seed: self.seed.wrapping_add(1),
            object_shape: self.synth.target_shape,
            ..self.synth.scene.clone()
        }
    }
}

/// Locations of every stage's inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub work: PathBuf,
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
    pub synth_source: PathBuf,
    pub synth_target: PathBuf,
    pub tiles: PathBuf,
    pub balanced: PathBuf,
    pub model: PathBuf,
    pub eval: PathBuf,
    pub target_tiles: PathBuf,
    pub detect: PathBuf,
    pub logs: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        let work = cfg.work_dir();
        let synth_source = work.join("synth").join("source");
        let synth_target = work.join("synth").join("target");
        Self {
            source_manifest: cfg
                .paths
                .source_manifest
                .clone()
                .unwrap_or_else(|| synth_source.join(MANIFEST_FILE)),
            target_manifest: cfg
                .paths
                .target_manifest
                .clone()
                .unwrap_or_else(|| synth_target.join(MANIFEST_FILE)),
            synth_source,
            synth_target,
            tiles: work.join("tiles"),
            balanced: work.join("balanced"),
            model: work.join("model"),
            eval: work.join("eval"),
            target_tiles: work.join("target_tiles"),
            detect: work.join("detect"),
            logs: work.join("logs"),
            work,
        }
    }
}

/// Per-stage path overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Exclusive lock on a working directory, released on drop.
pub struct WorkLock {
    path: PathBuf,
    _file: File,
}

impl WorkLock {
    pub const FILE: &'static str = ".tiledefect.lock";

    pub fn acquire(work: &Path) -> Result<Self> {
        create_dir(work)?;
        let path = work.join(Self::FILE);
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::Locked(work.to_path_buf())
                } else {
                    Error::io(&path, e)
                }
            })?;
        Ok(Self { path, _file: file })
    }
}

impl Drop for WorkLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Serialize)]
struct RunLog<'a> {
    stage: &'static str,
    seed: u64,
    config: &'a PipelineConfig,
    elapsed_ms: u128,
    outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub test: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub grid: GridSpec,
    pub threshold: f64,
    pub apply_crop: bool,
    pub backbone: BackboneSpec,
    pub model_config: ClassifierConfig,
    pub images: usize,
    pub total_flagged: usize,
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn run_synth(cfg: &PipelineConfig, ov: &Overrides) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    let source_dir = ov.output.clone().unwrap_or(layout.synth_source);
    generate_dataset(&cfg.source_scene(), cfg.synth.count, &source_dir)?;
    let mut out = vec![source_dir.join(MANIFEST_FILE)];
    if cfg.synth.target_count > 0 {
        let target_dir = source_dir
            .parent()
            .map(|p| p.join("target"))
            .unwrap_or(layout.synth_target);
        generate_dataset(&cfg.target_scene(), cfg.synth.target_count, &target_dir)?;
        out.push(target_dir.join(MANIFEST_FILE));
    }
    Ok(out)
}

pub fn run_preprocess(cfg: &PipelineConfig, ov: &Overrides) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    let input = ov.input.clone().unwrap_or(layout.source_manifest);
    let out_dir = ov.output.clone().unwrap_or(layout.tiles);
    let source = load_source_manifest(&input)?;
    let pre = PreprocessConfig {
        grid: cfg.grid,
        canny: cfg.canny,
    };
    preprocess_dataset(&source, &pre, &out_dir, Some(&display(&input)))?;
    Ok(vec![out_dir.join(MANIFEST_FILE)])
}

pub fn run_enhance(cfg: &PipelineConfig, ov: &Overrides) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    let input = ov.input.clone().unwrap_or(layout.tiles.join(MANIFEST_FILE));
    let out_dir = ov.output.clone().unwrap_or(layout.balanced);
    let enhanced = DatasetManifest::load(&input)?;
    let balanced = balance_dataset(&enhanced, cfg.seed, &out_dir, Some(&display(&input)))?;
    let splits = split_dataset(
        &balanced,
        &SplitSpec {
            seed: cfg.seed,
            ..cfg.split
        },
    )?;
    let mut outputs = vec![out_dir.join(MANIFEST_FILE)];
    for (name, m) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        let path = out_dir.join(format!("{name}.json"));
        m.save(&path)?;
        outputs.push(path);
    }
    Ok(outputs)
}

pub fn run_train(cfg: &PipelineConfig, ov: &Overrides) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    let split_dir = ov.input.clone().unwrap_or(layout.balanced);
    let out_dir = ov.output.clone().unwrap_or(layout.model);
    let train_set = DatasetManifest::load(&split_dir.join("train.json"))?;
    let val_set = DatasetManifest::load(&split_dir.join("val.json"))?;
    let config = cfg.classifier_config();
    let model = build_classifier(&cfg.backbone()?, &config)?;
    let trained = train(model, &train_set, &val_set, &config)?;
    save_model(&trained, &out_dir)?;
    Ok(vec![out_dir])
}

fn load_trained(dir: &Path) -> Result<TrainedModel> {
    if !dir.is_dir() {
        return Err(Error::MissingArtifact(dir.to_path_buf()));
    }
    load_model(dir)
}

pub fn run_evaluate(cfg: &PipelineConfig, ov: &Overrides) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    let model = load_trained(&layout.model)?;
    let test_path = ov
        .input
        .clone()
        .unwrap_or(layout.balanced.join("test.json"));
    let out_dir = ov.output.clone().unwrap_or(layout.eval);
    let test = evaluate_tiles(
        &model,
        &DatasetManifest::load(&test_path)?,
        cfg.evaluate.threshold,
    )?;

    // Target protocol: tile the target images on the same grid and score
    // the tiles against their annotations at the detection threshold.
    let target = if layout.target_manifest.is_file() {
        let images = load_source_manifest(&layout.target_manifest)?;
        let pre = PreprocessConfig {
            grid: cfg.grid,
            canny: cfg.canny,
        };
        let tiles = preprocess_dataset(
            &images,
            &pre,
            &layout.target_tiles,
            Some(&display(&layout.target_manifest)),
        )?;
        (!tiles.is_empty())
            .then(|| evaluate_tiles(&model, &tiles, cfg.detect.threshold))
            .transpose()?
    } else {
        None
    };

    let report = EvaluationReport {
        model: model.classifier.backbone.name.clone(),
        test,
        target,
    };
    create_dir(&out_dir)?;
    let json = out_dir.join("metrics.json");
    write_json(&json, &report)?;
    let mut table = format!("test split (threshold {})\n", report.test.threshold);
    table += &report.test.table(&report.model);
    if let Some(t) = &report.target {
        table += &format!("\ntarget images (threshold {})\n", t.threshold);
        table += &t.table(&report.model);
    }
    let txt = out_dir.join("metrics.txt");
    fs::write(&txt, table).map_err(|e| Error::io(&txt, e))?;
    Ok(vec![json, txt])
}

pub fn run_detect(cfg: &PipelineConfig, ov: &Overrides) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    let model = load_trained(&layout.model)?;
    let input = ov.input.clone().unwrap_or(layout.target_manifest);
    let out_dir = ov.output.clone().unwrap_or(layout.detect);
    let images = load_source_manifest(&input)?;
    let dcfg = cfg.detection_config();
    create_dir(&out_dir)?;

    let mut results = Vec::with_capacity(images.len());
    for img in &images {
        let r = detect_defects(&model, img, &dcfg)?;
        if cfg.detect.overlays {
            let path = out_dir.join(format!("{}_overlay.png", img.image_id));
            let overlay = render_overlay(&img.pixels, &r);
            overlay
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(|e| Error::image(&path, e))?;
        }
        results.push(r);
    }
    let report = out_dir.join("detections.jsonl");
    write_report(&report, &results)?;
    let summary = DetectionSummary {
        grid: dcfg.grid,
        threshold: dcfg.threshold,
        apply_crop: dcfg.apply_crop,
        backbone: model.classifier.backbone.clone(),
        model_config: model.config.clone(),
        images: results.len(),
        total_flagged: results.iter().map(|r| r.flagged.len()).sum(),
    };
    let summary_path = out_dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    Ok(vec![report, summary_path])
}

/// Runs one stage under the working-directory lock and writes its run log.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, ov: &Overrides) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let _lock = WorkLock::acquire(&layout.work)?;
    let start = Instant::now();
    let outputs = match stage {
        Stage::Synth => run_synth(cfg, ov),
        Stage::Preprocess => run_preprocess(cfg, ov),
        Stage::Enhance => run_enhance(cfg, ov),
        Stage::Train => run_train(cfg, ov),
        Stage::Evaluate => run_evaluate(cfg, ov),
        Stage::Detect => run_detect(cfg, ov),
    }?;
    create_dir(&layout.logs)?;
    let log = RunLog {
        stage: stage.name(),
        seed: cfg.seed,
        config: cfg,
        elapsed_ms: start.elapsed().as_millis(),
        outputs: outputs.iter().map(|p| display(p)).collect(),
    };
    write_json(&layout.logs.join(format!("{}.json", stage.name())), &log)?;
    Ok(outputs)
}
