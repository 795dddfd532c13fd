use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tiledefect::pipeline::{run_stage, Overrides, PipelineConfig, Stage};
use tiledefect::{Error, GridSpec};

#[derive(Parser)]
#[command(
    name = "tiledefect",
    version,
    about = "Tile-based surface defect detection pipeline"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid as MxN, e.g. 10x10.
    #[arg(long, global = true)]
    grid: Option<GridSpec>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    backbone: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Working directory for all stage outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Stage input override (manifest or directory).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Stage output directory override.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    stage: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Render synthetic source and target datasets.
    Synth,
    /// Crop, tile and label the source images.
    Preprocess,
    /// Balance the tile dataset and split train/val/test.
    Enhance,
    /// Train the tile classifier.
    Train,
    /// Score the test split (and target images, when present).
    Evaluate,
    /// Flag defective tiles on target images.
    Detect,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Synth => Stage::Synth,
            Command::Preprocess => Stage::Preprocess,
            Command::Enhance => Stage::Enhance,
            Command::Train => Stage::Train,
            Command::Evaluate => Stage::Evaluate,
            Command::Detect => Stage::Detect,
        }
    }
}

fn resolve(cli: &Cli) -> Result<PipelineConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(grid) = cli.grid {
        cfg.grid = grid;
    }
    if let Some(t) = cli.threshold {
        cfg.detect.threshold = t;
    }
    if let Some(b) = &cli.backbone {
        cfg.model.backbone = b.clone();
    }
    if let Some(e) = cli.epochs {
        cfg.model.epochs = e;
    }
    if let Some(out) = &cli.out {
        cfg.paths.work_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let stage = Stage::from(cli.stage);
    let result = resolve(&cli).and_then(|cfg| {
        let ov = Overrides {
            input: cli.input.clone(),
            output: cli.output.clone(),
        };
        run_stage(stage, &cfg, &ov)
    });
    match result {
        Ok(outputs) => {
            for p in outputs {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {} failed: {e}", stage.name());
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
