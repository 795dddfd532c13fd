//! Runs every pipeline stage in sequence on synthetic data.
//!
//! ```text
//! cargo run --release --example end_to_end -- [CONFIG.toml] [WORK_DIR]
//! ```
//!
//! Without a config file the built-in defaults are used.

use std::path::PathBuf;
use std::time::Instant;

use tiledefect::pipeline::{run_stage, EvaluationReport, Overrides, PipelineConfig, Stage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let mut cfg = match args.next() {
        Some(path) => PipelineConfig::load(&PathBuf::from(path))?,
        None => PipelineConfig::default(),
    };
    if let Some(work) = args.next() {
        cfg.paths.work_dir = Some(PathBuf::from(work));
    }

    let stages = [
        Stage::Synth,
        Stage::Preprocess,
        Stage::Enhance,
        Stage::Train,
        Stage::Evaluate,
        Stage::Detect,
    ];
    for stage in stages {
        let t = Instant::now();
        let outputs = run_stage(stage, &cfg, &Overrides::default())?;
        println!("{:<10} {:>7.1}s", stage.name(), t.elapsed().as_secs_f64());
        for p in outputs {
            println!("           {}", p.display());
        }
    }

    let metrics = cfg.work_dir().join("eval").join("metrics.json");
    let report: EvaluationReport = serde_json::from_str(&std::fs::read_to_string(metrics)?)?;
    println!("\ntest split\n{}", report.test.table(&report.model));
    if let Some(target) = report.target {
        println!("target images\n{}", target.table(&report.model));
    }
    Ok(())
}
