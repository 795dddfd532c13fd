//! Trains the tiny backbone on synthetic tiles and saves the model artifact.
//!
//! ```text
//! cargo run --release --example train_tiny -- [MODEL_DIR] [EPOCHS]
//! ```

use std::path::PathBuf;

use tiledefect::enhance::{balance_dataset, split_dataset, SplitSpec};
use tiledefect::model::{
    build_classifier, save_model, train, BackboneSpec, ClassifierConfig, TINY,
};
use tiledefect::preprocess::{preprocess_dataset, PreprocessConfig};
use tiledefect::synth::{generate_image, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let model_dir = PathBuf::from(args.next().unwrap_or_else(|| "tiny-model".into()));
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);

    let work = tempfile::tempdir()?;
    let spec = SceneSpec {
        seed: 0,
        ..SceneSpec::default()
    };
    let images = (0..20)
        .map(|i| generate_image(&spec, i))
        .collect::<Result<Vec<_>, _>>()?;
    let tiles = preprocess_dataset(
        &images,
        &PreprocessConfig::default(),
        &work.path().join("tiles"),
        None,
    )?;
    let balanced = balance_dataset(&tiles, 0, &work.path().join("balanced"), None)?;
    let splits = split_dataset(&balanced, &SplitSpec::default())?;

    let config = ClassifierConfig {
        epochs,
        learning_rate: 1e-3,
        ..ClassifierConfig::default()
    };
    let model = build_classifier(&BackboneSpec::resolve(TINY)?, &config)?;
    let trained = train(model, &splits.train, &splits.val, &config)?;
    save_model(&trained, &model_dir)?;
    let last = trained.history.last().expect("at least one epoch");
    println!(
        "saved {} (val accuracy {:.3} after {} epochs)",
        model_dir.display(),
        last.val_accuracy,
        last.epoch
    );
    Ok(())
}
