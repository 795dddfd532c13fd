//! Flags defective tiles on synthetic target images and writes overlays.
//!
//! ```text
//! cargo run --release --example train_tiny -- tiny-model
//! cargo run --release --example detect_overlay -- [MODEL_DIR] [OUT_DIR]
//! ```

use std::path::PathBuf;

use tiledefect::detect::{detect_defects, render_overlay, write_report, DetectionConfig};
use tiledefect::model::load_model;
use tiledefect::synth::{generate_image, ObjectShape, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let model_dir = PathBuf::from(args.next().unwrap_or_else(|| "tiny-model".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "detect-out".into()));
    let model = load_model(&model_dir)?;
    std::fs::create_dir_all(&out)?;

    let spec = SceneSpec {
        object_shape: ObjectShape::Ellipse,
        seed: 99,
        ..SceneSpec::default()
    };
    let config = DetectionConfig::default();
    let mut results = Vec::new();
    for i in 0..3 {
        let image = generate_image(&spec, i)?;
        let result = detect_defects(&model, &image, &config)?;
        println!(
            "{}: {} annotated defects, {} tiles flagged above {}",
            image.image_id,
            image.defects.len(),
            result.flagged.len(),
            config.threshold
        );
        let path = out.join(format!("{}_overlay.png", image.image_id));
        render_overlay(&image.pixels, &result).save(&path)?;
        results.push(result);
    }
    write_report(&out.join("detections.jsonl"), &results)?;
    println!("overlays and detections.jsonl in {}", out.display());
    Ok(())
}
