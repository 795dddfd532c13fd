//! Renders a synthetic dataset and its annotation manifest.
//!
//! ```text
//! cargo run --example synth_dataset -- [OUT_DIR] [COUNT] [SHAPE]
//! ```
//! SHAPE is one of `rounded-rectangle`, `ellipse`, `polygon`.

use std::path::PathBuf;

use tiledefect::synth::{generate_dataset, ObjectShape, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth-out".into()));
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let shape: ObjectShape = match args.next() {
        Some(s) => serde_json::from_value(serde_json::Value::String(s))?,
        None => ObjectShape::RoundedRectangle,
    };
    let spec = SceneSpec {
        object_shape: shape,
        seed: 42,
        ..SceneSpec::default()
    };
    let manifest = generate_dataset(&spec, count, &out)?;
    for img in &manifest.images {
        let kinds: Vec<&str> = img
            .defects
            .iter()
            .map(|d| d.kind.as_deref().unwrap_or("?"))
            .collect();
        println!("{}  {}x{}  {:?}", img.path, img.width, img.height, kinds);
    }
    println!(
        "wrote {} images to {}",
        manifest.images.len(),
        out.display()
    );
    Ok(())
}
