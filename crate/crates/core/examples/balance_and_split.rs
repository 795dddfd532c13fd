//! Tiles a small synthetic dataset, balances the classes with dihedral
//! augmentation and makes a stratified split.
//!
//! ```text
//! cargo run --example balance_and_split -- [OUT_DIR]
//! ```

use std::path::PathBuf;

use tiledefect::enhance::{balance_dataset, split_dataset, SplitSpec};
use tiledefect::preprocess::{preprocess_dataset, PreprocessConfig};
use tiledefect::synth::{generate_image, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "balance-out".into()),
    );
    let spec = SceneSpec {
        seed: 1,
        ..SceneSpec::default()
    };
    let images = (0..10)
        .map(|i| generate_image(&spec, i))
        .collect::<Result<Vec<_>, _>>()?;

    let enhanced = preprocess_dataset(
        &images,
        &PreprocessConfig::default(),
        &out.join("tiles"),
        None,
    )?;
    let c = enhanced.counts;
    println!(
        "enhanced: {} tiles, {} defective / {} non-defective",
        enhanced.len(),
        c.defective,
        c.non_defective
    );

    let balanced = balance_dataset(&enhanced, 1, &out.join("balanced"), None)?;
    let c = balanced.counts;
    println!(
        "balanced: {} tiles, {} defective / {} non-defective",
        balanced.len(),
        c.defective,
        c.non_defective
    );

    let splits = split_dataset(
        &balanced,
        &SplitSpec {
            seed: 1,
            ..SplitSpec::default()
        },
    )?;
    for (name, m) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        println!(
            "{name:>5}: {} tiles ({} defective)",
            m.len(),
            m.counts.defective
        );
        m.save(&out.join("balanced").join(format!("{name}.json")))?;
    }
    Ok(())
}
