//! Crops one synthetic image to its object and labels a tile grid.
//!
//! ```text
//! cargo run --example crop_and_tile -- [MxN]
//! ```

use tiledefect::preprocess::{compute_crop_box, crop_and_remap, tile_and_label, CannyParams};
use tiledefect::synth::{generate_image, SceneSpec};
use tiledefect::GridSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid: GridSpec = match std::env::args().nth(1) {
        Some(s) => s.parse()?,
        None => GridSpec::default(),
    };
    let spec = SceneSpec {
        seed: 7,
        defect_count: (3, 3),
        ..SceneSpec::default()
    };
    let image = generate_image(&spec, 0)?;
    let crop = compute_crop_box(&image, &CannyParams::default());
    println!(
        "{} is {}x{}, object crop [{}, {}) x [{}, {})",
        image.image_id,
        image.width(),
        image.height(),
        crop.x0,
        crop.x1,
        crop.y0,
        crop.y1
    );
    let cropped = crop_and_remap(&image, crop);
    for d in &cropped.image.defects {
        println!(
            "  defect ({}, {})-({}, {}) in crop coordinates",
            d.x_min, d.y_min, d.x_max, d.y_max
        );
    }

    let tiles = tile_and_label(&cropped.image, grid);
    println!(
        "{} tiles on a {}x{} grid (# = defective):",
        tiles.len(),
        grid.m,
        grid.n
    );
    for row in 0..grid.n {
        let line: String = (0..grid.m)
            .map(|col| {
                let t = tiles
                    .iter()
                    .find(|t| (t.col, t.row) == (col, row))
                    .expect("every cell");
                if t.label == 1 {
                    '#'
                } else {
                    '.'
                }
            })
            .collect();
        println!("  {line}");
    }
    Ok(())
}
