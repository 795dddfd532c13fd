//! Computes the classification report for a set of scores and labels.
//!
//! ```text
//! cargo run --example evaluate_metrics
//! ```

use tiledefect::metrics::{f1_score, MetricsReport};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scores = [0.95, 0.91, 0.72, 0.70, 0.66, 0.41, 0.38, 0.30, 0.12, 0.05];
    let labels = [1, 1, 1, 0, 1, 0, 1, 0, 0, 0];
    for threshold in [0.5, 0.7] {
        let report = MetricsReport::from_scores(&scores, &labels, threshold)?;
        println!("threshold {threshold}");
        print!("{}", report.table("example"));
        println!("{:?}\n", report.counts);
    }
    println!("f1(0.9505, 0.9647) = {:.4}", f1_score(0.9505, 0.9647).value);
    Ok(())
}
