//! Binary classification metrics over tile scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, DEFECTIVE};
use crate::detect::classify_score;
use crate::error::{Error, Result};
use crate::model::TileClassifier;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

/// A ratio together with whether its denominator was zero (value then 0.0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64) -> Ratio {
    if den == 0.0 {
        Ratio {
            value: 0.0,
            degenerate: true,
        }
    } else {
        Ratio {
            value: num / den,
            degenerate: false,
        }
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.r#fn
    }

    pub fn accuracy(&self) -> Ratio {
        ratio((self.tp + self.tn) as f64, self.total() as f64)
    }

    pub fn precision(&self) -> Ratio {
        ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Ratio {
        ratio(self.tp as f64, (self.tp + self.r#fn) as f64)
    }

    pub fn f1(&self) -> Ratio {
        let (p, r) = (self.precision(), self.recall());
        let f = f1_score(p.value, r.value);
        Ratio {
            degenerate: p.degenerate || r.degenerate || f.degenerate,
            ..f
        }
    }
}

/// Harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> Ratio {
    ratio(2.0 * precision * recall, precision + recall)
}

fn check_labels(scores: usize, labels: &[u8]) -> Result<()> {
    if scores != labels.len() {
        return Err(Error::LengthMismatch {
            scores,
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > DEFECTIVE) {
        return Err(Error::InvalidLabel(bad));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_labels(scores.len(), labels)?;
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in scores.iter().zip(labels) {
        match (classify_score(p, threshold), y) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.r#fn += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
/// Computed by sorting, O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_labels(scores.len(), labels)?;
    let pos = labels.iter().filter(|&&l| l == DEFECTIVE).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Walk groups of tied scores in ascending order; every positive beats all
    // negatives seen in earlier groups and ties half of those in its own group.
    let mut negatives_below = 0usize;
    let mut wins = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..j]
            .iter()
            .filter(|&&k| labels[k] == DEFECTIVE)
            .count();
        let group_neg = (j - i) - group_pos;
        wins += group_pos as f64 * (negatives_below as f64 + 0.5 * group_neg as f64);
        negatives_below += group_neg;
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the evaluated set holds a single class.
    pub auc: Option<f64>,
    pub counts: ConfusionCounts,
    pub threshold: f64,
    /// Metrics whose denominator was zero and were reported as 0.0.
    pub degenerate: Vec<String>,
}

impl MetricsReport {
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let counts = confusion(scores, labels, threshold)?;
        let auc = match auc(scores, labels) {
            Ok(a) => Some(a),
            Err(Error::SingleClass) => None,
            Err(e) => return Err(e),
        };
        let mut degenerate = Vec::new();
        let mut take = |name: &str, r: Ratio| {
            if r.degenerate {
                degenerate.push(name.to_string());
            }
            r.value
        };
        Ok(Self {
            accuracy: take("accuracy", counts.accuracy()),
            precision: take("precision", counts.precision()),
            recall: take("recall", counts.recall()),
            f1: take("f1", counts.f1()),
            auc,
            counts,
            threshold,
            degenerate,
        })
    }

    /// Aligned text table: Accuracy, Precision, Recall, F1 Score, AUC.
    pub fn table(&self, model_name: &str) -> String {
        let auc = self
            .auc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".to_string());
        let name_w = model_name.len().max(5);
        format!(
            "{:<name_w$}  {:>8}  {:>9}  {:>6}  {:>8}  {:>6}\n{:<name_w$}  {:>8.4}  {:>9.4}  {:>6.4}  {:>8.4}  {:>6}\n",
            "Model",
            "Accuracy",
            "Precision",
            "Recall",
            "F1 Score",
            "AUC",
            model_name,
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            auc,
        )
    }
}

/// Scores every tile of `manifest` and reports all metrics at `threshold`.
pub fn evaluate_tiles(
    model: &(impl TileClassifier + Sync),
    manifest: &DatasetManifest,
    threshold: f64,
) -> Result<MetricsReport> {
    if manifest.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scores: Vec<f64> = manifest
        .entries
        .par_iter()
        .map(|e| model.predict_tile(&manifest.load_tile(e)?))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = manifest.entries.iter().map(|e| e.label).collect();
    MetricsReport::from_scores(&scores, &labels, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
            for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
                pairs += 1.0;
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn confusion_enumeration() {
        let c = confusion(&[0.9, 0.2, 0.8, 0.4], &[1, 0, 0, 1], 0.5).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                fp: 1,
                tn: 1,
                r#fn: 1
            }
        );
        let c = confusion(&[1.0; 6], &[1; 6], 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.r#fn), (6, 0, 0, 0));
        assert!(matches!(
            confusion(&[0.1, 0.2], &[1], 0.5),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion(&[0.1], &[3], 0.5),
            Err(Error::InvalidLabel(3))
        ));
    }

    #[test]
    fn f1_matches_reported_rows() {
        assert!((f1_score(0.9505, 0.9647).value - 0.9575).abs() <= 1e-4);
        assert!((f1_score(0.5385, 0.7000).value - 0.6087).abs() <= 1e-4);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let c = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 10,
            r#fn: 0,
        };
        assert_eq!(c.accuracy().value, 1.0);
        for r in [c.precision(), c.recall(), c.f1()] {
            assert_eq!(r.value, 0.0);
            assert!(r.degenerate);
        }
        let report = MetricsReport::from_scores(&[0.1; 10], &[0; 10], 0.5).unwrap();
        assert_eq!(report.degenerate, vec!["precision", "recall", "f1"]);
        assert_eq!(report.auc, None);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 7], &[1, 0, 1, 0, 0, 1, 1]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.3, 0.4], &[1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn auc_matches_pair_counting() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.gen_range(2..120);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            // coarse scores so ties occur
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64 / 19.0).collect();
            assert!((auc(&scores, &labels).unwrap() - brute_auc(&scores, &labels)).abs() < 1e-9);
        }
    }

    #[test]
    fn table_has_report_column_order() {
        let r = MetricsReport::from_scores(&[0.9, 0.2, 0.8, 0.4], &[1, 0, 0, 1], 0.5).unwrap();
        let t = r.table("tiny");
        let header = t.lines().next().unwrap();
        let cols: Vec<&str> = header
            .split("  ")
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        assert_eq!(
            cols,
            [
                "Model",
                "Accuracy",
                "Precision",
                "Recall",
                "F1 Score",
                "AUC"
            ]
        );
        assert!(t.lines().nth(1).unwrap().contains("0.5000"));
    }

    proptest! {
        #[test]
        fn f1_forms_agree(tp in 0usize..500, fp in 0usize..500, tn in 0usize..500, fn_ in 0usize..500) {
            let c = ConfusionCounts { tp, fp, tn, r#fn: fn_ };
            let direct = ratio(2.0 * tp as f64, (2 * tp + fp + fn_) as f64).value;
            prop_assert!((c.f1().value - direct).abs() < 1e-12);
            if c.total() > 0 {
                let acc = c.accuracy().value;
                prop_assert!((0.0..=1.0).contains(&acc));
                prop_assert_eq!(acc == 1.0, fp == 0 && fn_ == 0);
            }
        }

        #[test]
        fn auc_is_invariant_under_monotone_maps(
            data in proptest::collection::vec((0.0f64..1.0, 0u8..2), 2..60),
            a in 0.1f64..5.0, b in -3.0f64..3.0,
        ) {
            let (mut scores, mut labels): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
            labels[0] = 0;
            labels[1] = 1;
            scores.iter_mut().for_each(|s| *s = (*s * 50.0).round() / 50.0);
            let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp() + s.powi(3)).collect();
            prop_assert!((auc(&scores, &labels).unwrap() - auc(&mapped, &labels).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn auc_of_labels_is_one(labels in proptest::collection::vec(0u8..2, 2..50)) {
            let mut labels = labels;
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
        }
    }
}
