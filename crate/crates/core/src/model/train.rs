use image::GrayImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{sigmoid, Tensor};
use super::{prepare_input, Classifier, ClassifierConfig, TileClassifier};
use crate::data::{DatasetManifest, DEFECTIVE};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

/// Binary cross-entropy of one prediction.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// A prepared network input with its label.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Tensor,
    pub label: u8,
}

impl Sample {
    pub fn from_tile(tile: &GrayImage, label: u8, input_size: u32) -> Result<Self> {
        if label > DEFECTIVE {
            return Err(Error::InvalidLabel(label));
        }
        Ok(Self {
            input: prepare_input(tile, input_size)?,
            label,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub classifier: Classifier,
    pub config: ClassifierConfig,
    pub history: Vec<EpochStats>,
}

impl TileClassifier for TrainedModel {
    fn predict_tile(&self, tile: &GrayImage) -> Result<f64> {
        self.classifier.predict_tile(tile)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPSILON: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], from: usize) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in from..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPSILON);
        }
    }
}

/// Mean loss and accuracy (threshold 0.5) with dropout disabled.
pub fn evaluate_samples(model: &Classifier, samples: &[Sample]) -> (f64, f64) {
    let stats: Vec<(f64, bool)> = samples
        .par_iter()
        .map(|s| {
            let p = model.predict_prepared(&s.input);
            let y = s.label as f64;
            (bce_loss(p, y), (p > 0.5) == (s.label == DEFECTIVE))
        })
        .collect();
    let n = stats.len().max(1) as f64;
    (
        stats.iter().map(|s| s.0).sum::<f64>() / n,
        stats.iter().filter(|s| s.1).count() as f64 / n,
    )
}

/// Mean BCE over a batch and the gradient of that mean, dropout off.
pub fn batch_loss_and_grad(model: &Classifier, batch: &[Sample]) -> (f64, Vec<f64>) {
    let masks = vec![None; batch.len()];
    let (loss, _, grad) = batch_step(model, batch, masks);
    (loss, grad)
}

fn batch_step(
    model: &Classifier,
    batch: &[Sample],
    masks: Vec<Option<Vec<f64>>>,
) -> (f64, usize, Vec<f64>) {
    let per_sample: Vec<(f64, bool, Vec<f64>)> = batch
        .par_iter()
        .zip(masks)
        .map(|(s, mask)| {
            let trace = model.forward(&s.input, mask);
            let p = sigmoid(trace.logit);
            let y = s.label as f64;
            (
                bce_loss(p, y),
                (p > 0.5) == (s.label == DEFECTIVE),
                model.backward(&trace, p - y),
            )
        })
        .collect();
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    let mut correct = 0;
    for (l, ok, g) in per_sample {
        loss += l;
        correct += ok as usize;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b / n);
    }
    (loss / n, correct, grad)
}

/// Trains every parameter end-to-end with Adam on mean binary cross-entropy.
/// Mini-batches are reshuffled each epoch; all randomness (order and dropout
/// masks) comes from one stream seeded by `config.seed`.
pub fn train_samples(
    mut model: Classifier,
    train: &[Sample],
    val: &[Sample],
    config: &ClassifierConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.dropout_rate = config.dropout_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_7A11);
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let channels = model.arch.feature_channels();
    let keep = 1.0 - config.dropout_rate;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let frozen = epoch < config.freeze_backbone_epochs;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let masks = (0..batch.len())
                .map(|_| {
                    (config.dropout_rate > 0.0).then(|| {
                        (0..channels)
                            .map(|_| {
                                if rng.gen::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                })
                .collect();
            let (loss, ok, grad) = batch_step(&model, &batch, masks);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let from = if frozen { model.head_offset() } else { 0 };
            adam.step(&mut model.params, &grad, from);
            loss_sum += loss * batch.len() as f64;
            correct += ok;
        }
        let (val_loss, val_accuracy) = evaluate_samples(&model, val);
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {}/{}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            stats.epoch,
            config.epochs,
            stats.train_loss,
            stats.train_accuracy,
            stats.val_loss,
            stats.val_accuracy
        );
        history.push(stats);
    }
    Ok(TrainedModel {
        classifier: model,
        config: config.clone(),
        history,
    })
}

fn load_samples(manifest: &DatasetManifest, input_size: u32) -> Result<Vec<Sample>> {
    manifest
        .entries
        .par_iter()
        .map(|e| Sample::from_tile(&manifest.load_tile(e)?, e.label, input_size))
        .collect()
}

/// Loads both manifests' tiles and runs [`train_samples`].
pub fn train(
    model: Classifier,
    train: &DatasetManifest,
    val: &DatasetManifest,
    config: &ClassifierConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let size = model.backbone.input_size;
    let train_set = load_samples(train, size)?;
    let val_set = load_samples(val, size)?;
    train_samples(model, &train_set, &val_set, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_classifier, BackboneSpec, TINY};

    fn separable(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let v = if label == 1 { 255 } else { 0 };
                Sample::from_tile(&GrayImage::from_pixel(24, 24, image::Luma([v])), label, 24)
                    .unwrap()
            })
            .collect()
    }

    fn cfg(epochs: usize) -> ClassifierConfig {
        ClassifierConfig {
            epochs,
            learning_rate: 1e-2,
            seed: 1,
            ..Default::default()
        }
    }

    fn fresh(config: &ClassifierConfig) -> Classifier {
        build_classifier(&BackboneSpec::resolve(TINY).unwrap(), config).unwrap()
    }

    #[test]
    fn loss_is_finite_at_extremes() {
        for p in [0.0, 1.0, 0.5] {
            for y in [0.0, 1.0] {
                assert!(bce_loss(p, y).is_finite());
            }
        }
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn separable_tiles_are_learned_quickly() {
        let config = cfg(5);
        let data = separable(200);
        let trained = train_samples(fresh(&config), &data, &data[..20], &config).unwrap();
        assert_eq!(trained.history.len(), 5);
        let (_, acc) = evaluate_samples(&trained.classifier, &data);
        assert!(acc >= 0.99, "accuracy {acc}");
        assert!(trained.history.last().unwrap().train_loss < trained.history[0].train_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let config = cfg(2);
        let data = separable(40);
        let a = train_samples(fresh(&config), &data, &data, &config).unwrap();
        let b = train_samples(fresh(&config), &data, &data, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let config = cfg(1);
        let data = separable(4);
        assert!(matches!(
            train_samples(fresh(&config), &data, &data, &cfg(0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train_samples(fresh(&config), &[], &data, &config),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn frozen_backbone_only_moves_head() {
        let config = ClassifierConfig {
            freeze_backbone_epochs: 1,
            ..cfg(1)
        };
        let data = separable(16);
        let start = fresh(&config);
        let trained = train_samples(start.clone(), &data, &data, &config).unwrap();
        let off = start.head_offset();
        assert_eq!(start.params[..off], trained.classifier.params[..off]);
        assert_ne!(start.params[off..], trained.classifier.params[off..]);
    }
}
