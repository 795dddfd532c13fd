//! The tile classifier: input rescaling, a convolutional backbone, global
//! average pooling, dropout and a single sigmoid unit.

pub mod layers;
mod persist;
mod train;

use image::imageops::FilterType;
use image::GrayImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use layers::{Conv3x3, Tensor};

pub use persist::{load_model, save_model, DESCRIPTOR_FILE, PARAMS_FILE};
pub use train::{
    batch_loss_and_grad, bce_loss, evaluate_samples, train, train_samples, EpochStats, Sample,
    TrainedModel,
};

/// Anything that turns a tile raster into a defect probability.
pub trait TileClassifier {
    fn predict_tile(&self, tile: &GrayImage) -> Result<f64>;
}

/// Registry entry for a feature extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    /// Approximate layer count class.
    pub depth_class: String,
    pub input_size: u32,
    pub pretrained: bool,
}

pub const TINY: &str = "tiny";

/// Names accepted by [`BackboneSpec::resolve`].
pub const BACKBONES: [&str; 4] = [
    "xception-class",
    "resnet101v2-class",
    "inceptionresnetv2-class",
    TINY,
];

impl BackboneSpec {
    pub fn resolve(name: &str) -> Result<Self> {
        let (depth, size, pretrained) = match name {
            "xception-class" => ("~100", 299, true),
            "resnet101v2-class" => ("~200", 224, true),
            "inceptionresnetv2-class" => ("~400", 299, true),
            TINY => ("desk-scale", 24, false),
            _ => return Err(Error::UnknownBackbone(name.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            depth_class: depth.to_string(),
            input_size: size,
            pretrained,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs at the start of training during which only the head is updated.
    pub freeze_backbone_epochs: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            dropout_rate: 0.2,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-4,
            seed: 0,
            freeze_backbone_epochs: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Maps 8-bit intensities onto [-1, 1].
pub fn rescale_pixel(v: f64) -> f64 {
    v / 127.5 - 1.0
}

pub fn rescale_pixels(raster: &GrayImage) -> Vec<f64> {
    raster
        .as_raw()
        .iter()
        .map(|&v| rescale_pixel(v as f64))
        .collect()
}

/// Bilinear resize to the backbone's square input, then rescale.
pub fn prepare_input(tile: &GrayImage, size: u32) -> Result<Tensor> {
    if tile.width() == 0 || tile.height() == 0 {
        return Err(Error::Config("cannot classify an empty tile".into()));
    }
    let data = if tile.dimensions() == (size, size) {
        rescale_pixels(tile)
    } else {
        rescale_pixels(&image::imageops::resize(
            tile,
            size,
            size,
            FilterType::Triangle,
        ))
    };
    Ok(Tensor {
        c: 1,
        h: size as usize,
        w: size as usize,
        data,
    })
}

/// Channel widths of the tiny backbone's three conv blocks.
const TINY_CHANNELS: [usize; 3] = [8, 16, 32];

/// Network layout. Parameters live in one flat vector:
/// each conv's weights then biases, then head weights, then head bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub convs: Vec<Conv3x3>,
    /// Number of 2x2 max pools; one follows each of the first `pools` convs.
    pub pools: usize,
    pub input_size: u32,
}

impl Architecture {
    pub fn tiny(input_size: u32) -> Self {
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for &out_ch in &TINY_CHANNELS {
            convs.push(Conv3x3 { in_ch, out_ch });
            in_ch = out_ch;
        }
        Self {
            convs,
            pools: 2,
            input_size,
        }
    }

    pub fn feature_channels(&self) -> usize {
        self.convs.last().map(|c| c.out_ch).unwrap_or(1)
    }

    pub fn backbone_len(&self) -> usize {
        self.convs.iter().map(Conv3x3::param_len).sum()
    }

    pub fn param_len(&self) -> usize {
        self.backbone_len() + self.feature_channels() + 1
    }

    fn conv_offsets(&self) -> Vec<usize> {
        self.convs
            .iter()
            .scan(0, |off, c| {
                let start = *off;
                *off += c.param_len();
                Some(start)
            })
            .collect()
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each conv.
    conv_inputs: Vec<Tensor>,
    /// Post-ReLU output of each conv.
    activations: Vec<Tensor>,
    pool_args: Vec<Vec<usize>>,
    /// Pooled features after dropout.
    features: Vec<f64>,
    dropout_mask: Option<Vec<f64>>,
    pub logit: f64,
}

/// Built classifier: backbone spec, layout and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub backbone: BackboneSpec,
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub dropout_rate: f64,
}

/// Assembles an untrained classifier. Conv weights are He-normal, head
/// weights Glorot-uniform and every bias zero, all from `config.seed`.
pub fn build_classifier(backbone: &BackboneSpec, config: &ClassifierConfig) -> Result<Classifier> {
    let spec = BackboneSpec::resolve(&backbone.name)?;
    if spec.pretrained {
        return Err(Error::BackboneUnavailable(spec.name));
    }
    config.validate()?;
    let arch = Architecture::tiny(backbone.input_size);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Vec::with_capacity(arch.param_len());
    for conv in &arch.convs {
        let std = (2.0 / (conv.in_ch * 9) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        params.extend((0..conv.weight_len()).map(|_| normal.sample(&mut rng)));
        params.extend(std::iter::repeat_n(0.0, conv.out_ch));
    }
    let fan = arch.feature_channels();
    let limit = (6.0 / (fan + 1) as f64).sqrt();
    let uniform = Uniform::new_inclusive(-limit, limit);
    params.extend((0..fan).map(|_| uniform.sample(&mut rng)));
    params.push(0.0);
    Ok(Classifier {
        backbone: BackboneSpec {
            input_size: backbone.input_size,
            ..spec
        },
        arch,
        params,
        dropout_rate: config.dropout_rate,
    })
}

impl Classifier {
    pub fn head_offset(&self) -> usize {
        self.arch.backbone_len()
    }

    /// Head weights followed by the head bias.
    pub fn head(&self) -> &[f64] {
        &self.params[self.head_offset()..]
    }

    pub fn head_mut(&mut self) -> &mut [f64] {
        let off = self.head_offset();
        &mut self.params[off..]
    }

    /// Backbone forward pass: conv, ReLU and (for the first blocks) max-pool.
    fn backbone_forward(
        &self,
        input: &Tensor,
    ) -> (Tensor, Vec<Tensor>, Vec<Tensor>, Vec<Vec<usize>>) {
        let offsets = self.arch.conv_offsets();
        let mut x = input.clone();
        let mut conv_inputs = Vec::with_capacity(self.arch.convs.len());
        let mut activations = Vec::with_capacity(self.arch.convs.len());
        let mut pool_args = Vec::new();
        for (k, conv) in self.arch.convs.iter().enumerate() {
            let p = &self.params[offsets[k]..offsets[k] + conv.param_len()];
            let mut y = conv.forward(p, &x);
            layers::relu_in_place(&mut y);
            conv_inputs.push(x);
            activations.push(y.clone());
            x = if k < self.arch.pools {
                let (pooled, arg) = layers::max_pool2(&y);
                pool_args.push(arg);
                pooled
            } else {
                y
            };
        }
        (x, conv_inputs, activations, pool_args)
    }

    /// Forward pass. `dropout_mask`, when given, holds the inverted-dropout
    /// multiplier of each pooled feature.
    pub fn forward(&self, input: &Tensor, dropout_mask: Option<Vec<f64>>) -> Trace {
        let (fmap, conv_inputs, activations, pool_args) = self.backbone_forward(input);
        let mut features = layers::global_avg_pool(&fmap);
        if let Some(mask) = &dropout_mask {
            features.iter_mut().zip(mask).for_each(|(f, m)| *f *= m);
        }
        let head = self.head();
        let (w, b) = head.split_at(features.len());
        let logit = b[0] + features.iter().zip(w).map(|(f, w)| f * w).sum::<f64>();
        Trace {
            conv_inputs,
            activations,
            pool_args,
            features,
            dropout_mask,
            logit,
        }
    }

    /// Gradient of the loss with respect to every parameter, given dL/dlogit.
    pub fn backward(&self, trace: &Trace, dlogit: f64) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let head_off = self.head_offset();
        let channels = trace.features.len();
        for (g, f) in grad[head_off..head_off + channels]
            .iter_mut()
            .zip(&trace.features)
        {
            *g = dlogit * f;
        }
        grad[head_off + channels] = dlogit;

        let w = &self.params[head_off..head_off + channels];
        let mut dpooled: Vec<f64> = w.iter().map(|w| w * dlogit).collect();
        if let Some(mask) = &trace.dropout_mask {
            dpooled.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }

        let last = trace.activations.last().expect("at least one conv");
        let mut dx = layers::global_avg_pool_backward((last.c, last.h, last.w), &dpooled);
        let offsets = self.arch.conv_offsets();
        for k in (0..self.arch.convs.len()).rev() {
            let act = &trace.activations[k];
            if k < self.arch.pools {
                dx = layers::max_pool2_backward((act.c, act.h, act.w), &trace.pool_args[k], &dx);
            }
            layers::relu_backward(act, &mut dx);
            let conv = &self.arch.convs[k];
            let range = offsets[k]..offsets[k] + conv.param_len();
            dx = conv.backward(
                &self.params[range.clone()],
                &trace.conv_inputs[k],
                &dx,
                &mut grad[range],
            );
        }
        grad
    }

    /// Probability of the defective class, dropout disabled.
    pub fn predict_prepared(&self, input: &Tensor) -> f64 {
        layers::sigmoid(self.forward(input, None).logit)
    }

    pub fn predict_batch(&self, tiles: &[GrayImage]) -> Result<Vec<f64>> {
        tiles.iter().map(|t| self.predict_tile(t)).collect()
    }
}

impl TileClassifier for Classifier {
    fn predict_tile(&self, tile: &GrayImage) -> Result<f64> {
        Ok(self.predict_prepared(&prepare_input(tile, self.backbone.input_size)?))
    }
}
