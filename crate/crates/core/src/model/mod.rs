//! The roast classifier: a convolutional backbone followed by a
//! batch-norm / dropout / dense head, its training loop, k-fold driver and
//! single-file artifact format.

mod adam;
pub mod artifact;
pub mod backbone;
pub mod head;
pub(crate) mod nn;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use artifact::{
    check_compatible, load_backbone, load_model, predict, save_model, ArtifactMeta, HeadLayout, MetricsSummary,
    ModelArtifact,
};
pub use backbone::{
    Backbone, BackboneRegistry, BackboneSpec, ResolvedBackbone, Tensor, PRETRAINED, SMALL_CNN, TINY_CNN,
};
pub use head::Head;
pub use train::{
    prepare_samples, train, train_kfold, train_prepared, EpochRecord, KFoldOutcome, PreparedSet, TrainingHistory,
};

use crate::class::RoastClass;
use crate::dataset::SplitRatios;
use crate::error::{Error, Result};
use crate::imaging::AugmentConfig;

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub split_ratios: SplitRatios,
    pub target_width: usize,
    pub target_height: usize,
    pub batch_size: usize,
    pub hidden_activation: String,
    pub output_activation: String,
    pub optimizer: String,
    pub learning_rate: f64,
    pub k_folds: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub hidden_units: usize,
    pub batch_norm_momentum: f64,
    pub backbone: BackboneSpec,
    /// Apply random geometric augmentation to training images.
    pub augment: bool,
    pub augmentation: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            split_ratios: SplitRatios::default(),
            target_width: 224,
            target_height: 224,
            batch_size: 32,
            hidden_activation: "relu".into(),
            output_activation: "softmax".into(),
            optimizer: "adam".into(),
            learning_rate: 1e-5,
            k_folds: 5,
            epochs: 20,
            dropout_rate: 0.3,
            hidden_units: 64,
            batch_norm_momentum: 0.9,
            backbone: BackboneSpec::default(),
            augment: true,
            augmentation: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        self.split_ratios.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.batch_norm_momentum) {
            return fail(format!("batch_norm_momentum must be in [0, 1), got {}", self.batch_norm_momentum));
        }
        if self.k_folds < 2 {
            return fail(format!("k_folds must be at least 2, got {}", self.k_folds));
        }
        if self.hidden_units == 0 {
            return fail("hidden_units must be at least 1".into());
        }
        if self.target_width == 0 || self.target_height == 0 {
            return fail("target size must be non-zero".into());
        }
        if self.hidden_activation != "relu" {
            return fail(format!("unsupported hidden activation {:?}", self.hidden_activation));
        }
        if self.output_activation != "softmax" {
            return fail(format!("unsupported output activation {:?}", self.output_activation));
        }
        if self.optimizer != "adam" {
            return fail(format!("unsupported optimizer {:?}", self.optimizer));
        }
        self.augmentation.validate()?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Indexed by [`RoastClass::index`].
    pub probabilities: [f64; RoastClass::COUNT],
    pub predicted_class: RoastClass,
    pub confidence_percent: f64,
}

impl Prediction {
    pub fn from_logits(logits: &[f32]) -> Result<Self> {
        if logits.len() != RoastClass::COUNT {
            return Err(Error::Shape(format!("expected {} logits, got {}", RoastClass::COUNT, logits.len())));
        }
        let wide: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
        let p = softmax(&wide)?;
        let probabilities = [p[0], p[1], p[2], p[3]];
        let mut best = 0;
        for (i, v) in probabilities.iter().enumerate() {
            if *v > probabilities[best] {
                best = i;
            }
        }
        Ok(Prediction {
            probabilities,
            predicted_class: RoastClass::from_index(best).expect("index below class count"),
            confidence_percent: 100.0 * probabilities[best],
        })
    }

    /// `"<level> (<pp.p>%)"`.
    pub fn display_line(&self) -> String {
        format!("{} ({:.1}%)", self.predicted_class, self.confidence_percent)
    }
}

/// Backbone plus head.
#[derive(Debug, Clone)]
pub struct Network {
    pub backbone: Box<dyn Backbone>,
    pub head: Head,
    pub input_height: usize,
    pub input_width: usize,
}

impl Network {
    fn check(&self, input: &[f32]) -> Result<()> {
        let expected = 3 * self.input_height * self.input_width;
        if input.len() != expected {
            return Err(Error::Shape(format!("network input has {} values, expected {expected}", input.len())));
        }
        Ok(())
    }

    /// Inference-mode logits for one CHW input.
    pub fn logits(&self, input: &[f32]) -> Result<Vec<f32>> {
        self.check(input)?;
        let features = self.backbone.forward(input, self.input_height, self.input_width);
        Ok(self.head.logits(&features))
    }

    pub fn predict_input(&self, input: &[f32]) -> Result<Prediction> {
        Prediction::from_logits(&self.logits(input)?)
    }

    /// One prediction per input, in order.
    pub fn predict_batch(&self, inputs: &[Vec<f32>]) -> Result<Vec<Prediction>> {
        inputs.par_iter().map(|x| self.predict_input(x)).collect()
    }
}

/// An untrained network plus how its backbone was obtained.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub network: Network,
    pub backbone_id: String,
    pub frozen: bool,
    pub fallback: bool,
}

pub fn build_model(config: &TrainingConfig) -> Result<BuiltModel> {
    build_model_with(config, &BackboneRegistry::default())
}

pub fn build_model_with(config: &TrainingConfig, registry: &BackboneRegistry) -> Result<BuiltModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let resolved = registry.resolve(&config.backbone, &mut rng)?;
    resolved.backbone.check_input(config.target_height, config.target_width)?;
    let head = Head::new(
        resolved.backbone.feature_dim(),
        config.hidden_units,
        RoastClass::COUNT,
        config.dropout_rate as f32,
        config.batch_norm_momentum as f32,
        &mut rng,
    );
    Ok(BuiltModel {
        network: Network {
            backbone: resolved.backbone,
            head,
            input_height: config.target_height,
            input_width: config.target_width,
        },
        backbone_id: resolved.backbone_id,
        frozen: resolved.frozen,
        fallback: resolved.fallback,
    })
}
