use serde::{Deserialize, Serialize};

use crate::data_pipeline::DatasetSpec;
use crate::losses::LossWeights;
use crate::models::{DiscriminatorSpec, GeneratorSpec, ModelSpecs, StyleExtractorSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub base_width: usize,
    pub num_residual_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { base_width: 64, num_residual_blocks: 9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleExtractorConfig {
    pub latent_length: usize,
    pub hidden_width: usize,
    pub shared_layers: usize,
    pub unshared_layers_per_domain: usize,
}

impl Default for StyleExtractorConfig {
    fn default() -> Self {
        Self { latent_length: 16, hidden_width: 512, shared_layers: 4, unshared_layers_per_domain: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub base_width: usize,
    pub num_hidden_layers: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_width: 64, num_hidden_layers: 5, leaky_slope: 0.01 }
    }
}

/// Every hyperparameter of a training run. Missing fields take the
/// published defaults; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub max_iterations: u64,
    pub lr_initial: f64,
    /// The learning rate is re-evaluated every this many iterations.
    pub lr_decay_every: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Discriminator updates per generator update.
    pub n_critic: usize,
    pub checkpoint_every: u64,
    pub dataset: DatasetSpec,
    pub generator: GeneratorConfig,
    pub style_extractor: StyleExtractorConfig,
    pub discriminator: DiscriminatorConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 16,
            max_iterations: 400_000,
            lr_initial: 1e-4,
            lr_decay_every: 10,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            n_critic: 5,
            checkpoint_every: 1000,
            dataset: DatasetSpec::default(),
            generator: GeneratorConfig::default(),
            style_extractor: StyleExtractorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    /// CPU-sized run: 64x64 synthetic images, 2000 iterations, narrow
    /// networks. The initial learning rate is raised to 4e-4 because the
    /// whole decay happens in 2000 iterations; at 1e-4 the narrow generator
    /// is still far from converged when the rate reaches zero. Everything
    /// else keeps the published values.
    pub fn desk(seed: u64) -> Self {
        let mut c =
            Self { seed, max_iterations: 2000, checkpoint_every: 500, lr_initial: 4e-4, ..Self::default() };
        c.dataset.image_size = 64;
        c.dataset.crop_size = crate::data_pipeline::CropSize::None;
        c.generator = GeneratorConfig { base_width: 8, num_residual_blocks: 2 };
        c.discriminator.base_width = 8;
        c.discriminator.num_hidden_layers = 4;
        c
    }

    pub fn model_specs(&self) -> ModelSpecs {
        let h = self.dataset.image_size;
        let k = self.dataset.num_domains();
        ModelSpecs {
            generator: GeneratorSpec::new(h, k, self.generator.base_width, self.generator.num_residual_blocks),
            style_extractor: StyleExtractorSpec {
                latent_length: self.style_extractor.latent_length,
                hidden_width: self.style_extractor.hidden_width,
                shared_layers: self.style_extractor.shared_layers,
                unshared_layers_per_domain: self.style_extractor.unshared_layers_per_domain,
                num_domains: k,
                style_length: h,
            },
            discriminator: DiscriminatorSpec {
                image_size: h,
                num_domains: k,
                base_width: self.discriminator.base_width,
                num_hidden_layers: self.discriminator.num_hidden_layers,
                leaky_slope: self.discriminator.leaky_slope,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("lr_decay_every", self.lr_decay_every as f64),
            ("n_critic", self.n_critic as f64),
            ("checkpoint_every", self.checkpoint_every as f64),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v < 1.0) {
            return Err(Error::config_at(*key, "must be at least 1"));
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return Err(Error::config_at("lr_initial", "must be positive"));
        }
        for (key, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config_at(key, "must lie in [0, 1)"));
            }
        }
        self.dataset.validate()?;
        self.weights.validate()?;
        self.model_specs().validate()
    }
}

/// Learning rate used at iteration `t` (0-based): linear decay to zero at
/// `max_iterations`, held constant within each block of `lr_decay_every`.
pub fn lr_schedule(t: u64, config: &TrainConfig) -> f64 {
    if t >= config.max_iterations {
        return 0.0;
    }
    let every = config.lr_decay_every.max(1);
    let held = (t / every) * every;
    config.lr_initial * (1.0 - held as f64 / config.max_iterations as f64).max(0.0)
}
