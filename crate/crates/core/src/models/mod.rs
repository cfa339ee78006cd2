//! Generator, style extractor and discriminator.
//!
//! All three networks are generic over the element type so the same code
//! trains in `f32` and is gradient-checked in `f64`.

mod discriminator;
mod generator;
mod style_extractor;

use rand::Rng;
use serde::{Deserialize, Serialize};
use styleshift_nn::{Parameterized, Scalar};

pub use discriminator::{DiscCache, DiscLinearCache, Discriminator};
pub use generator::{build_generator_input, GenCache, GenGrads, Generator};
pub use style_extractor::{StyleCache, StyleExtractor};

use crate::{Error, Result};

/// Std of the zero-mean normal used for generator convolution kernels.
pub const CONV_INIT_STD: f64 = 0.02;

/// He-normal std for a layer followed by a ReLU-like activation.
pub(crate) fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub image_size: usize,
    pub num_domains: usize,
    pub base_width: usize,
    pub num_residual_blocks: usize,
    /// Length `S` of the style code; equal to `image_size` because the code
    /// is tiled row-wise into one input channel.
    pub style_length: usize,
}

impl GeneratorSpec {
    pub fn new(image_size: usize, num_domains: usize, base_width: usize, num_residual_blocks: usize) -> Self {
        Self { image_size, num_domains, base_width, num_residual_blocks, style_length: image_size }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::config_at("dataset.image_size", "generator needs a positive multiple of 4"));
        }
        if self.style_length != self.image_size {
            return Err(Error::config_at(
                "generator.style_length",
                format!("style length {} must equal image size {}", self.style_length, self.image_size),
            ));
        }
        if self.base_width == 0 {
            return Err(Error::config_at("generator.base_width", "must be positive"));
        }
        if self.num_domains == 0 {
            return Err(Error::config_at("dataset.domain_names", "need at least one domain"));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        3 + self.num_domains + 1
    }

    /// Channel count of the bottleneck, which is also the latent length.
    pub fn bottleneck_channels(&self) -> usize {
        self.base_width * 4
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleExtractorSpec {
    pub latent_length: usize,
    pub hidden_width: usize,
    pub shared_layers: usize,
    pub unshared_layers_per_domain: usize,
    pub num_domains: usize,
    pub style_length: usize,
}

impl StyleExtractorSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("style_extractor.latent_length", self.latent_length),
            ("style_extractor.hidden_width", self.hidden_width),
            ("style_extractor.shared_layers", self.shared_layers),
            ("style_extractor.unshared_layers_per_domain", self.unshared_layers_per_domain),
            ("dataset.domain_names", self.num_domains),
            ("generator.style_length", self.style_length),
        ];
        match positive.iter().find(|(_, v)| *v == 0) {
            Some((key, _)) => Err(Error::config_at(*key, "must be positive")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub image_size: usize,
    pub num_domains: usize,
    pub base_width: usize,
    pub num_hidden_layers: usize,
    pub leaky_slope: f64,
}

impl DiscriminatorSpec {
    /// Number of stride-2 convolutions in the trunk.
    pub fn num_downsamplings(&self) -> usize {
        1 + self.num_hidden_layers
    }

    /// Side of the patch score map.
    pub fn output_size(&self) -> usize {
        self.image_size >> self.num_downsamplings()
    }

    pub fn validate(&self) -> Result<()> {
        let factor = 1usize.checked_shl(self.num_downsamplings() as u32).unwrap_or(0);
        if factor == 0 || self.image_size % factor != 0 || self.image_size < factor {
            return Err(Error::config_at(
                "discriminator.num_hidden_layers",
                format!(
                    "image size {} is not divisible by 2^{} (input layer + {} hidden layers)",
                    self.image_size,
                    self.num_downsamplings(),
                    self.num_hidden_layers
                ),
            ));
        }
        if self.base_width == 0 {
            return Err(Error::config_at("discriminator.base_width", "must be positive"));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::config_at("discriminator.leaky_slope", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// The three architecture descriptions of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpecs {
    pub generator: GeneratorSpec,
    pub style_extractor: StyleExtractorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl ModelSpecs {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.style_extractor.validate()?;
        self.discriminator.validate()?;
        let g = &self.generator;
        if self.style_extractor.style_length != g.style_length
            || self.style_extractor.num_domains != g.num_domains
            || self.discriminator.num_domains != g.num_domains
            || self.discriminator.image_size != g.image_size
        {
            return Err(Error::config("generator, style extractor and discriminator specs disagree"));
        }
        Ok(())
    }
}

/// G, E and D together.
#[derive(Debug, Clone)]
pub struct Networks<T> {
    pub generator: Generator<T>,
    pub style_extractor: StyleExtractor<T>,
    pub discriminator: Discriminator<T>,
}

impl<T: Scalar> Networks<T> {
    pub fn new<R: Rng + ?Sized>(specs: &ModelSpecs, rng: &mut R) -> Result<Self> {
        specs.validate()?;
        Ok(Self {
            generator: Generator::new(specs.generator.clone(), rng)?,
            style_extractor: StyleExtractor::new(specs.style_extractor.clone(), rng)?,
            discriminator: Discriminator::new(specs.discriminator.clone(), rng)?,
        })
    }

    pub fn specs(&self) -> ModelSpecs {
        ModelSpecs {
            generator: self.generator.spec.clone(),
            style_extractor: self.style_extractor.spec.clone(),
            discriminator: self.discriminator.spec.clone(),
        }
    }

    /// Every parameter in checkpoint order: G, then E, then D.
    pub fn modules(&self) -> [(&'static str, &dyn Parameterized<T>); 3] {
        [
            ("generator", &self.generator as &dyn Parameterized<T>),
            ("style_extractor", &self.style_extractor),
            ("discriminator", &self.discriminator),
        ]
    }

    pub fn named_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.modules().iter().flat_map(|(name, m)| m.named_shapes(name)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.modules().iter().map(|(_, m)| m.num_params()).sum()
    }
}

/// Samples a `[B, latent_length]` standard normal latent batch.
pub fn sample_latents<T: Scalar, R: Rng + ?Sized>(batch: usize, latent_length: usize, rng: &mut R) -> ndarray::Array2<T> {
    let normal = rand_distr::StandardNormal;
    ndarray::Array2::from_shape_simple_fn((batch, latent_length), || T::lit(rng.sample::<f64, _>(normal)))
}
