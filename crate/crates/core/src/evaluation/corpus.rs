use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::stack;
use crate::data_pipeline::{derive_seed, Dataset};
use crate::models::{sample_latents, Networks};
use crate::trainer::translate_batch;
use crate::{Error, Result};

const CORPUS_STREAM: u64 = 0xC0E5;
const CHUNK: usize = 32;

/// Which targets each source image is translated to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationMode {
    /// Target equals the source domain.
    #[serde(rename = "self")]
    SelfDomain,
    /// Every other domain.
    Cross,
    Both,
}

impl TranslationMode {
    pub fn targets(self, source: usize, k: usize) -> Vec<usize> {
        (0..k)
            .filter(|&c| match self {
                TranslationMode::SelfDomain => c == source,
                TranslationMode::Cross => c != source,
                TranslationMode::Both => true,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TranslationItem {
    /// Index of the source image in its dataset.
    pub index: usize,
    pub source: usize,
    pub target: usize,
    pub image: Array3<f32>,
}

impl TranslationItem {
    pub fn is_cross(&self) -> bool {
        self.source != self.target
    }
}

#[derive(Debug, Clone)]
pub struct TranslationCorpus {
    pub num_domains: usize,
    pub items: Vec<TranslationItem>,
}

impl TranslationCorpus {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.target).collect()
    }

    pub fn images(&self) -> Vec<Array3<f32>> {
        self.items.iter().map(|it| it.image.clone()).collect()
    }

    /// Items of the given mode, keeping their order.
    pub fn filter(&self, mode: TranslationMode) -> Self {
        let items = self
            .items
            .iter()
            .filter(|it| match mode {
                TranslationMode::SelfDomain => !it.is_cross(),
                TranslationMode::Cross => it.is_cross(),
                TranslationMode::Both => true,
            })
            .cloned()
            .collect();
        Self { num_domains: self.num_domains, items }
    }
}

/// Latent for translating dataset item `index` to `target`; independent of
/// the mode and of which other items are requested.
pub(crate) fn item_latent(seed: u64, index: usize, target: usize, latent_length: usize) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, CORPUS_STREAM, index as u64, target as u64]));
    sample_latents(1, latent_length, &mut rng)
}

/// `(index, target)` pairs in corpus order: by index, then target.
pub(crate) fn plan(dataset: &Dataset, indices: &[usize], mode: TranslationMode) -> Result<Vec<(usize, usize)>> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Evaluation(format!("image index {bad} out of range for {} images", dataset.len())));
    }
    let k = dataset.num_domains();
    Ok(indices.iter().flat_map(|&i| mode.targets(dataset.labels[i], k).into_iter().map(move |c| (i, c))).collect())
}

/// Translates `dataset[indices]` to the targets selected by `mode`, one
/// seeded latent per translation.
pub fn generate_translations(
    nets: &Networks<f32>,
    dataset: &Dataset,
    indices: &[usize],
    mode: TranslationMode,
    seed: u64,
) -> Result<TranslationCorpus> {
    let k = dataset.num_domains();
    if nets.generator.spec.num_domains != k {
        return Err(Error::Evaluation(format!("model has {} domains, dataset {k}", nets.generator.spec.num_domains)));
    }
    let pairs = plan(dataset, indices, mode)?;
    let latent_length = nets.style_extractor.spec.latent_length;
    let mut items = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(CHUNK) {
        let x = stack(&chunk.iter().map(|&(i, _)| &dataset.images[i]).collect::<Vec<_>>());
        let targets: Vec<usize> = chunk.iter().map(|&(_, c)| c).collect();
        let zs: Vec<Array2<f32>> = chunk.iter().map(|&(i, c)| item_latent(seed, i, c, latent_length)).collect();
        let z = ndarray::concatenate(Axis(0), &zs.iter().map(|a| a.view()).collect::<Vec<_>>()).expect("equal widths");
        let y = translate_batch(nets, &x, &targets, &z)?;
        for (&(i, c), img) in chunk.iter().zip(y.axis_iter(Axis(0))) {
            let image = img.to_owned().into_dimensionality().expect("[3, H, H]");
            items.push(TranslationItem { index: i, source: dataset.labels[i], target: c, image });
        }
    }
    Ok(TranslationCorpus { num_domains: k, items })
}
