//! Translation corpora, classifier-based evaluation, latent embeddings and
//! sample grids.

mod classifier;
mod corpus;
mod metrics;
pub mod plot;
mod tsne;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use classifier::{train_classifier, Classifier, ClassifierConfig};
pub use corpus::{generate_translations, TranslationCorpus, TranslationItem, TranslationMode};
pub use metrics::{compute_metrics, EvalMetrics};
pub use tsne::{silhouette_score, tsne_embed, TsneConfig};

use crate::data_pipeline::{derive_seed, Dataset, Split};
use crate::models::{sample_latents, Networks};
use crate::trainer::translate_batch;
use crate::{Error, Result};

/// Classifier evaluation protocols over translated images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Train on self translations, test on self and cross translations.
    Ssc,
    /// Train on self translations, test on cross translations.
    Sc,
    /// Train and test on cross translations.
    Cc,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Ssc, Setting::Sc, Setting::Cc];

    pub fn train_mode(self) -> TranslationMode {
        match self {
            Setting::Ssc | Setting::Sc => TranslationMode::SelfDomain,
            Setting::Cc => TranslationMode::Cross,
        }
    }

    pub fn test_mode(self) -> TranslationMode {
        match self {
            Setting::Ssc => TranslationMode::Both,
            Setting::Sc | Setting::Cc => TranslationMode::Cross,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Ssc => "ssc",
            Setting::Sc => "sc",
            Setting::Cc => "cc",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssc" => Ok(Setting::Ssc),
            "sc" => Ok(Setting::Sc),
            "cc" => Ok(Setting::Cc),
            _ => Err(Error::config(format!("unknown setting `{s}` (expected ssc, sc or cc)"))),
        }
    }
}

/// Trains a classifier on translations labeled by their target domain.
pub fn train_domain_classifier(corpus: &TranslationCorpus, cfg: &ClassifierConfig, seed: u64) -> Result<Classifier> {
    train_classifier(&corpus.images(), &corpus.targets(), corpus.num_domains, cfg, seed)
}

fn score(classifier: &Classifier, corpus: &TranslationCorpus) -> Result<EvalMetrics> {
    if corpus.is_empty() {
        return Err(Error::Evaluation("empty test corpus".into()));
    }
    let images: Vec<&Array3<f32>> = corpus.items.iter().map(|it| &it.image).collect();
    let preds = classifier.predict(&classifier::stack(&images))?;
    compute_metrics(&preds, &corpus.targets(), corpus.num_domains)
}

/// Trains on translations of the training split and tests on translations
/// of the held-out split, as prescribed by `setting`.
pub fn run_experiment_setting(
    setting: Setting,
    nets: &Networks<f32>,
    dataset: &Dataset,
    split: &Split,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<EvalMetrics> {
    let train = generate_translations(nets, dataset, &split.train, setting.train_mode(), seed)?;
    let classifier = train_domain_classifier(&train, cfg, seed)?;
    let test = generate_translations(nets, dataset, &split.test, setting.test_mode(), seed)?;
    score(&classifier, &test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsReport {
    pub ssc: EvalMetrics,
    pub sc: EvalMetrics,
    pub cc: EvalMetrics,
}

impl SettingsReport {
    pub fn get(&self, s: Setting) -> &EvalMetrics {
        match s {
            Setting::Ssc => &self.ssc,
            Setting::Sc => &self.sc,
            Setting::Cc => &self.cc,
        }
    }
}

/// All three settings with shared work: SSC and SC use one classifier, and
/// SC is scored on the cross items of the SSC test corpus. Results equal
/// three separate [`run_experiment_setting`] calls.
pub fn run_all_settings(
    nets: &Networks<f32>,
    dataset: &Dataset,
    split: &Split,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<SettingsReport> {
    let train = generate_translations(nets, dataset, &split.train, TranslationMode::Both, seed)?;
    let test = generate_translations(nets, dataset, &split.test, TranslationMode::Both, seed)?;
    let self_clf = train_domain_classifier(&train.filter(TranslationMode::SelfDomain), cfg, seed)?;
    let cross_clf = train_domain_classifier(&train.filter(TranslationMode::Cross), cfg, seed)?;
    let cross_test = test.filter(TranslationMode::Cross);
    Ok(SettingsReport {
        ssc: score(&self_clf, &test)?,
        sc: score(&self_clf, &cross_test)?,
        cc: score(&cross_clf, &cross_test)?,
    })
}

/// Cluster quality of originals in pixel space and of the generator's
/// bottleneck latents, with their 2-D embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentClusterReport {
    pub num_originals: usize,
    pub num_translations: usize,
    /// Originals, raw pixels, grouped by source domain.
    pub pixel_silhouette: f64,
    /// Cross-domain latents, grouped by target domain.
    pub latent_silhouette: f64,
    pub pixel_embedding_silhouette: f64,
    pub latent_embedding_silhouette: f64,
    pub plots: Vec<PathBuf>,
}

fn to_f64(a: &Array2<f32>) -> Array2<f64> {
    a.mapv(f64::from)
}

/// Bottleneck latents `extract_latent(x, c, E(z, c))` for `(index, target)` pairs.
fn latents(nets: &Networks<f32>, dataset: &Dataset, pairs: &[(usize, usize)], seed: u64) -> Result<Array2<f32>> {
    let latent_length = nets.style_extractor.spec.latent_length;
    let mut rows = Vec::new();
    for chunk in pairs.chunks(32) {
        let x = classifier::stack(&chunk.iter().map(|&(i, _)| &dataset.images[i]).collect::<Vec<_>>());
        let targets: Vec<usize> = chunk.iter().map(|&(_, c)| c).collect();
        let zs: Vec<Array2<f32>> = chunk.iter().map(|&(i, c)| corpus::item_latent(seed, i, c, latent_length)).collect();
        let z = ndarray::concatenate(Axis(0), &zs.iter().map(|a| a.view()).collect::<Vec<_>>()).expect("equal widths");
        let s = nets.style_extractor.infer(&z, &targets)?;
        rows.push(nets.generator.extract_latent(&x, &targets, &s)?);
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Evaluation(e.to_string()))
}

/// Silhouettes and t-SNE plots for `dataset[indices]`. Plots are written
/// to `out_dir` when given.
pub fn latent_cluster_report(
    nets: &Networks<f32>,
    dataset: &Dataset,
    indices: &[usize],
    tsne: &TsneConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<LatentClusterReport> {
    if indices.is_empty() {
        return Err(Error::Evaluation("latent report needs at least one image".into()));
    }
    let k = dataset.num_domains();
    let sources: Vec<usize> = corpus::plan(dataset, indices, TranslationMode::SelfDomain)?.iter().map(|&(_, c)| c).collect();
    let dim = dataset.images[indices[0]].len();
    let mut pixels = Array2::<f64>::zeros((indices.len(), dim));
    for (mut row, &i) in pixels.rows_mut().into_iter().zip(indices) {
        row.iter_mut().zip(dataset.images[i].iter()).for_each(|(d, &v)| *d = f64::from(v));
    }
    let cross = corpus::plan(dataset, indices, TranslationMode::Cross)?;
    let cross_targets: Vec<usize> = cross.iter().map(|&(_, c)| c).collect();
    let cross_latents = to_f64(&latents(nets, dataset, &cross, seed)?);

    let pixel_silhouette = silhouette_score(pixels.view(), &sources)?;
    let latent_silhouette = silhouette_score(cross_latents.view(), &cross_targets)?;
    let pixel_embedding = tsne_embed(pixels.view(), tsne, seed)?;
    let latent_embedding = tsne_embed(cross_latents.view(), tsne, seed)?;

    let mut plots = Vec::new();
    if let Some(dir) = out_dir {
        let dots = |n| vec![plot::Marker::Dot; n];
        let p = dir.join("originals_tsne.png");
        plot::scatter(pixel_embedding.view(), &sources, &dots(sources.len()), k, &p)?;
        plots.push(p);
        let p = dir.join("latent_tsne.png");
        plot::scatter(latent_embedding.view(), &cross_targets, &dots(cross_targets.len()), k, &p)?;
        plots.push(p);

        // originals (self-conditioned, rings) mapped together with their translations
        let all = corpus::plan(dataset, indices, TranslationMode::Both)?;
        let all_latents = to_f64(&latents(nets, dataset, &all, seed)?);
        let mapping = tsne_embed(all_latents.view(), tsne, seed)?;
        let labels: Vec<usize> = all.iter().map(|&(_, c)| c).collect();
        let markers: Vec<plot::Marker> = all
            .iter()
            .map(|&(i, c)| if dataset.labels[i] == c { plot::Marker::Ring } else { plot::Marker::Dot })
            .collect();
        let p = dir.join("mapping_tsne.png");
        plot::scatter(mapping.view(), &labels, &markers, k, &p)?;
        plots.push(p);
    }
    Ok(LatentClusterReport {
        num_originals: indices.len(),
        num_translations: cross.len(),
        pixel_silhouette,
        latent_silhouette,
        pixel_embedding_silhouette: silhouette_score(pixel_embedding.view(), &sources)?,
        latent_embedding_silhouette: silhouette_score(latent_embedding.view(), &cross_targets)?,
        plots,
    })
}

const GRID_STREAM: u64 = 0x6121;

/// Rows are the inputs; columns are the input followed by its translation
/// to every domain. Returns a `[3, n*H, (K+1)*H]` image in `[-1, 1]`.
pub fn sample_grid(nets: &Networks<f32>, images: &[Array3<f32>], seed: u64) -> Result<Array3<f32>> {
    if images.is_empty() {
        return Err(Error::Evaluation("sample grid needs at least one input image".into()));
    }
    let k = nets.generator.spec.num_domains;
    let h = nets.generator.spec.image_size;
    if let Some(bad) = images.iter().find(|im| im.shape() != [3, h, h]) {
        return Err(Error::Evaluation(format!("grid input has shape {:?}, expected [3, {h}, {h}]", bad.shape())));
    }
    let n = images.len();
    let mut inputs = Vec::with_capacity(n * k);
    let mut targets = Vec::with_capacity(n * k);
    for im in images {
        for c in 0..k {
            inputs.push(im.view());
            targets.push(c);
        }
    }
    let x = ndarray::stack(Axis(0), &inputs).expect("equal shapes").into_dyn();
    let latent_length = nets.style_extractor.spec.latent_length;
    let mut z = Array2::zeros((n * k, latent_length));
    for (i, mut row) in z.rows_mut().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, GRID_STREAM, i as u64]));
        row.assign(&sample_latents::<f32, _>(1, latent_length, &mut rng).row(0));
    }
    let y = translate_batch(nets, &x, &targets, &z)?;

    let mut grid = Array3::<f32>::zeros((3, n * h, (k + 1) * h));
    for (r, im) in images.iter().enumerate() {
        grid.slice_mut(s![.., r * h..(r + 1) * h, 0..h]).assign(im);
        for c in 0..k {
            let tile = y.index_axis(Axis(0), r * k + c);
            grid.slice_mut(s![.., r * h..(r + 1) * h, (c + 1) * h..(c + 2) * h]).assign(&tile);
        }
    }
    Ok(grid)
}
