//! Small CNN domain classifier trained from scratch on translated images.

use ndarray::{Array2, Array3, ArrayD, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use styleshift_nn::{Adam, AdamConfig, Backprop, Conv2d, Layer, Linear, Parameterized, Sequential};

use crate::data_pipeline::derive_seed;
use crate::losses::classification_loss_grad;
use crate::{Error, Result};

const INIT_STREAM: u64 = 0xC1A5;
const SHUFFLE_STREAM: u64 = 0x5F1E;
const MIN_PER_CLASS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Width of the first conv block; each later block doubles it.
    pub base_width: usize,
    pub num_blocks: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    pub holdout_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { base_width: 8, num_blocks: 4, max_epochs: 40, batch_size: 32, lr: 1e-3, patience: 6, holdout_fraction: 0.1 }
    }
}

impl ClassifierConfig {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.base_width == 0 || self.num_blocks == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::config_at("classifier", "widths, blocks, epochs and batch size must be positive"));
        }
        if image_size >> self.num_blocks == 0 || image_size % (1 << self.num_blocks) != 0 {
            return Err(Error::config_at("classifier.num_blocks", format!("{image_size} is not divisible by 2^{}", self.num_blocks)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config_at("classifier.lr", "must be positive"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::config_at("classifier.holdout_fraction", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

/// Stride-2 conv blocks, global average pool, linear head.
#[derive(Debug, Clone)]
pub struct Classifier {
    net: Sequential<f32>,
    pub num_classes: usize,
    pub image_size: usize,
}

impl Classifier {
    pub fn new<R: rand::Rng + ?Sized>(image_size: usize, num_classes: usize, cfg: &ClassifierConfig, rng: &mut R) -> Result<Self> {
        cfg.validate(image_size)?;
        let mut net = Sequential::new();
        let mut c_in = 3;
        for i in 0..cfg.num_blocks {
            let c_out = cfg.base_width << i;
            let std = (2.0 / (c_in * 16) as f64).sqrt();
            net.push(format!("block{}.conv", i + 1), Layer::Conv(Conv2d::new(c_in, c_out, 4, 2, 1, true, std, rng)));
            net.push(format!("block{}.lrelu", i + 1), Layer::LeakyRelu(0.2));
            c_in = c_out;
        }
        net.push("pool", Layer::GlobalAvgPool);
        // zero head: class rows only ever see their own class's gradient at the start
        net.push("head", Layer::Linear(Linear::new(c_in, num_classes, 0.0, rng)));
        Ok(Self { net, num_classes, image_size })
    }

    pub fn logits(&self, images: &ArrayD<f32>) -> Result<Array2<f32>> {
        const CHUNK: usize = 64;
        let n = images.shape()[0];
        let mut out = Array2::zeros((n, self.num_classes));
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let y = self.net.infer(images.slice_axis(Axis(0), (start..end).into()).to_owned())?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&y.into_dimensionality::<ndarray::Ix2>().expect("[B, K]"));
        }
        Ok(out)
    }

    pub fn predict(&self, images: &ArrayD<f32>) -> Result<Vec<usize>> {
        Ok(self
            .logits(images)?
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().fold((0, f32::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
            .collect())
    }
}

pub(crate) fn stack(images: &[&Array3<f32>]) -> ArrayD<f32> {
    let views: Vec<_> = images.iter().map(|a| a.view()).collect();
    ndarray::stack(Axis(0), &views).expect("equal image shapes").into_dyn()
}

/// Seeded stratified holdout: about `fraction` of every class, at least one item.
fn holdout(labels: &[usize], k: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut fit, mut held) = (Vec::new(), Vec::new());
    for c in 0..k {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        let n_held = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1);
        held.extend_from_slice(&members[..n_held]);
        fit.extend_from_slice(&members[n_held..]);
    }
    fit.sort_unstable();
    held.sort_unstable();
    (fit, held)
}

/// Trains on `(image, label)` pairs with early stopping on a stratified
/// held-out slice; returns the weights with the best held-out score.
pub fn train_classifier(images: &[Array3<f32>], labels: &[usize], k: usize, cfg: &ClassifierConfig, seed: u64) -> Result<Classifier> {
    if images.len() != labels.len() {
        return Err(Error::Evaluation(format!("{} images for {} labels", images.len(), labels.len())));
    }
    if k < 2 {
        return Err(Error::Evaluation("a classifier needs at least two classes".into()));
    }
    let mut counts = vec![0usize; k];
    for &l in labels {
        *counts.get_mut(l).ok_or_else(|| Error::Evaluation(format!("label {l} out of range for {k} classes")))? += 1;
    }
    let short: Vec<String> =
        counts.iter().enumerate().filter(|(_, &n)| n < MIN_PER_CLASS).map(|(c, n)| format!("{c} ({n} items)")).collect();
    if !short.is_empty() {
        return Err(Error::Evaluation(format!(
            "classes missing or below {MIN_PER_CLASS} items: {}",
            short.join(", ")
        )));
    }
    let size = images[0].shape()[1];
    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, INIT_STREAM]));
    let mut model = Classifier::new(size, k, cfg, &mut init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, SHUFFLE_STREAM]));
    let (mut fit, held) = holdout(labels, k, cfg.holdout_fraction, &mut rng);
    let held_x = stack(&held.iter().map(|&i| &images[i]).collect::<Vec<_>>());
    let held_y: Vec<usize> = held.iter().map(|&i| labels[i]).collect();

    let mut opt = Adam::new(AdamConfig::default(), &[&model.net]);
    let score = |m: &Classifier| -> Result<(usize, f64)> {
        let logits = m.logits(&held_x)?;
        let (loss, _) = classification_loss_grad(&logits, &held_y)?;
        let preds = m.predict(&held_x)?;
        Ok((preds.iter().zip(&held_y).filter(|(p, t)| p == t).count(), loss))
    };
    let better = |a: (usize, f64), b: (usize, f64)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    let mut best = (model.clone(), score(&model)?);
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        fit.shuffle(&mut rng);
        for batch in fit.chunks(cfg.batch_size) {
            let x = stack(&batch.iter().map(|&i| &images[i]).collect::<Vec<_>>());
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = model.net.forward(x)?;
            let logits = logits.into_dimensionality::<ndarray::Ix2>().expect("[B, K]");
            let (loss, grad) = classification_loss_grad(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Evaluation(format!("classifier loss became non-finite in epoch {epoch}")));
            }
            model.net.backward(&cache, grad.into_dyn(), Backprop::PARAMS_ONLY)?;
            opt.step(cfg.lr, &mut [&mut model.net]);
        }
        let s = score(&model)?;
        log::debug!("classifier epoch {epoch}: held-out {}/{} loss {:.4}", s.0, held_y.len(), s.1);
        if better(s, best.1) {
            best = (model.clone(), s);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(best.0)
}

impl Parameterized<f32> for Classifier {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &styleshift_nn::Param<f32>)) {
        self.net.visit_params(prefix, f)
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut styleshift_nn::Param<f32>)) {
        self.net.visit_params_mut(prefix, f)
    }
}
