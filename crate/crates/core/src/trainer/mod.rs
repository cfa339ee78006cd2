//! Adversarial training loop, learning-rate schedule, checkpoints and
//! single-image translation.

mod checkpoint;
mod config;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use styleshift_nn::{Adam, AdamConfig, Backprop, Parameterized};

pub use checkpoint::{load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{lr_schedule, DiscriminatorConfig, GeneratorConfig, StyleExtractorConfig, TrainConfig};

use crate::data_pipeline::{derive_seed, load_dataset, split_train_test, BatchLoader, Dataset, ImageBatch, Split};
use crate::losses::{
    adversarial_loss_d, adversarial_loss_g, classification_loss_grad, gradient_penalty, mean_grad, reconstruction_loss,
    reconstruction_loss_grad, total_d_loss, total_g_loss, LossReport,
};
use crate::models::{sample_latents, Networks};
use crate::{Error, Result};

const INIT_STREAM: u64 = 0x1417;
const TRAIN_STREAM: u64 = 0x7A41;
const DATA_STREAM: u64 = 0xDA7A;

/// Networks, optimizers and random state; everything a checkpoint holds.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Completed iterations.
    pub iteration: u64,
    pub nets: Networks<f32>,
    /// Drives G and E jointly, in that order.
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub rng: ChaCha8Rng,
    /// Global draw position of the training batch stream.
    pub data_cursor: u64,
}

pub(crate) fn adam_config(c: &TrainConfig) -> AdamConfig {
    AdamConfig { beta1: c.adam_beta1, beta2: c.adam_beta2, eps: 1e-8 }
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, INIT_STREAM]));
        let nets = Networks::new(&config.model_specs(), &mut init)?;
        let opt_g = Adam::new(adam_config(&config), &[&nets.generator, &nets.style_extractor]);
        let opt_d = Adam::new(adam_config(&config), &[&nets.discriminator]);
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, TRAIN_STREAM]));
        Ok(Self { config, iteration: 0, nets, opt_g, opt_d, rng, data_cursor: 0 })
    }

    fn sample_targets(&mut self, n: usize) -> Vec<usize> {
        let k = self.config.dataset.num_domains();
        (0..n).map(|_| self.rng.random_range(0..k)).collect()
    }

    fn sample_z(&mut self, n: usize) -> Array2<f32> {
        sample_latents(n, self.config.style_extractor.latent_length, &mut self.rng)
    }
}

fn non_finite(iteration: u64, report: &LossReport) -> Error {
    Error::NonFiniteLoss { iteration, report: serde_json::to_string(report).unwrap_or_else(|_| format!("{report:?}")) }
}

/// One critic update. Fills the `d_*` fields of the returned report.
pub fn train_step_d(state: &mut TrainState, batch: &ImageBatch, lr: f64) -> Result<LossReport> {
    let w = state.config.weights;
    let x = batch.pixels.clone().into_dyn();
    let b = batch.len();
    let z = state.sample_z(b);
    let c = state.sample_targets(b);
    let s = state.nets.style_extractor.infer(&z, &c)?;
    let y = state.nets.generator.infer(&x, &c, &s)?;

    let d = &mut state.nets.discriminator;
    d.zero_grad();
    let (src_real, logits_real, cache_real) = d.forward(&x)?;
    let (src_fake, cache_fake) = d.forward_src(&y)?;
    let gp = gradient_penalty(d, &x, &y, &mut state.rng)?;
    let (d_cls_real, d_logits) = classification_loss_grad(&logits_real, &batch.labels)?;
    let d_adv = adversarial_loss_d(&src_real, &src_fake, gp.value, w.lambda_gp);
    let report = LossReport {
        iteration: state.iteration + 1,
        d_adv,
        d_gp: gp.value,
        d_cls_real,
        d_total: total_d_loss(d_adv, d_cls_real, &w),
        ..Default::default()
    };
    if !report.is_finite() {
        return Err(non_finite(report.iteration, &report));
    }

    let d = &mut state.nets.discriminator;
    let d_logits = d_logits * (w.lambda_cls as f32);
    d.backward(&cache_real, Some(mean_grad(&src_real, -1.0)), Some(&d_logits), Backprop::PARAMS_ONLY)?;
    d.backward(&cache_fake, Some(mean_grad(&src_fake, 1.0)), None, Backprop::PARAMS_ONLY)?;
    if w.lambda_gp > 0.0 {
        gp.accumulate_param_grads(d, w.lambda_gp)?;
    }
    state.opt_d.step(lr, &mut [&mut state.nets.discriminator]);
    Ok(report)
}

/// One joint generator and style-extractor update. Fills the `g_*` fields.
pub fn train_step_g(state: &mut TrainState, batch: &ImageBatch, lr: f64) -> Result<LossReport> {
    let w = state.config.weights;
    let x = batch.pixels.clone().into_dyn();
    let b = batch.len();
    let z = state.sample_z(b);
    let c = state.sample_targets(b);
    let z_back = state.sample_z(b);
    let c_back = &batch.labels;

    let nets = &mut state.nets;
    nets.generator.zero_grad();
    nets.style_extractor.zero_grad();
    let (s, style_cache) = nets.style_extractor.forward(&z, &c)?;
    let (y, gen_cache) = nets.generator.forward(&x, &c, &s)?;
    let (s_back, style_cache_back) = nets.style_extractor.forward(&z_back, c_back)?;
    let (x_rec, gen_cache_back) = nets.generator.forward(&y, c_back, &s_back)?;
    let (src_fake, logits_fake, d_cache) = nets.discriminator.forward(&y)?;

    let g_adv = adversarial_loss_g(&src_fake);
    let (g_cls_fake, d_logits) = classification_loss_grad(&logits_fake, &c)?;
    let g_rec = reconstruction_loss(&x, &x_rec)?;
    let report = LossReport {
        iteration: state.iteration + 1,
        g_adv,
        g_cls_fake,
        g_rec,
        g_total: total_g_loss(g_adv, g_cls_fake, g_rec, &w),
        ..Default::default()
    };
    if !report.is_finite() {
        return Err(non_finite(report.iteration, &report));
    }

    let d_logits = d_logits * (w.lambda_cls as f32);
    let dy_adv = nets
        .discriminator
        .backward(&d_cache, Some(mean_grad(&src_fake, -1.0)), Some(&d_logits), Backprop::INPUT_ONLY)?
        .ok_or_else(|| Error::Gradient("discriminator returned no input gradient".into()))?;
    let d_rec = reconstruction_loss_grad(&x, &x_rec)? * (w.lambda_rec as f32);
    let back = nets.generator.backward(&gen_cache_back, d_rec, true)?;
    nets.style_extractor.backward(&style_cache_back, &back.style)?;
    let fwd = nets.generator.backward(&gen_cache, dy_adv + back.image, true)?;
    nets.style_extractor.backward(&style_cache, &fwd.style)?;
    state.opt_g.step(lr, &mut [&mut state.nets.generator, &mut state.nets.style_extractor]);
    Ok(report)
}

/// Where a run writes its artifacts and how batches are prepared.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run directory for `metrics.csv`, checkpoints and sample grids.
    pub out_dir: Option<PathBuf>,
    /// Background data workers; 0 loads batches on the training thread.
    pub workers: usize,
}

/// One metrics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub report: LossReport,
    pub lr: f64,
}

/// A training run bound to a dataset and (optionally) a run directory.
pub struct Trainer {
    pub state: TrainState,
    dataset: Arc<Dataset>,
    split: Split,
    loader: BatchLoader,
    history: Vec<MetricsRow>,
    out_dir: Option<PathBuf>,
    csv: Option<BufWriter<File>>,
}

impl Trainer {
    pub fn new(config: TrainConfig, opts: RunOptions) -> Result<Self> {
        let dataset = Arc::new(load_dataset(&config.dataset)?);
        Self::with_dataset(config, dataset, opts)
    }

    pub fn with_dataset(config: TrainConfig, dataset: Arc<Dataset>, opts: RunOptions) -> Result<Self> {
        Self::from_state(TrainState::new(config)?, dataset, opts)
    }

    pub fn resume(path: &Path, opts: RunOptions) -> Result<Self> {
        let state = load_checkpoint(path)?;
        let dataset = Arc::new(load_dataset(&state.config.dataset)?);
        Self::from_state(state, dataset, opts)
    }

    pub fn resume_with_dataset(path: &Path, dataset: Arc<Dataset>, opts: RunOptions) -> Result<Self> {
        Self::from_state(load_checkpoint(path)?, dataset, opts)
    }

    fn from_state(state: TrainState, dataset: Arc<Dataset>, opts: RunOptions) -> Result<Self> {
        let cfg = &state.config;
        if dataset.image_size != cfg.dataset.image_size || dataset.domain_names != cfg.dataset.domain_names {
            return Err(Error::config("dataset does not match the configuration it is trained with"));
        }
        let split = split_train_test(&dataset, cfg.dataset.test_fraction, cfg.seed)?;
        let loader = BatchLoader::new(
            Arc::clone(&dataset),
            Arc::new(split.train.clone()),
            cfg.batch_size,
            derive_seed(&[cfg.seed, DATA_STREAM]),
            state.data_cursor,
            opts.workers,
        )?;
        let csv = match &opts.out_dir {
            Some(dir) => Some(open_metrics(&dir.join("metrics.csv"), state.iteration)?),
            None => None,
        };
        Ok(Self { state, dataset, split, loader, history: Vec::new(), out_dir: opts.out_dir, csv })
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn out_dir(&self) -> Option<&Path> {
        self.out_dir.as_deref()
    }

    /// Rows produced by this process (not those before a resume).
    pub fn history(&self) -> &[MetricsRow] {
        &self.history
    }

    /// Runs one iteration: `n_critic` critic updates, then one generator update.
    pub fn step(&mut self) -> Result<LossReport> {
        let t = self.state.iteration;
        let lr = lr_schedule(t, &self.state.config);
        let n_critic = self.state.config.n_critic;
        let mut report = LossReport { iteration: t + 1, ..Default::default() };
        for _ in 0..n_critic {
            let batch = self.loader.next_batch();
            let r = train_step_d(&mut self.state, &batch, lr)?;
            report.d_adv += r.d_adv / n_critic as f64;
            report.d_gp += r.d_gp / n_critic as f64;
            report.d_cls_real += r.d_cls_real / n_critic as f64;
            report.d_total += r.d_total / n_critic as f64;
        }
        let batch = self.loader.next_batch();
        let g = train_step_g(&mut self.state, &batch, lr)?;
        report.g_adv = g.g_adv;
        report.g_cls_fake = g.g_cls_fake;
        report.g_rec = g.g_rec;
        report.g_total = g.g_total;

        self.state.iteration = t + 1;
        self.state.data_cursor = self.loader.cursor();
        self.history.push(MetricsRow { report, lr });
        if let Some(csv) = &mut self.csv {
            writeln!(csv, "{}", report.csv_row(lr)).map_err(|e| Error::io("metrics.csv", e))?;
        }
        Ok(report)
    }

    /// Trains until `iteration` (capped at `max_iterations`), checkpointing
    /// on schedule when a run directory is set.
    pub fn run_until(&mut self, iteration: u64) -> Result<()> {
        let end = iteration.min(self.state.config.max_iterations);
        while self.state.iteration < end {
            let r = self.step()?;
            if r.iteration % 100 == 0 || r.iteration == 1 {
                log::info!(
                    "iter {}: d_total {:.4} d_gp {:.4} g_adv {:.4} g_cls {:.4} g_rec {:.4}",
                    r.iteration,
                    r.d_total,
                    r.d_gp,
                    r.g_adv,
                    r.g_cls_fake,
                    r.g_rec
                );
            }
            if r.iteration % self.state.config.checkpoint_every == 0 {
                self.checkpoint()?;
            }
        }
        self.flush()
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.state.config.max_iterations)?;
        if self.state.iteration % self.state.config.checkpoint_every != 0 {
            self.checkpoint()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(csv) = &mut self.csv {
            csv.flush().map_err(|e| Error::io("metrics.csv", e))?;
        }
        Ok(())
    }

    /// Path of the checkpoint written at `iteration` inside a run directory.
    pub fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
        out_dir.join("checkpoints").join(format!("ckpt_{iteration:07}.ckpt"))
    }

    /// Writes a checkpoint and a sample grid into the run directory, if any.
    pub fn checkpoint(&mut self) -> Result<Option<PathBuf>> {
        self.flush()?;
        let Some(dir) = self.out_dir.clone() else { return Ok(None) };
        let path = Self::checkpoint_path(&dir, self.state.iteration);
        save_checkpoint(&self.state, &path)?;
        let inputs: Vec<usize> = self.split.test.iter().copied().take(4).collect();
        let images: Vec<Array3<f32>> = inputs.iter().map(|&i| self.dataset.images[i].clone()).collect();
        let grid = crate::evaluation::sample_grid(&self.state.nets, &images, self.state.config.seed)?;
        crate::data_pipeline::image_io::save_image(
            &grid,
            &dir.join("samples").join(format!("grid_{:07}.png", self.state.iteration)),
        )?;
        log::info!("checkpoint written to {}", path.display());
        Ok(Some(path))
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        self.flush()?;
        save_checkpoint(&self.state, path)
    }
}

/// Opens `metrics.csv` for appending after `iteration`, dropping rows
/// beyond it (left over from a run that continued past its last checkpoint).
fn open_metrics(path: &Path, iteration: u64) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut kept = vec![LossReport::CSV_HEADER.to_string()];
    if iteration > 0 && path.exists() {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        for line in BufReader::new(f).lines().skip(1) {
            let line = line.map_err(|e| Error::io(path, e))?;
            let it: u64 = line.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
            if it <= iteration {
                kept.push(line);
            }
        }
    }
    let mut w = BufWriter::new(
        OpenOptions::new().create(true).write(true).truncate(true).open(path).map_err(|e| Error::io(path, e))?,
    );
    for line in kept {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(w)
}

/// Trains from scratch to `max_iterations`.
pub fn train(config: TrainConfig, opts: RunOptions) -> Result<Trainer> {
    let mut trainer = Trainer::new(config, opts)?;
    trainer.run()?;
    Ok(trainer)
}

/// Translates images `[B, 3, H, H]` to `targets` with latents `z`,
/// in chunks to bound memory.
pub fn translate_batch(nets: &Networks<f32>, images: &ArrayD<f32>, targets: &[usize], z: &Array2<f32>) -> Result<ArrayD<f32>> {
    const CHUNK: usize = 32;
    let n = images.shape()[0];
    if targets.len() != n || z.nrows() != n {
        return Err(Error::Data(format!("{n} images, {} targets, {} latents", targets.len(), z.nrows())));
    }
    let mut parts = Vec::new();
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let imgs = images.slice_axis(Axis(0), (start..end).into()).to_owned();
        let zs = z.slice(ndarray::s![start..end, ..]).to_owned();
        let s = nets.style_extractor.infer(&zs, &targets[start..end])?;
        parts.push(nets.generator.infer(&imgs, &targets[start..end], &s)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Data(e.to_string()))
}

/// `G(x, c, E(z, c))` for a single `[3, H, H]` image. When `z` is `None`
/// a fresh latent is drawn from `rng`.
pub fn translate<R: Rng + ?Sized>(
    nets: &Networks<f32>,
    image: &Array3<f32>,
    target_domain: usize,
    z: Option<&[f32]>,
    rng: &mut R,
) -> Result<Array3<f32>> {
    let k = nets.generator.spec.num_domains;
    if target_domain >= k {
        return Err(Error::Data(format!("target domain {target_domain} out of range for {k} domains")));
    }
    let latent_length = nets.style_extractor.spec.latent_length;
    let z = match z {
        Some(v) if v.len() == latent_length => Array2::from_shape_vec((1, latent_length), v.to_vec()).expect("length checked"),
        Some(v) => return Err(Error::Data(format!("latent has length {}, expected {latent_length}", v.len()))),
        None => sample_latents(1, latent_length, rng),
    };
    let x = image.clone().insert_axis(Axis(0)).into_dyn();
    let y = translate_batch(nets, &x, &[target_domain], &z)?;
    Ok(y.index_axis_move(Axis(0), 0).into_dimensionality().expect("[3, H, H]"))
}
