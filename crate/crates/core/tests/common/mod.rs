//! Finite-difference oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::{ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use styleshift::losses::gradient_penalty;
use styleshift::models::{Discriminator, DiscriminatorSpec};
use styleshift::data_pipeline::CropSize;
use styleshift::trainer::TrainConfig;
use styleshift_nn::Parameterized;

pub const FD_STEP: f64 = 1e-6;

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
}

/// Random 8x8 critic with randomly rescaled weights and nonzero biases, so
/// the oracles see more than the stock init.
pub fn tiny_discriminator(seed: u64) -> Discriminator<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = DiscriminatorSpec { image_size: 8, num_domains: 3, base_width: 4, num_hidden_layers: 2, leaky_slope: 0.2 };
    let mut d = Discriminator::new(spec, &mut rng).unwrap();
    let gain = rng.random_range(0.5..2.0);
    d.visit_params_mut("", &mut |_, p| {
        p.value.mapv_inplace(|v| v * gain);
        if p.value.ndim() == 1 {
            p.value.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
    });
    d
}

/// Per-sample mean patch score.
pub fn scores(d: &Discriminator<f64>, x: &ArrayD<f64>) -> Vec<f64> {
    let (src, _) = d.infer(x).unwrap();
    src.axis_iter(Axis(0)).map(|s| s.mean().unwrap()).collect()
}

/// `||a - n|| / max(||a||, ||n||)` over paired entries.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Relative error of the analytic input gradient of every per-sample score
/// at `x` against central differences over all input entries.
pub fn input_grad_error(d: &mut Discriminator<f64>, x: &ArrayD<f64>) -> f64 {
    use styleshift::losses::Critic;
    let (_, grad, _) = d.score_and_input_grad(x).unwrap();
    let per_sample = x.len() / x.shape()[0];
    let mut numeric = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let b = j / per_sample;
        let mut up = x.clone();
        up.as_slice_mut().unwrap()[j] += FD_STEP;
        let mut down = x.clone();
        down.as_slice_mut().unwrap()[j] -= FD_STEP;
        numeric.push((scores(d, &up)[b] - scores(d, &down)[b]) / (2.0 * FD_STEP));
    }
    relative_error(grad.as_slice().unwrap(), &numeric)
}

fn penalty_at(d: &mut Discriminator<f64>, real: &ArrayD<f64>, fake: &ArrayD<f64>, seed: u64) -> f64 {
    gradient_penalty(d, real, fake, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().value
}

/// Relative error of the penalty's parameter gradient against central
/// differences of the penalty value, on `per_tensor` random entries of every
/// parameter tensor. Epsilons are pinned by reusing `seed`.
pub fn param_grad_error(d: &mut Discriminator<f64>, real: &ArrayD<f64>, fake: &ArrayD<f64>, seed: u64, per_tensor: usize) -> f64 {
    d.zero_grad();
    let gp = gradient_penalty(d, real, fake, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    gp.accumulate_param_grads(d, 1.0).unwrap();
    let mut analytic_all = Vec::new();
    d.visit_params("", &mut |_, p| analytic_all.push(p.grad.clone()));

    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (t, g) in analytic_all.iter().enumerate() {
        for _ in 0..per_tensor.min(g.len()) {
            let j = pick.random_range(0..g.len());
            nudge(d, t, j, FD_STEP);
            let up = penalty_at(d, real, fake, seed);
            nudge(d, t, j, -2.0 * FD_STEP);
            let down = penalty_at(d, real, fake, seed);
            nudge(d, t, j, FD_STEP);
            analytic.push(g.as_slice().unwrap()[j]);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

pub fn nudge<M: Parameterized<f64>>(module: &mut M, tensor: usize, index: usize, delta: f64) {
    let mut seen = 0;
    module.visit_params_mut("", &mut |_, p| {
        if seen == tensor {
            p.value.as_slice_mut().unwrap()[index] += delta;
        }
        seen += 1;
    });
}

/// 16x16, three domains, every network a few channels wide.
pub fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig { batch_size: 4, max_iterations: 12, n_critic: 2, checkpoint_every: 5, ..Default::default() };
    c.dataset.image_size = 16;
    c.dataset.crop_size = CropSize::None;
    c.dataset.test_fraction = 0.25;
    c.dataset.synthetic.num_per_domain = 8;
    c.generator.base_width = 4;
    c.generator.num_residual_blocks = 1;
    c.style_extractor.latent_length = 4;
    c.style_extractor.hidden_width = 16;
    c.style_extractor.shared_layers = 1;
    c.style_extractor.unshared_layers_per_domain = 2;
    c.discriminator.base_width = 4;
    c.discriminator.num_hidden_layers = 2;
    c
}
