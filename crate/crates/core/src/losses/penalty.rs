use ndarray::{ArrayD, Axis, Zip};
use rand::Rng;
use styleshift_nn::{Backprop, NnError, Scalar};

use crate::models::{DiscCache, Discriminator};
use crate::{Error, Result};

/// Anything that scores a batch of images with one scalar per sample and
/// can differentiate those scores with respect to its input.
pub trait Critic<T: Scalar> {
    /// State kept from the scoring pass (for parameter gradients).
    type Cache;

    /// Per-sample scores and the gradient of their sum w.r.t. `x`. Samples
    /// are independent, so slice `b` of the gradient is `grad_x score_b`.
    fn score_and_input_grad(&mut self, x: &ArrayD<T>) -> Result<(Vec<f64>, ArrayD<T>, Self::Cache)>;
}

/// The discriminator's critic head, reduced by the mean over its patch map.
impl<T: Scalar> Critic<T> for Discriminator<T> {
    type Cache = DiscCache<T>;

    fn score_and_input_grad(&mut self, x: &ArrayD<T>) -> Result<(Vec<f64>, ArrayD<T>, DiscCache<T>)> {
        let (src, cache) = self.forward_src(x)?;
        let per_sample = src.len() / src.shape()[0];
        let scores = src
            .axis_iter(Axis(0))
            .map(|s| s.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / per_sample as f64)
            .collect();
        let d_src = ArrayD::from_elem(src.raw_dim(), T::lit(1.0 / per_sample as f64));
        let grad = self
            .backward(&cache, Some(d_src), None, Backprop::INPUT_ONLY)?
            .ok_or_else(|| Error::Gradient("critic produced no input gradient".into()))?;
        Ok((scores, grad, cache))
    }
}

/// `score(x) = <w, x>` per sample for a fixed weight image `w`.
#[derive(Debug, Clone)]
pub struct LinearCritic<T> {
    pub weight: ArrayD<T>,
}

impl<T: Scalar> LinearCritic<T> {
    /// Sums channel 0, scaled by `1 / sqrt(H * W)` so the input gradient
    /// has unit norm.
    pub fn unit_channel_sum(channels: usize, h: usize, w: usize) -> Self {
        let mut weight = ArrayD::zeros(vec![channels, h, w]);
        weight.index_axis_mut(Axis(0), 0).fill(T::lit(1.0 / ((h * w) as f64).sqrt()));
        Self { weight }
    }
}

impl<T: Scalar> Critic<T> for LinearCritic<T> {
    type Cache = ();

    fn score_and_input_grad(&mut self, x: &ArrayD<T>) -> Result<(Vec<f64>, ArrayD<T>, ())> {
        let scores = x
            .axis_iter(Axis(0))
            .map(|s| s.iter().zip(&self.weight).map(|(a, b)| (*a * *b).to_f64_lossy()).sum())
            .collect();
        let mut grad = ArrayD::zeros(x.raw_dim());
        for mut g in grad.axis_iter_mut(Axis(0)) {
            g.assign(&self.weight);
        }
        Ok((scores, grad, ()))
    }
}

/// Critic returning the same score for every input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantCritic(pub f64);

impl<T: Scalar> Critic<T> for ConstantCritic {
    type Cache = ();

    fn score_and_input_grad(&mut self, x: &ArrayD<T>) -> Result<(Vec<f64>, ArrayD<T>, ())> {
        Ok((vec![self.0; x.shape()[0]], ArrayD::zeros(x.raw_dim()), ()))
    }
}

/// Result of one gradient-penalty evaluation. `value` excludes `lambda_gp`.
#[derive(Debug, Clone)]
pub struct GradientPenalty<T, C = ()> {
    pub value: f64,
    pub epsilons: Vec<f64>,
    /// Per-sample `||grad_x score_b||`.
    pub norms: Vec<f64>,
    pub interpolated: ArrayD<T>,
    pub input_grad: ArrayD<T>,
    pub cache: C,
}

/// `eps_b * real_b + (1 - eps_b) * fake_b`.
pub fn interpolate<T: Scalar>(real: &ArrayD<T>, fake: &ArrayD<T>, epsilons: &[f64]) -> Result<ArrayD<T>> {
    if real.shape() != fake.shape() || real.shape().first() != Some(&epsilons.len()) {
        return Err(Error::Data(format!(
            "cannot interpolate {:?} and {:?} with {} coefficients",
            real.shape(),
            fake.shape(),
            epsilons.len()
        )));
    }
    let mut out = fake.clone();
    for ((mut o, r), &e) in out.axis_iter_mut(Axis(0)).zip(real.axis_iter(Axis(0))).zip(epsilons) {
        let (e, one_minus) = (T::lit(e), T::lit(1.0 - e));
        Zip::from(&mut o).and(&r).for_each(|o, &r| *o = e * r + one_minus * *o);
    }
    Ok(out)
}

/// Mean over samples of `(||g_b|| - 1)^2`, together with the norms.
pub fn penalty_from_grads<T: Scalar>(grad: &ArrayD<T>) -> (f64, Vec<f64>) {
    let norms: Vec<f64> = grad
        .axis_iter(Axis(0))
        .map(|g| g.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt())
        .collect();
    let value = norms.iter().map(|n| (n - 1.0).powi(2)).sum::<f64>() / norms.len() as f64;
    (value, norms)
}

/// Draws one `eps ~ U[0, 1)` per sample and evaluates the penalty at the
/// interpolates between `real` and `fake`.
pub fn gradient_penalty<T: Scalar, C: Critic<T>, R: Rng + ?Sized>(
    critic: &mut C,
    real: &ArrayD<T>,
    fake: &ArrayD<T>,
    rng: &mut R,
) -> Result<GradientPenalty<T, C::Cache>> {
    let epsilons: Vec<f64> = (0..real.shape().first().copied().unwrap_or(0)).map(|_| rng.random::<f64>()).collect();
    let interpolated = interpolate(real, fake, &epsilons)?;
    let (_, input_grad, cache) = critic.score_and_input_grad(&interpolated)?;
    let (value, norms) = penalty_from_grads(&input_grad);
    Ok(GradientPenalty { value, epsilons, norms, interpolated, input_grad, cache })
}

impl<T: Scalar> GradientPenalty<T, DiscCache<T>> {
    /// Adds `scale * d(value)/d(theta)` to the discriminator's parameter
    /// gradients.
    ///
    /// With activation masks frozen, the critic is linear in its input, so
    /// `<v, grad_x score_b>` equals the critic's tangent output along `v`.
    /// Differentiating that tangent pass w.r.t. the parameters, with
    /// `v_b = c_b * g_b` held fixed, yields the penalty gradient.
    pub fn accumulate_param_grads(&self, d: &mut Discriminator<T>, scale: f64) -> Result<()> {
        let b = self.norms.len() as f64;
        let mut tangent = self.input_grad.clone();
        for (mut t, &n) in tangent.axis_iter_mut(Axis(0)).zip(&self.norms) {
            let c = if n > 1e-12 { scale * 2.0 * (n - 1.0) / (n * b) } else { 0.0 };
            let c = T::lit(c);
            t.mapv_inplace(|v| v * c);
        }
        let (out, lin) = d.linearize_src(&self.cache, tangent).map_err(not_linearizable)?;
        let per_sample = out.len() / out.shape()[0];
        let seed = ArrayD::from_elem(out.raw_dim(), T::lit(1.0 / per_sample as f64));
        d.backward_linearized(&lin, seed)
    }
}

fn not_linearizable(e: Error) -> Error {
    match e {
        Error::Nn(NnError::NotLinearizable { layer }) => {
            Error::Gradient(format!("layer `{layer}` is not piecewise linear; penalty gradient unavailable"))
        }
        other => other,
    }
}
