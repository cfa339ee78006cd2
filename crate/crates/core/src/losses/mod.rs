//! Adversarial, classification and reconstruction objectives.
//!
//! Loss values are reduced in `f64` whatever the network precision. Every
//! loss used for training has a `_grad` companion returning the gradient
//! with respect to the network output it consumes.

mod penalty;

use ndarray::{Array2, ArrayD, Axis};
use serde::{Deserialize, Serialize};
use styleshift_nn::Scalar;

pub use penalty::{gradient_penalty, interpolate, penalty_from_grads, ConstantCritic, Critic, GradientPenalty, LinearCritic};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_gp: f64,
    pub lambda_cls: f64,
    pub lambda_rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_gp: 10.0, lambda_cls: 1.0, lambda_rec: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("weights.lambda_gp", self.lambda_gp), ("weights.lambda_cls", self.lambda_cls), ("weights.lambda_rec", self.lambda_rec)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config_at(key, format!("must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// All loss terms of one training iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: u64,
    pub d_adv: f64,
    pub d_gp: f64,
    pub d_cls_real: f64,
    pub d_total: f64,
    pub g_adv: f64,
    pub g_cls_fake: f64,
    pub g_rec: f64,
    pub g_total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "iteration,d_adv,d_gp,d_cls_real,d_total,g_adv,g_cls_fake,g_rec,g_total,lr";

    pub fn csv_row(&self, lr: f64) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.d_adv,
            self.d_gp,
            self.d_cls_real,
            self.d_total,
            self.g_adv,
            self.g_cls_fake,
            self.g_rec,
            self.g_total,
            lr
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.d_adv, self.d_gp, self.d_cls_real, self.d_total, self.g_adv, self.g_cls_fake, self.g_rec, self.g_total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Whether the totals equal their compositions from the individual terms.
    /// `d_adv` here already includes the weighted penalty.
    pub fn is_consistent(&self, w: &LossWeights, tol: f64) -> bool {
        (self.d_total - total_d_loss(self.d_adv, self.d_cls_real, w)).abs() <= tol
            && (self.g_total - total_g_loss(self.g_adv, self.g_cls_fake, self.g_rec, w)).abs() <= tol
    }
}

fn mean<T: Scalar>(x: &ArrayD<T>) -> f64 {
    x.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / x.len() as f64
}

/// Critic objective minimized by D:
/// `mean(fake) - mean(real) + lambda_gp * gp`.
pub fn adversarial_loss_d<T: Scalar>(d_src_real: &ArrayD<T>, d_src_fake: &ArrayD<T>, gp: f64, lambda_gp: f64) -> f64 {
    mean(d_src_fake) - mean(d_src_real) + lambda_gp * gp
}

/// Generator adversarial term `-mean(fake)`.
pub fn adversarial_loss_g<T: Scalar>(d_src_fake: &ArrayD<T>) -> f64 {
    -mean(d_src_fake)
}

/// Gradient of `sign * mean(scores)` with respect to every score.
pub fn mean_grad<T: Scalar>(scores: &ArrayD<T>, sign: f64) -> ArrayD<T> {
    ArrayD::from_elem(scores.raw_dim(), T::lit(sign / scores.len() as f64))
}

fn check_labels(logits_rows: usize, k: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != logits_rows {
        return Err(Error::Data(format!("{} labels for {logits_rows} logit rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {l} out of range for {k} classes")));
    }
    if logits_rows == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    Ok(())
}

/// Mean cross-entropy and its gradient `(softmax - onehot) / B`.
pub fn classification_loss_grad<T: Scalar>(logits: &Array2<T>, labels: &[usize]) -> Result<(f64, Array2<T>)> {
    let (b, k) = logits.dim();
    check_labels(b, k, labels)?;
    let mut grad = Array2::<T>::zeros((b, k));
    let mut total = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.iter().map(|v| v.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() + max - row[labels[i]].to_f64_lossy();
        for j in 0..k {
            let onehot = if j == labels[i] { 1.0 } else { 0.0 };
            grad[[i, j]] = T::lit((exps[j] / z - onehot) / b as f64);
        }
    }
    Ok((total / b as f64, grad))
}

/// Mean negative log-softmax at the true domain of real images.
pub fn classification_loss_real<T: Scalar>(class_logits: &Array2<T>, true_domains: &[usize]) -> Result<f64> {
    Ok(classification_loss_grad(class_logits, true_domains)?.0)
}

/// Mean negative log-softmax at the target domain of generated images.
pub fn classification_loss_fake<T: Scalar>(class_logits: &Array2<T>, target_domains: &[usize]) -> Result<f64> {
    Ok(classification_loss_grad(class_logits, target_domains)?.0)
}

fn check_same_shape<T>(x: &ArrayD<T>, y: &ArrayD<T>) -> Result<()> {
    if x.shape() != y.shape() || x.is_empty() {
        return Err(Error::Data(format!("reconstruction shapes differ or are empty: {:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

/// Mean absolute difference over all elements.
pub fn reconstruction_loss<T: Scalar>(x: &ArrayD<T>, x_rec: &ArrayD<T>) -> Result<f64> {
    check_same_shape(x, x_rec)?;
    let sum: f64 = x.iter().zip(x_rec).map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs()).sum();
    Ok(sum / x.len() as f64)
}

/// Gradient of [`reconstruction_loss`] with respect to `x_rec` (subgradient 0 at ties).
pub fn reconstruction_loss_grad<T: Scalar>(x: &ArrayD<T>, x_rec: &ArrayD<T>) -> Result<ArrayD<T>> {
    check_same_shape(x, x_rec)?;
    let scale = T::lit(1.0 / x.len() as f64);
    let mut g = x_rec.clone();
    g.zip_mut_with(x, |r, &a| {
        *r = if *r > a {
            scale
        } else if *r < a {
            -scale
        } else {
            T::zero()
        }
    });
    Ok(g)
}

pub fn total_g_loss(g_adv: f64, g_cls_fake: f64, g_rec: f64, w: &LossWeights) -> f64 {
    g_adv + w.lambda_cls * g_cls_fake + w.lambda_rec * g_rec
}

/// `d_adv_with_gp` already carries the sign flip and the weighted penalty.
pub fn total_d_loss(d_adv_with_gp: f64, d_cls_real: f64, w: &LossWeights) -> f64 {
    d_adv_with_gp + w.lambda_cls * d_cls_real
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero() {
        let logits = array![[0.3, -1.0, 2.0], [0.0, 0.0, 0.0]];
        let (_, g) = classification_loss_grad(&logits, &[2, 0]).unwrap();
        for row in g.rows() {
            let s: f64 = row.sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn report_csv_has_ten_columns() {
        let r = LossReport { iteration: 3, ..Default::default() };
        assert_eq!(r.csv_row(1e-4).split(',').count(), LossReport::CSV_HEADER.split(',').count());
    }
}
