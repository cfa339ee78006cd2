use ndarray::{ArrayD, IxDyn};

use crate::error::shape_err;
use crate::layer::Backprop;
use crate::param::{join, Param};
use crate::{init, Result, Scalar};

/// Per-sample, per-channel normalization over spatial positions with a
/// learned affine transform (`gamma = 1`, `beta = 0` at init).
#[derive(Debug, Clone)]
pub struct InstanceNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

/// Saved forward state: the normalized activations and `1 / sqrt(var + eps)`
/// for every `(sample, channel)` plane.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub normalized: ArrayD<T>,
    pub inv_std: Vec<T>,
}

impl<T: Scalar> InstanceNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(init::ones(&[channels])),
            beta: Param::new(init::zeros(&[channels])),
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Normalizes each plane to zero mean and unit variance, before the affine step.
    pub fn normalize(&self, x: &ArrayD<T>) -> Result<NormCache<T>> {
        let c = self.channels();
        let (b, plane) = match *x.shape() {
            [b, ch, h, w] if ch == c => (b, h * w),
            _ => return Err(shape_err("instance norm input", format!("[B, {c}, H, W]"), x.shape())),
        };
        let mut normalized = x.as_standard_layout().into_owned();
        let eps = T::lit(self.eps);
        let n = T::lit(plane as f64);
        let mut inv_std = Vec::with_capacity(b * c);
        for chunk in normalized.as_slice_mut().expect("owned").chunks_mut(plane) {
            let mean = chunk.iter().copied().sum::<T>() / n;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            chunk.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        Ok(NormCache { normalized, inv_std })
    }

    pub fn forward(&self, x: &ArrayD<T>) -> Result<(ArrayD<T>, NormCache<T>)> {
        let cache = self.normalize(x)?;
        let c = self.channels();
        let plane = x.shape()[2] * x.shape()[3];
        let mut out = cache.normalized.clone();
        for (i, chunk) in out.as_slice_mut().expect("owned").chunks_mut(plane).enumerate() {
            let (g, bta) = (self.gamma.value[i % c], self.beta.value[i % c]);
            chunk.iter_mut().for_each(|v| *v = *v * g + bta);
        }
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: &NormCache<T>, grad_out: &ArrayD<T>, mode: Backprop) -> Result<Option<ArrayD<T>>> {
        if grad_out.shape() != cache.normalized.shape() {
            return Err(shape_err(
                "instance norm grad_out",
                format!("{:?}", cache.normalized.shape()),
                grad_out.shape(),
            ));
        }
        let c = self.channels();
        let shape = grad_out.shape().to_vec();
        let plane = shape[2] * shape[3];
        let go = grad_out.as_standard_layout();
        let gs = go.as_slice().expect("standard layout");
        let xs = cache.normalized.as_slice().expect("owned");
        if mode.params {
            for (i, (gch, xch)) in gs.chunks(plane).zip(xs.chunks(plane)).enumerate() {
                let dg: T = gch.iter().zip(xch).map(|(&g, &x)| g * x).sum();
                let db: T = gch.iter().copied().sum();
                self.gamma.grad[i % c] += dg;
                self.beta.grad[i % c] += db;
            }
        }
        if !mode.input {
            return Ok(None);
        }
        let n = T::lit(plane as f64);
        let mut dx = ArrayD::<T>::zeros(IxDyn(&shape));
        let ds = dx.as_slice_mut().expect("fresh");
        for (i, ((dch, gch), xch)) in ds.chunks_mut(plane).zip(gs.chunks(plane)).zip(xs.chunks(plane)).enumerate() {
            let gamma = self.gamma.value[i % c];
            let inv = cache.inv_std[i];
            let sum_g: T = gch.iter().copied().sum::<T>() * gamma;
            let sum_gx: T = gch.iter().zip(xch).map(|(&g, &x)| g * x).sum::<T>() * gamma;
            for ((d, &g), &x) in dch.iter_mut().zip(gch).zip(xch) {
                *d = inv / n * (n * g * gamma - sum_g - x * sum_gx);
            }
        }
        Ok(Some(dx))
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}
