use ndarray::{Array2, ArrayD, Axis, Ix2};
use rand::Rng;
use styleshift_nn::{Backprop, Layer, Linear, Param, Parameterized, Scalar, SeqCache, Sequential};

use super::{he_std, StyleExtractorSpec};
use crate::{Error, Result};

/// Mapping network `E_c(z)`: a shared MLP trunk followed by one unshared MLP
/// branch per domain. Each item is routed through the branch of its target
/// domain.
#[derive(Debug, Clone)]
pub struct StyleExtractor<T> {
    pub spec: StyleExtractorSpec,
    pub shared: Sequential<T>,
    pub branches: Vec<Sequential<T>>,
}

#[derive(Debug, Clone)]
pub struct StyleCache<T> {
    shared: SeqCache<T>,
    batch: usize,
    /// `(domain, item indices, branch cache)` for every domain present in the batch.
    routes: Vec<(usize, Vec<usize>, SeqCache<T>)>,
}

impl<T: Scalar> StyleExtractor<T> {
    pub fn new<R: Rng + ?Sized>(spec: StyleExtractorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let hw = spec.hidden_width;
        let mut shared = Sequential::new();
        let mut fan_in = spec.latent_length;
        for i in 1..=spec.shared_layers {
            shared
                .push(format!("fc{i}"), Layer::Linear(Linear::new(fan_in, hw, he_std(fan_in), rng)))
                .push(format!("relu{i}"), Layer::Relu);
            fan_in = hw;
        }
        let branches = (0..spec.num_domains)
            .map(|_| {
                let mut branch = Sequential::new();
                for i in 1..=spec.unshared_layers_per_domain {
                    let last = i == spec.unshared_layers_per_domain;
                    let out = if last { spec.style_length } else { hw };
                    branch.push(format!("fc{i}"), Layer::Linear(Linear::new(hw, out, he_std(hw), rng)));
                    if !last {
                        branch.push(format!("relu{i}"), Layer::Relu);
                    }
                }
                branch
            })
            .collect();
        Ok(Self { spec, shared, branches })
    }

    fn check(&self, z: &Array2<T>, domains: &[usize]) -> Result<()> {
        if z.ncols() != self.spec.latent_length || z.nrows() != domains.len() {
            return Err(Error::Data(format!(
                "style extractor expects [B, {}] latents with B domains, got {:?} and {} domains",
                self.spec.latent_length,
                z.dim(),
                domains.len()
            )));
        }
        if let Some(&d) = domains.iter().find(|&&d| d >= self.spec.num_domains) {
            return Err(Error::Data(format!("target domain {d} out of range for {} domains", self.spec.num_domains)));
        }
        Ok(())
    }

    fn groups(&self, domains: &[usize]) -> Vec<(usize, Vec<usize>)> {
        (0..self.spec.num_domains)
            .map(|k| (k, (0..domains.len()).filter(|&i| domains[i] == k).collect::<Vec<_>>()))
            .filter(|(_, idx)| !idx.is_empty())
            .collect()
    }

    pub fn forward(&self, z: &Array2<T>, domains: &[usize]) -> Result<(Array2<T>, StyleCache<T>)> {
        self.check(z, domains)?;
        let (h, shared) = self.shared.forward(z.clone().into_dyn())?;
        let mut out = Array2::<T>::zeros((domains.len(), self.spec.style_length));
        let mut routes = Vec::new();
        for (k, idx) in self.groups(domains) {
            let (s, cache) = self.branches[k].forward(h.select(Axis(0), &idx))?;
            let s = s.into_dimensionality::<Ix2>().expect("[n, S] branch output");
            for (row, &i) in idx.iter().enumerate() {
                out.row_mut(i).assign(&s.row(row));
            }
            routes.push((k, idx, cache));
        }
        Ok((out, StyleCache { shared, batch: domains.len(), routes }))
    }

    pub fn infer(&self, z: &Array2<T>, domains: &[usize]) -> Result<Array2<T>> {
        Ok(self.forward(z, domains)?.0)
    }

    /// Accumulates parameter gradients for `grad` w.r.t. the style output.
    /// Latents are not trainable, so no input gradient is returned.
    pub fn backward(&mut self, cache: &StyleCache<T>, grad: &Array2<T>) -> Result<()> {
        let mut dh: Option<ArrayD<T>> = None;
        for (k, idx, bc) in &cache.routes {
            let g = grad.select(Axis(0), idx).into_dyn();
            let dx = self.branches[*k].backward(bc, g, Backprop::FULL)?.expect("input gradient requested");
            let acc = dh.get_or_insert_with(|| ArrayD::zeros(vec![cache.batch, dx.shape()[1]]));
            for (row, &i) in idx.iter().enumerate() {
                let mut target = acc.index_axis_mut(Axis(0), i);
                target += &dx.index_axis(Axis(0), row);
            }
        }
        if let Some(dh) = dh {
            self.shared.backward(&cache.shared, dh, Backprop::PARAMS_ONLY)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Parameterized<T> for StyleExtractor<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.shared.visit_params(&join(prefix, "shared"), f);
        for (k, b) in self.branches.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("branch{k}")), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.shared.visit_params_mut(&join(prefix, "shared"), f);
        for (k, b) in self.branches.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("branch{k}")), f);
        }
    }
}

pub(super) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
