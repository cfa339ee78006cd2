use ndarray::{Array2, ArrayD, Ix2};
use rand::Rng;
use styleshift_nn::{Backprop, Conv2d, Layer, Param, Parameterized, Scalar, SeqCache, Sequential};

use super::style_extractor::join;
use super::{he_std, DiscriminatorSpec};
use crate::{Error, Result};

/// Strided convolutional trunk with a patch critic head (`D_src`) and a
/// domain classification head (`D_cls`). No normalization layers.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    pub spec: DiscriminatorSpec,
    pub trunk: Sequential<T>,
    pub src_head: Sequential<T>,
    pub cls_head: Sequential<T>,
}

#[derive(Debug, Clone)]
pub struct DiscCache<T> {
    trunk: SeqCache<T>,
    src: Option<SeqCache<T>>,
    cls: Option<SeqCache<T>>,
}

/// Tangent-pass caches of the critic path, see [`Discriminator::linearize_src`].
#[derive(Debug, Clone)]
pub struct DiscLinearCache<T> {
    trunk: SeqCache<T>,
    src: SeqCache<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(spec: DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        // fan-in scaled so that narrow desk widths do not shrink the signal
        // to nothing across the trunk
        let mut trunk = Sequential::new();
        let mut ch_in = 3;
        for i in 0..spec.num_downsamplings() {
            let ch_out = spec.base_width << i;
            trunk
                .push(format!("conv{i}"), Layer::Conv(Conv2d::new(ch_in, ch_out, 4, 2, 1, true, he_std(ch_in * 16), rng)))
                .push(format!("lrelu{i}"), Layer::LeakyRelu(spec.leaky_slope));
            ch_in = ch_out;
        }
        let src_head = Sequential::new().with("conv", Layer::Conv(Conv2d::new(ch_in, 1, 3, 1, 1, false, he_std(ch_in * 9) / 2f64.sqrt(), rng)));
        let k = spec.output_size();
        let cls_head = Sequential::new()
            .with("conv", Layer::Conv(Conv2d::new(ch_in, spec.num_domains, k, 1, 0, false, he_std(ch_in * k * k) / 2f64.sqrt(), rng)))
            .with("flatten", Layer::Flatten);
        Ok(Self { spec, trunk, src_head, cls_head })
    }

    fn check(&self, x: &ArrayD<T>) -> Result<()> {
        let h = self.spec.image_size;
        match x.shape() {
            [_, 3, a, b] if *a == h && *b == h => Ok(()),
            other => Err(Error::config_at(
                "dataset.image_size",
                format!("discriminator built for [B, 3, {h}, {h}] inputs, got {other:?}"),
            )),
        }
    }

    /// Patch scores `[B, 1, h, w]` and class logits `[B, K]`.
    pub fn forward(&self, x: &ArrayD<T>) -> Result<(ArrayD<T>, Array2<T>, DiscCache<T>)> {
        self.check(x)?;
        let (feat, trunk) = self.trunk.forward(x.clone())?;
        let (src, src_cache) = self.src_head.forward(feat.clone())?;
        let (logits, cls_cache) = self.cls_head.forward(feat)?;
        let logits = logits.into_dimensionality::<Ix2>().expect("[B, K] logits");
        Ok((src, logits, DiscCache { trunk, src: Some(src_cache), cls: Some(cls_cache) }))
    }

    /// Critic head only.
    pub fn forward_src(&self, x: &ArrayD<T>) -> Result<(ArrayD<T>, DiscCache<T>)> {
        self.check(x)?;
        let (feat, trunk) = self.trunk.forward(x.clone())?;
        let (src, src_cache) = self.src_head.forward(feat)?;
        Ok((src, DiscCache { trunk, src: Some(src_cache), cls: None }))
    }

    pub fn infer(&self, x: &ArrayD<T>) -> Result<(ArrayD<T>, Array2<T>)> {
        self.check(x)?;
        let feat = self.trunk.infer(x.clone())?;
        let src = self.src_head.infer(feat.clone())?;
        let logits = self.cls_head.infer(feat)?.into_dimensionality::<Ix2>().expect("[B, K] logits");
        Ok((src, logits))
    }

    /// Back-propagates gradients w.r.t. either head output. A head whose
    /// gradient is `None` contributes nothing.
    pub fn backward(
        &mut self,
        cache: &DiscCache<T>,
        d_src: Option<ArrayD<T>>,
        d_logits: Option<&Array2<T>>,
        mode: Backprop,
    ) -> Result<Option<ArrayD<T>>> {
        let head_mode = Backprop { input: true, params: mode.params };
        let mut d_feat: Option<ArrayD<T>> = None;
        if let Some(g) = d_src {
            let c = cache.src.as_ref().ok_or_else(|| Error::Gradient("critic head was not evaluated".into()))?;
            d_feat = self.src_head.backward(c, g, head_mode)?;
        }
        if let Some(g) = d_logits {
            let c = cache.cls.as_ref().ok_or_else(|| Error::Gradient("classifier head was not evaluated".into()))?;
            let d = self.cls_head.backward(c, g.clone().into_dyn(), head_mode)?.expect("input gradient requested");
            d_feat = Some(match d_feat {
                Some(acc) => acc + d,
                None => d,
            });
        }
        match d_feat {
            Some(g) => Ok(self.trunk.backward(&cache.trunk, g, mode)?),
            None => Ok(None),
        }
    }

    /// Directional derivative of the critic map along `t`, with activation
    /// masks frozen from the primal pass in `cache`.
    pub fn linearize_src(&self, cache: &DiscCache<T>, t: ArrayD<T>) -> Result<(ArrayD<T>, DiscLinearCache<T>)> {
        let src = cache.src.as_ref().ok_or_else(|| Error::Gradient("critic head was not evaluated".into()))?;
        let (tf, trunk) = self.trunk.linearize(&cache.trunk, t)?;
        let (out, src) = self.src_head.linearize(src, tf)?;
        Ok((out, DiscLinearCache { trunk, src }))
    }

    /// Accumulates parameter gradients of a functional of the tangent output.
    pub fn backward_linearized(&mut self, cache: &DiscLinearCache<T>, grad: ArrayD<T>) -> Result<()> {
        let d = self.src_head.backward(&cache.src, grad, Backprop::FULL)?.expect("input gradient requested");
        self.trunk.backward(&cache.trunk, d, Backprop::PARAMS_ONLY)?;
        Ok(())
    }

    pub fn shape_chain(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let h = self.spec.image_size;
        let mut chain = self.trunk.shape_chain(&[1, 3, h, h])?;
        let feat = chain.last().map(|(_, s)| s.clone()).unwrap_or_else(|| vec![1, 3, h, h]);
        chain.extend(self.src_head.shape_chain(&feat)?.into_iter().map(|(n, s)| (format!("src.{n}"), s)));
        chain.extend(self.cls_head.shape_chain(&feat)?.into_iter().map(|(n, s)| (format!("cls.{n}"), s)));
        Ok(chain)
    }
}

impl<T: Scalar> Parameterized<T> for Discriminator<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.trunk.visit_params(&join(prefix, "trunk"), f);
        self.src_head.visit_params(&join(prefix, "src"), f);
        self.cls_head.visit_params(&join(prefix, "cls"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.trunk.visit_params_mut(&join(prefix, "trunk"), f);
        self.src_head.visit_params_mut(&join(prefix, "src"), f);
        self.cls_head.visit_params_mut(&join(prefix, "cls"), f);
    }
}
