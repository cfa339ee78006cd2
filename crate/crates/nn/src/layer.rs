//! Layer enum, per-invocation caches and sequential composition.

use ndarray::{ArrayD, Axis, IxDyn};

use crate::error::shape_err;
use crate::norm::NormCache;
use crate::param::{join, Param, Parameterized};
use crate::{Conv2d, ConvTranspose2d, InstanceNorm2d, Linear, NnError, Result, Scalar};

/// Which gradients a backward pass should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backprop {
    /// Return the gradient with respect to the layer input.
    pub input: bool,
    /// Accumulate parameter gradients into the layer's `Param::grad`.
    pub params: bool,
}

impl Backprop {
    pub const FULL: Self = Self { input: true, params: true };
    pub const INPUT_ONLY: Self = Self { input: true, params: false };
    pub const PARAMS_ONLY: Self = Self { input: false, params: true };
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ConvTranspose(ConvTranspose2d<T>),
    InstanceNorm(InstanceNorm2d<T>),
    Linear(Linear<T>),
    Relu,
    LeakyRelu(f64),
    Tanh,
    /// `x + inner(x)`
    Residual(Sequential<T>),
    /// `[B, C, H, W] -> [B, C]` spatial mean.
    GlobalAvgPool,
    /// `[B, ...] -> [B, prod(...)]`
    Flatten,
}

/// State saved by one forward invocation of a layer.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    /// Input of an affine layer; `with_bias = false` marks a linearized pass.
    Input { input: ArrayD<T>, with_bias: bool },
    Norm(NormCache<T>),
    /// Elementwise derivative of a piecewise-linear activation.
    Mask(ArrayD<T>),
    /// Output of a smooth activation (tanh).
    Output(ArrayD<T>),
    Residual(SeqCache<T>),
    Shape(Vec<usize>),
}

#[derive(Debug, Clone, Default)]
pub struct SeqCache<T> {
    pub caches: Vec<LayerCache<T>>,
}

impl<T: Scalar> Layer<T> {
    pub fn output_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        let four = |ctx: &str| -> Result<[usize; 4]> {
            match *shape {
                [b, c, h, w] => Ok([b, c, h, w]),
                _ => Err(shape_err(ctx, "[B, C, H, W]", shape)),
            }
        };
        Ok(match self {
            Layer::Conv(c) => {
                let [b, ch, h, w] = four("conv")?;
                if ch != c.in_channels() || h + 2 * c.padding < c.kernel() || w + 2 * c.padding < c.kernel() {
                    return Err(shape_err("conv", format!("[B, {}, >=k, >=k]", c.in_channels()), shape));
                }
                let (ho, wo) = c.output_hw(h, w);
                vec![b, c.out_channels(), ho, wo]
            }
            Layer::ConvTranspose(c) => {
                let [b, ch, h, w] = four("conv_transpose")?;
                if ch != c.in_channels() {
                    return Err(shape_err("conv_transpose", format!("[B, {}, H, W]", c.in_channels()), shape));
                }
                let (ho, wo) = c.output_hw(h, w);
                vec![b, c.out_channels(), ho, wo]
            }
            Layer::InstanceNorm(n) => {
                let s = four("instance norm")?;
                if s[1] != n.channels() {
                    return Err(shape_err("instance norm", format!("[B, {}, H, W]", n.channels()), shape));
                }
                shape.to_vec()
            }
            Layer::Linear(l) => match *shape {
                [b, f] if f == l.in_features() => vec![b, l.out_features()],
                _ => return Err(shape_err("linear", format!("[B, {}]", l.in_features()), shape)),
            },
            Layer::Relu | Layer::LeakyRelu(_) | Layer::Tanh => shape.to_vec(),
            Layer::Residual(inner) => {
                let out = inner.output_shape(shape)?;
                if out != shape {
                    return Err(shape_err("residual", format!("{shape:?}"), &out));
                }
                out
            }
            Layer::GlobalAvgPool => {
                let [b, c, _, _] = four("global average pool")?;
                vec![b, c]
            }
            Layer::Flatten => vec![shape[0], shape[1..].iter().product()],
        })
    }

    /// Runs the layer. The cache is only built when `keep` is set.
    pub fn forward(&self, x: ArrayD<T>, keep: bool) -> Result<(ArrayD<T>, Option<LayerCache<T>>)> {
        Ok(match self {
            Layer::Conv(c) => {
                let y = c.forward(&x, true)?;
                (y, keep.then(|| LayerCache::Input { input: x, with_bias: true }))
            }
            Layer::ConvTranspose(c) => {
                let y = c.forward(&x, true)?;
                (y, keep.then(|| LayerCache::Input { input: x, with_bias: true }))
            }
            Layer::Linear(l) => {
                let y = l.forward(&x, true)?;
                (y, keep.then(|| LayerCache::Input { input: x, with_bias: true }))
            }
            Layer::InstanceNorm(n) => {
                let (y, cache) = n.forward(&x)?;
                (y, keep.then_some(LayerCache::Norm(cache)))
            }
            Layer::Relu => {
                let mask = keep.then(|| x.mapv(|v| if v > T::zero() { T::one() } else { T::zero() }));
                let mut y = x;
                y.mapv_inplace(|v| v.max(T::zero()));
                (y, mask.map(LayerCache::Mask))
            }
            Layer::LeakyRelu(slope) => {
                let s = T::lit(*slope);
                let mask = keep.then(|| x.mapv(|v| if v > T::zero() { T::one() } else { s }));
                let mut y = x;
                y.mapv_inplace(|v| if v > T::zero() { v } else { v * s });
                (y, mask.map(LayerCache::Mask))
            }
            Layer::Tanh => {
                let mut y = x;
                y.mapv_inplace(|v| v.tanh());
                let cache = keep.then(|| LayerCache::Output(y.clone()));
                (y, cache)
            }
            Layer::Residual(inner) => {
                let (r, cache) = inner.run(x.clone(), keep)?;
                let mut y = x;
                y += &r;
                (y, cache.map(LayerCache::Residual))
            }
            Layer::GlobalAvgPool => {
                let shape = x.shape().to_vec();
                if shape.len() != 4 {
                    return Err(shape_err("global average pool", "[B, C, H, W]", &shape));
                }
                let plane = T::lit((shape[2] * shape[3]) as f64);
                let y = x.sum_axis(Axis(3)).sum_axis(Axis(2)).mapv(|v| v / plane);
                (y, keep.then_some(LayerCache::Shape(shape)))
            }
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                let flat = vec![shape[0], shape[1..].iter().product()];
                let y = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&flat))
                    .expect("contiguous flatten");
                (y, keep.then_some(LayerCache::Shape(shape)))
            }
        })
    }

    /// Pushes a tangent through the layer with activation masks frozen from
    /// `primal`. Biases are dropped, so the result is the directional
    /// derivative of the layer output along `t`.
    pub fn linearize(&self, name: &str, primal: &LayerCache<T>, t: ArrayD<T>) -> Result<(ArrayD<T>, LayerCache<T>)> {
        let mismatch = || NnError::CacheMismatch { layer: name.to_string() };
        Ok(match (self, primal) {
            (Layer::Conv(c), LayerCache::Input { .. }) => (c.forward(&t, false)?, LayerCache::Input { input: t, with_bias: false }),
            (Layer::ConvTranspose(c), LayerCache::Input { .. }) => {
                (c.forward(&t, false)?, LayerCache::Input { input: t, with_bias: false })
            }
            (Layer::Linear(l), LayerCache::Input { .. }) => (l.forward(&t, false)?, LayerCache::Input { input: t, with_bias: false }),
            (Layer::Relu | Layer::LeakyRelu(_), LayerCache::Mask(m)) => {
                if m.shape() != t.shape() {
                    return Err(shape_err("tangent", format!("{:?}", m.shape()), t.shape()));
                }
                (t * m, LayerCache::Mask(m.clone()))
            }
            (Layer::Residual(inner), LayerCache::Residual(pc)) => {
                let (r, cache) = inner.linearize(pc, t.clone())?;
                (t + r, LayerCache::Residual(cache))
            }
            (Layer::GlobalAvgPool | Layer::Flatten, LayerCache::Shape(_)) => {
                let (y, cache) = self.forward(t, true)?;
                (y, cache.expect("kept"))
            }
            (Layer::InstanceNorm(_) | Layer::Tanh, _) => return Err(NnError::NotLinearizable { layer: name.to_string() }),
            _ => return Err(mismatch()),
        })
    }

    pub fn backward(&mut self, name: &str, cache: &LayerCache<T>, grad: ArrayD<T>, mode: Backprop) -> Result<Option<ArrayD<T>>> {
        let mismatch = || NnError::CacheMismatch { layer: name.to_string() };
        match (self, cache) {
            (Layer::Conv(c), LayerCache::Input { input, with_bias }) => c.backward(input, &grad, *with_bias, mode),
            (Layer::ConvTranspose(c), LayerCache::Input { input, with_bias }) => c.backward(input, &grad, *with_bias, mode),
            (Layer::Linear(l), LayerCache::Input { input, with_bias }) => l.backward(input, &grad, *with_bias, mode),
            (Layer::InstanceNorm(n), LayerCache::Norm(nc)) => n.backward(nc, &grad, mode),
            (Layer::Relu | Layer::LeakyRelu(_), LayerCache::Mask(m)) => Ok(mode.input.then(|| grad * m)),
            (Layer::Tanh, LayerCache::Output(y)) => {
                if !mode.input {
                    return Ok(None);
                }
                let mut g = grad;
                g.zip_mut_with(y, |g, &y| *g *= T::one() - y * y);
                Ok(Some(g))
            }
            (Layer::Residual(inner), LayerCache::Residual(rc)) => {
                let inner_mode = Backprop { input: true, params: mode.params };
                let dr = inner.backward(rc, grad.clone(), inner_mode)?.expect("input grad requested");
                Ok(mode.input.then(|| grad + dr))
            }
            (Layer::GlobalAvgPool, LayerCache::Shape(shape)) => {
                if !mode.input {
                    return Ok(None);
                }
                let plane = T::lit((shape[2] * shape[3]) as f64);
                let g = grad.mapv(|v| v / plane);
                let mut dx = ArrayD::<T>::zeros(IxDyn(shape));
                for ((b, c, _, _), v) in dx
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix4>()
                    .expect("4-D")
                    .indexed_iter_mut()
                {
                    *v = g[[b, c]];
                }
                Ok(Some(dx))
            }
            (Layer::Flatten, LayerCache::Shape(shape)) => Ok(mode.input.then(|| {
                grad.as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(shape))
                    .expect("contiguous unflatten")
            })),
            _ => Err(mismatch()),
        }
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        match self {
            Layer::Conv(c) => c.visit_params(prefix, f),
            Layer::ConvTranspose(c) => c.visit_params(prefix, f),
            Layer::InstanceNorm(n) => n.visit_params(prefix, f),
            Layer::Linear(l) => l.visit_params(prefix, f),
            Layer::Residual(inner) => inner.visit_params(prefix, f),
            _ => {}
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match self {
            Layer::Conv(c) => c.visit_params_mut(prefix, f),
            Layer::ConvTranspose(c) => c.visit_params_mut(prefix, f),
            Layer::InstanceNorm(n) => n.visit_params_mut(prefix, f),
            Layer::Linear(l) => l.visit_params_mut(prefix, f),
            Layer::Residual(inner) => inner.visit_params_mut(prefix, f),
            _ => {}
        }
    }
}

/// An ordered stack of named layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    pub layers: Vec<(String, Layer<T>)>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer<T>) -> &mut Self {
        self.layers.push((name.into(), layer));
        self
    }

    pub fn with(mut self, name: impl Into<String>, layer: Layer<T>) -> Self {
        self.push(name, layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn output_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        let mut s = shape.to_vec();
        for (_, layer) in &self.layers {
            s = layer.output_shape(&s)?;
        }
        Ok(s)
    }

    /// Output shape after every layer, paired with the layer name.
    pub fn shape_chain(&self, shape: &[usize]) -> Result<Vec<(String, Vec<usize>)>> {
        let mut s = shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (name, layer) in &self.layers {
            s = layer.output_shape(&s)?;
            out.push((name.clone(), s.clone()));
        }
        Ok(out)
    }

    /// Forward pass that fails on the first layer producing a non-finite value.
    pub fn run(&self, x: ArrayD<T>, keep: bool) -> Result<(ArrayD<T>, Option<SeqCache<T>>)> {
        self.run_range(x, 0..self.layers.len(), keep)
    }

    pub fn forward(&self, x: ArrayD<T>) -> Result<(ArrayD<T>, SeqCache<T>)> {
        let (y, cache) = self.run(x, true)?;
        Ok((y, cache.expect("kept")))
    }

    pub fn infer(&self, x: ArrayD<T>) -> Result<ArrayD<T>> {
        Ok(self.run(x, false)?.0)
    }

    /// Runs only the layers in `range` (used to read intermediate features).
    pub fn run_range(
        &self,
        mut x: ArrayD<T>,
        range: std::ops::Range<usize>,
        keep: bool,
    ) -> Result<(ArrayD<T>, Option<SeqCache<T>>)> {
        let mut caches = keep.then(|| Vec::with_capacity(range.len()));
        for (name, layer) in &self.layers[range] {
            let (y, cache) = layer.forward(x, keep).map_err(|e| prefix_err(name, e))?;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite { layer: name.clone() });
            }
            if let (Some(cs), Some(c)) = (caches.as_mut(), cache) {
                cs.push(c);
            }
            x = y;
        }
        Ok((x, caches.map(|caches| SeqCache { caches })))
    }

    pub fn linearize(&self, primal: &SeqCache<T>, mut t: ArrayD<T>) -> Result<(ArrayD<T>, SeqCache<T>)> {
        if primal.caches.len() != self.layers.len() {
            return Err(NnError::CacheMismatch { layer: "sequential".into() });
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for ((name, layer), pc) in self.layers.iter().zip(&primal.caches) {
            let (y, c) = layer.linearize(name, pc, t).map_err(|e| prefix_err(name, e))?;
            caches.push(c);
            t = y;
        }
        Ok((t, SeqCache { caches }))
    }

    /// Back-propagates through the cached layers. Every layer but the first
    /// always produces an input gradient; `mode.input` governs the first.
    pub fn backward(&mut self, cache: &SeqCache<T>, mut grad: ArrayD<T>, mode: Backprop) -> Result<Option<ArrayD<T>>> {
        let n = cache.caches.len();
        if n > self.layers.len() {
            return Err(NnError::CacheMismatch { layer: "sequential".into() });
        }
        for (i, ((name, layer), c)) in self.layers[..n].iter_mut().zip(&cache.caches).enumerate().rev() {
            let m = Backprop { input: i > 0 || mode.input, params: mode.params };
            match layer.backward(name, c, grad, m).map_err(|e| prefix_err(name, e))? {
                Some(g) => grad = g,
                None => return Ok(None),
            }
        }
        Ok(Some(grad))
    }
}

fn prefix_err(name: &str, e: NnError) -> NnError {
    match e {
        NnError::NonFinite { layer } => NnError::NonFinite { layer: join(name, &layer) },
        NnError::NotLinearizable { layer } if layer != name => NnError::NotLinearizable { layer: join(name, &layer) },
        other => other,
    }
}

impl<T: Scalar> Parameterized<T> for Sequential<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (name, layer) in &self.layers {
            layer.visit_params(&join(prefix, name), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (name, layer) in &mut self.layers {
            layer.visit_params_mut(&join(prefix, name), f);
        }
    }
}
