use ndarray::{s, Array2, ArrayD, Axis, Ix4};
use rand::Rng;
use styleshift_nn::{Backprop, Conv2d, ConvTranspose2d, InstanceNorm2d, Layer, Param, Parameterized, Scalar, SeqCache, Sequential};

use super::{GeneratorSpec, CONV_INIT_STD};
use crate::{Error, Result};

/// Concatenates image, one-hot label planes and the row-tiled style code
/// into the `[B, 3 + K + 1, H, H]` generator input.
pub fn build_generator_input<T: Scalar>(
    image: &ArrayD<T>,
    labels: &[usize],
    num_domains: usize,
    style: &Array2<T>,
) -> Result<ArrayD<T>> {
    let img = image.view().into_dimensionality::<Ix4>().map_err(|_| shape_error("image", image.shape()))?;
    let (b, c, h, w) = img.dim();
    if c != 3 || h != w || labels.len() != b {
        return Err(Error::Data(format!(
            "generator input expects [B, 3, H, H] images with B labels, got {:?} and {} labels",
            image.shape(),
            labels.len()
        )));
    }
    if style.dim() != (b, w) {
        return Err(Error::config_at(
            "generator.style_length",
            format!("style batch {:?} does not match [B = {b}, S = H = {w}]", style.dim()),
        ));
    }
    let mut out = ndarray::Array4::<T>::zeros((b, 3 + num_domains + 1, h, w));
    out.slice_mut(s![.., 0..3, .., ..]).assign(&img);
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_domains {
            return Err(Error::Data(format!("target domain {l} out of range for {num_domains} domains")));
        }
        out.slice_mut(s![i, 3 + l, .., ..]).fill(T::one());
        let row = style.row(i);
        for mut r in out.slice_mut(s![i, 3 + num_domains, .., ..]).rows_mut() {
            r.assign(&row);
        }
    }
    Ok(out.into_dyn())
}

fn shape_error(what: &str, shape: &[usize]) -> Error {
    Error::Data(format!("{what} must be 4-D, got shape {shape:?}"))
}

/// Encoder, residual bottleneck and decoder as one named layer stack.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub spec: GeneratorSpec,
    pub net: Sequential<T>,
    /// Number of leading layers forming the encoder plus bottleneck.
    latent_end: usize,
}

#[derive(Debug, Clone)]
pub struct GenCache<T> {
    seq: SeqCache<T>,
}

/// Gradients with respect to the generator's image and style inputs.
#[derive(Debug, Clone)]
pub struct GenGrads<T> {
    pub image: ArrayD<T>,
    pub style: Array2<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng + ?Sized>(spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let w = spec.base_width;
        let std = CONV_INIT_STD;
        let mut net = Sequential::new();
        net.push("in.conv", Layer::Conv(Conv2d::new(spec.input_channels(), w, 7, 1, 3, false, std, rng)))
            .push("in.norm", Layer::InstanceNorm(InstanceNorm2d::new(w)))
            .push("in.relu", Layer::Relu);
        for (i, ch) in [(1, w), (2, 2 * w)] {
            net.push(format!("down{i}.conv"), Layer::Conv(Conv2d::new(ch, 2 * ch, 4, 2, 1, false, std, rng)))
                .push(format!("down{i}.norm"), Layer::InstanceNorm(InstanceNorm2d::new(2 * ch)))
                .push(format!("down{i}.relu"), Layer::Relu);
        }
        let bw = spec.bottleneck_channels();
        for i in 1..=spec.num_residual_blocks {
            let block = Sequential::new()
                .with("conv_a", Layer::Conv(Conv2d::new(bw, bw, 3, 1, 1, false, std, rng)))
                .with("norm_a", Layer::InstanceNorm(InstanceNorm2d::new(bw)))
                .with("relu", Layer::Relu)
                .with("conv_b", Layer::Conv(Conv2d::new(bw, bw, 3, 1, 1, false, std, rng)))
                .with("norm_b", Layer::InstanceNorm(InstanceNorm2d::new(bw)));
            net.push(format!("res{i}"), Layer::Residual(block));
        }
        let latent_end = net.len();
        for (i, ch) in [(1, bw), (2, bw / 2)] {
            net.push(format!("up{i}.conv"), Layer::ConvTranspose(ConvTranspose2d::new(ch, ch / 2, 4, 2, 1, false, std, rng)))
                .push(format!("up{i}.norm"), Layer::InstanceNorm(InstanceNorm2d::new(ch / 2)))
                .push(format!("up{i}.relu"), Layer::Relu);
        }
        net.push("out.conv", Layer::Conv(Conv2d::new(w, 3, 7, 1, 3, false, std, rng)))
            .push("out.tanh", Layer::Tanh);
        Ok(Self { spec, net, latent_end })
    }

    fn input(&self, image: &ArrayD<T>, labels: &[usize], style: &Array2<T>) -> Result<ArrayD<T>> {
        if image.ndim() == 4 && image.shape()[2] != self.spec.image_size {
            return Err(Error::Data(format!(
                "generator built for {}x{} images, got {:?}",
                self.spec.image_size,
                self.spec.image_size,
                image.shape()
            )));
        }
        build_generator_input(image, labels, self.spec.num_domains, style)
    }

    /// `G(x, c, s)` keeping everything needed for [`Generator::backward`].
    pub fn forward(&self, image: &ArrayD<T>, labels: &[usize], style: &Array2<T>) -> Result<(ArrayD<T>, GenCache<T>)> {
        let (y, seq) = self.net.forward(self.input(image, labels, style)?)?;
        Ok((y, GenCache { seq }))
    }

    pub fn infer(&self, image: &ArrayD<T>, labels: &[usize], style: &Array2<T>) -> Result<ArrayD<T>> {
        Ok(self.net.infer(self.input(image, labels, style)?)?)
    }

    /// Back-propagates `grad` (w.r.t. the output image); parameter gradients
    /// are accumulated only when `params` is set.
    pub fn backward(&mut self, cache: &GenCache<T>, grad: ArrayD<T>, params: bool) -> Result<GenGrads<T>> {
        let dx = self
            .net
            .backward(&cache.seq, grad, Backprop { input: true, params })?
            .expect("input gradient requested");
        let k = self.spec.num_domains;
        let image = dx.slice(s![.., 0..3, .., ..]).to_owned().into_dyn();
        let style = dx.slice(s![.., 3 + k, .., ..]).sum_axis(Axis(1));
        Ok(GenGrads { image, style })
    }

    /// Spatially averaged bottleneck features `[B, 4 * base_width]`.
    pub fn extract_latent(&self, image: &ArrayD<T>, labels: &[usize], style: &Array2<T>) -> Result<Array2<T>> {
        let (h, _) = self.net.run_range(self.input(image, labels, style)?, 0..self.latent_end, false)?;
        let pooled = Layer::GlobalAvgPool.forward(h, false)?.0;
        Ok(pooled.into_dimensionality().expect("[B, C] after pooling"))
    }

    /// `(layer name, output shape)` for a batch of one.
    pub fn shape_chain(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let h = self.spec.image_size;
        Ok(self.net.shape_chain(&[1, self.spec.input_channels(), h, h])?)
    }
}

impl<T: Scalar> Parameterized<T> for Generator<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.net.visit_params(prefix, f)
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.net.visit_params_mut(prefix, f)
    }
}
