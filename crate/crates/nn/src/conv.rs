//! 2-D convolution and transposed convolution over `[B, C, H, W]` tensors.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayD, ArrayView2, ArrayViewMut2, IxDyn};
use rand::Rng;

use crate::error::shape_err;
use crate::im2col::{col2im_strided, im2col_strided, ConvGeom};
use crate::layer::Backprop;
use crate::param::{join, Param};
use crate::{init, Result, Scalar};

fn dims4(x: &ArrayD<impl Scalar>, context: &str, channels: usize) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, h, w] if c == channels => Ok((b, h, w)),
        _ => Err(shape_err(context, format!("[B, {channels}, H, W]"), x.shape())),
    }
}

/// Upper bound on the floats in one column block; images are processed in
/// chunks so that each GEMM packs the weights once for many images.
/// Unit tests use a tiny block so that multi-chunk paths are exercised.
const BLOCK_FLOATS: usize = if cfg!(test) { 64 } else { 1 << 21 };

fn chunk_len(batch: usize, per_image: usize) -> usize {
    (BLOCK_FLOATS / per_image.max(1)).clamp(1, batch.max(1))
}

/// Copies images `[m, c, n]` into a `[c, m * n]` block.
fn gather<T: Scalar>(src: &[T], m: usize, c: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * m * n];
    for j in 0..m {
        for ch in 0..c {
            out[ch * m * n + j * n..ch * m * n + (j + 1) * n].copy_from_slice(&src[(j * c + ch) * n..(j * c + ch + 1) * n]);
        }
    }
    out
}

/// Inverse of [`gather`].
fn scatter<T: Scalar>(block: &[T], dst: &mut [T], m: usize, c: usize, n: usize) {
    for j in 0..m {
        for ch in 0..c {
            dst[(j * c + ch) * n..(j * c + ch + 1) * n].copy_from_slice(&block[ch * m * n + j * n..ch * m * n + (j + 1) * n]);
        }
    }
}

fn view<T>(data: &[T], r: usize, c: usize) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((r, c), &data[..r * c]).expect("block shape")
}

fn view_mut<T>(data: &mut [T], r: usize, c: usize) -> ArrayViewMut2<'_, T> {
    ArrayViewMut2::from_shape((r, c), &mut data[..r * c]).expect("block shape")
}

/// Square-kernel convolution with zero padding. Weight layout `[out, in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    /// Weights drawn from `N(0, std)`, bias (if any) zero.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: Param::new(init::normal(&[out_channels, in_channels, kernel, kernel], std, rng)),
            bias: bias.then(|| Param::new(init::zeros(&[out_channels]))),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    fn geom(&self, h: usize, w: usize) -> ConvGeom {
        ConvGeom {
            channels: self.in_channels(),
            height: h,
            width: w,
            kernel: self.kernel(),
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let g = self.geom(h, w);
        (g.out_height(), g.out_width())
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        let (o, k) = (self.out_channels(), self.in_channels() * self.kernel() * self.kernel());
        ArrayView2::from_shape((o, k), self.weight.value.as_slice().expect("contiguous weight"))
            .expect("weight shape")
    }

    /// Applies the convolution; `with_bias = false` gives the linear part only.
    pub fn forward(&self, x: &ArrayD<T>, with_bias: bool) -> Result<ArrayD<T>> {
        let (b, h, w) = dims4(x, "conv2d input", self.in_channels())?;
        let g = self.geom(h, w);
        if !g.valid() {
            return Err(shape_err("conv2d input", format!("spatial >= kernel {}", g.kernel), x.shape()));
        }
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let (cout, n_out, rows) = (self.out_channels(), g.col_cols(), g.col_rows());
        let mut out = ArrayD::<T>::zeros(IxDyn(&[b, cout, g.out_height(), g.out_width()]));
        let wmat = self.weight_matrix();
        let in_len = g.channels * h * w;
        let chunk = chunk_len(b, rows * n_out);
        let mut cols = vec![T::zero(); rows * chunk * n_out];
        let mut block = vec![T::zero(); cout * chunk * n_out];
        let os = out.as_slice_mut().expect("fresh array");
        for s0 in (0..b).step_by(chunk) {
            let m = chunk.min(b - s0);
            let ld = m * n_out;
            for j in 0..m {
                let i = s0 + j;
                im2col_strided(&xs[i * in_len..(i + 1) * in_len], &g, &mut cols[j * n_out..], ld);
            }
            general_mat_mul(T::one(), &wmat, &view(&cols, rows, ld), T::zero(), &mut view_mut(&mut block, cout, ld));
            if with_bias {
                if let Some(bias) = &self.bias {
                    for (row, &bv) in block.chunks_mut(ld).zip(bias.value.iter()) {
                        row.iter_mut().for_each(|v| *v += bv);
                    }
                }
            }
            scatter(&block, &mut os[s0 * cout * n_out..], m, cout, n_out);
        }
        Ok(out)
    }

    /// Back-propagates `grad_out` given the forward `input`.
    pub fn backward(
        &mut self,
        input: &ArrayD<T>,
        grad_out: &ArrayD<T>,
        with_bias: bool,
        mode: Backprop,
    ) -> Result<Option<ArrayD<T>>> {
        let (b, h, w) = dims4(input, "conv2d backward input", self.in_channels())?;
        let g = self.geom(h, w);
        let (cout, n_out, rows) = (self.out_channels(), g.col_cols(), g.col_rows());
        let expected = [b, cout, g.out_height(), g.out_width()];
        if grad_out.shape() != expected {
            return Err(shape_err("conv2d grad_out", format!("{expected:?}"), grad_out.shape()));
        }
        let x = input.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let go = grad_out.as_standard_layout();
        let gs = go.as_slice().expect("standard layout");
        let in_len = g.channels * h * w;
        let mut dx = mode.input.then(|| ArrayD::<T>::zeros(IxDyn(&[b, g.channels, h, w])));
        if with_bias && mode.params {
            if let Some(bias) = &mut self.bias {
                for i in 0..b {
                    for (c, db) in bias.grad.iter_mut().enumerate() {
                        let start = (i * cout + c) * n_out;
                        *db += gs[start..start + n_out].iter().copied().sum::<T>();
                    }
                }
            }
        }
        let chunk = chunk_len(b, rows * n_out);
        let mut cols = vec![T::zero(); rows * chunk * n_out];
        for s0 in (0..b).step_by(chunk) {
            let m = chunk.min(b - s0);
            let ld = m * n_out;
            let gblock = gather(&gs[s0 * cout * n_out..], m, cout, n_out);
            let gv = view(&gblock, cout, ld);
            if mode.params {
                for j in 0..m {
                    let i = s0 + j;
                    im2col_strided(&xs[i * in_len..(i + 1) * in_len], &g, &mut cols[j * n_out..], ld);
                }
                let mut dw = view_mut(self.weight.grad.as_slice_mut().expect("grad"), cout, rows);
                general_mat_mul(T::one(), &gv, &view(&cols, rows, ld).t(), T::one(), &mut dw);
            }
            if let Some(dx) = dx.as_mut() {
                general_mat_mul(T::one(), &self.weight_matrix().t(), &gv, T::zero(), &mut view_mut(&mut cols, rows, ld));
                let dxs = dx.as_slice_mut().expect("fresh array");
                for j in 0..m {
                    let i = s0 + j;
                    col2im_strided(&cols[j * n_out..], &g, &mut dxs[i * in_len..(i + 1) * in_len], ld);
                }
            }
        }
        Ok(dx)
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Transposed convolution (fractionally strided). Weight layout `[in, out, k, k]`.
///
/// Output size is `(H - 1) * stride - 2 * padding + k`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: Param::new(init::normal(&[in_channels, out_channels, kernel, kernel], std, rng)),
            bias: bias.then(|| Param::new(init::zeros(&[out_channels]))),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h - 1) * self.stride + k - 2 * self.padding,
            (w - 1) * self.stride + k - 2 * self.padding,
        )
    }

    /// Geometry of the adjoint convolution mapping the output back onto the input grid.
    fn geom(&self, h: usize, w: usize) -> ConvGeom {
        let (ho, wo) = self.output_hw(h, w);
        ConvGeom {
            channels: self.out_channels(),
            height: ho,
            width: wo,
            kernel: self.kernel(),
            stride: self.stride,
            padding: self.padding,
        }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        let (i, k) = (self.in_channels(), self.out_channels() * self.kernel() * self.kernel());
        ArrayView2::from_shape((i, k), self.weight.value.as_slice().expect("contiguous weight"))
            .expect("weight shape")
    }

    pub fn forward(&self, x: &ArrayD<T>, with_bias: bool) -> Result<ArrayD<T>> {
        let (b, h, w) = dims4(x, "conv_transpose2d input", self.in_channels())?;
        if (h - 1) * self.stride + self.kernel() < 2 * self.padding + 1 {
            return Err(shape_err("conv_transpose2d input", "non-empty output", x.shape()));
        }
        let g = self.geom(h, w);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let (cin, n_in, rows) = (self.in_channels(), h * w, g.col_rows());
        let out_len = g.channels * g.height * g.width;
        let mut out = ArrayD::<T>::zeros(IxDyn(&[b, g.channels, g.height, g.width]));
        let wmat = self.weight_matrix();
        let chunk = chunk_len(b, rows * n_in);
        let mut cols = vec![T::zero(); rows * chunk * n_in];
        let os = out.as_slice_mut().expect("fresh array");
        for s0 in (0..b).step_by(chunk) {
            let m = chunk.min(b - s0);
            let ld = m * n_in;
            let xblock = gather(&xs[s0 * cin * n_in..], m, cin, n_in);
            general_mat_mul(T::one(), &wmat.t(), &view(&xblock, cin, ld), T::zero(), &mut view_mut(&mut cols, rows, ld));
            for j in 0..m {
                let i = s0 + j;
                let dst = &mut os[i * out_len..(i + 1) * out_len];
                col2im_strided(&cols[j * n_in..], &g, dst, ld);
                if with_bias {
                    if let Some(bias) = &self.bias {
                        let plane = g.height * g.width;
                        for (c, &bv) in bias.value.iter().enumerate() {
                            dst[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += bv);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(
        &mut self,
        input: &ArrayD<T>,
        grad_out: &ArrayD<T>,
        with_bias: bool,
        mode: Backprop,
    ) -> Result<Option<ArrayD<T>>> {
        let (b, h, w) = dims4(input, "conv_transpose2d backward input", self.in_channels())?;
        let g = self.geom(h, w);
        let expected = [b, g.channels, g.height, g.width];
        if grad_out.shape() != expected {
            return Err(shape_err("conv_transpose2d grad_out", format!("{expected:?}"), grad_out.shape()));
        }
        let (cin, n_in, rows) = (self.in_channels(), h * w, g.col_rows());
        let out_len = g.channels * g.height * g.width;
        let x = input.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let go = grad_out.as_standard_layout();
        let gs = go.as_slice().expect("standard layout");
        let mut dx = mode.input.then(|| ArrayD::<T>::zeros(IxDyn(&[b, cin, h, w])));

        if with_bias && mode.params {
            if let Some(bias) = &mut self.bias {
                let plane = g.height * g.width;
                for i in 0..b {
                    for (c, db) in bias.grad.iter_mut().enumerate() {
                        let start = i * out_len + c * plane;
                        *db += gs[start..start + plane].iter().copied().sum::<T>();
                    }
                }
            }
        }
        let chunk = chunk_len(b, rows * n_in);
        let mut cols = vec![T::zero(); rows * chunk * n_in];
        for s0 in (0..b).step_by(chunk) {
            let m = chunk.min(b - s0);
            let ld = m * n_in;
            for j in 0..m {
                let i = s0 + j;
                im2col_strided(&gs[i * out_len..(i + 1) * out_len], &g, &mut cols[j * n_in..], ld);
            }
            let cview = view(&cols, rows, ld);
            if mode.params {
                let xblock = gather(&xs[s0 * cin * n_in..], m, cin, n_in);
                let mut dw = view_mut(self.weight.grad.as_slice_mut().expect("grad"), cin, rows);
                general_mat_mul(T::one(), &view(&xblock, cin, ld), &cview.t(), T::one(), &mut dw);
            }
            if let Some(dx) = dx.as_mut() {
                let mut dblock = vec![T::zero(); cin * ld];
                general_mat_mul(T::one(), &self.weight_matrix(), &cview, T::zero(), &mut view_mut(&mut dblock, cin, ld));
                scatter(&dblock, &mut dx.as_slice_mut().expect("fresh array")[s0 * cin * n_in..], m, cin, n_in);
            }
        }
        Ok(dx)
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}
