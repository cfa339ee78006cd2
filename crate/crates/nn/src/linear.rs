use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayD, ArrayView2, ArrayViewMut2, Axis, Ix2};
use rand::Rng;

use crate::error::shape_err;
use crate::layer::Backprop;
use crate::param::{join, Param};
use crate::{init, Result, Scalar};

/// Fully connected layer on `[B, in]` inputs. Weight layout `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weight: Param::new(init::normal(&[out_features, in_features], std, rng)),
            bias: Param::new(init::zeros(&[out_features])),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn weight2(&self) -> ArrayView2<'_, T> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-D weight")
    }

    fn input2<'a>(&self, x: &'a ArrayD<T>, context: &str) -> Result<ArrayView2<'a, T>> {
        match x.view().into_dimensionality::<Ix2>() {
            Ok(v) if v.ncols() == self.in_features() => Ok(v),
            _ => Err(shape_err(context, format!("[B, {}]", self.in_features()), x.shape())),
        }
    }

    pub fn forward(&self, x: &ArrayD<T>, with_bias: bool) -> Result<ArrayD<T>> {
        let xv = self.input2(x, "linear input")?;
        let mut out = xv.dot(&self.weight2().t());
        if with_bias {
            out += &self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
        }
        Ok(out.into_dyn())
    }

    pub fn backward(
        &mut self,
        input: &ArrayD<T>,
        grad_out: &ArrayD<T>,
        with_bias: bool,
        mode: Backprop,
    ) -> Result<Option<ArrayD<T>>> {
        let xv = self.input2(input, "linear backward input")?;
        let gv = grad_out
            .view()
            .into_dimensionality::<Ix2>()
            .ok()
            .filter(|g| g.dim() == (xv.nrows(), self.out_features()))
            .ok_or_else(|| shape_err("linear grad_out", format!("[{}, {}]", xv.nrows(), self.out_features()), grad_out.shape()))?;
        if mode.params {
            let mut dw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-D grad");
            general_mat_mul(T::one(), &gv.t(), &xv, T::one(), &mut dw);
            if with_bias {
                let sum = gv.sum_axis(Axis(0));
                self.bias.grad.zip_mut_with(&sum.into_dyn(), |d, &s| *d += s);
            }
        }
        if !mode.input {
            return Ok(None);
        }
        let mut dx = ndarray::Array2::<T>::zeros(xv.raw_dim());
        {
            let mut dv: ArrayViewMut2<T> = dx.view_mut();
            general_mat_mul(T::one(), &gv, &self.weight2(), T::zero(), &mut dv);
        }
        Ok(Some(dx.into_dyn()))
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
