use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::{NnError, Param, Parameterized, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for one optimizer, aligned with the parameter visiting
/// order of the modules it was created for.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: Vec<ArrayD<T>>,
    pub second: Vec<ArrayD<T>>,
}

/// Adam with bias correction. One instance may drive several modules; they
/// must be passed to [`Adam::step`] in the same order every time.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, modules: &[&dyn Parameterized<T>]) -> Self {
        let mut first = Vec::new();
        for m in modules {
            m.visit_params("", &mut |_, p| first.push(ArrayD::zeros(p.value.raw_dim())));
        }
        let second = first.clone();
        Self { config, state: AdamState { step: 0, first, second } }
    }

    pub fn from_state(config: AdamConfig, state: AdamState<T>, modules: &[&dyn Parameterized<T>]) -> Result<Self> {
        let fresh = Self::new(config, modules);
        let same = |a: &[ArrayD<T>], b: &[ArrayD<T>]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape());
        if !same(&fresh.state.first, &state.first) || !same(&fresh.state.second, &state.second) {
            return Err(NnError::OptimizerState("moment shapes differ from parameter shapes".into()));
        }
        Ok(Self { config, state })
    }

    /// Applies one update with learning rate `lr` and clears the gradients.
    pub fn step(&mut self, lr: f64, modules: &mut [&mut dyn Parameterized<T>]) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let c1 = T::lit(1.0 - b1.powi(t));
        let c2 = T::lit(1.0 - b2.powi(t));
        let (b1, b2, eps, lr) = (T::lit(b1), T::lit(b2), T::lit(self.config.eps), T::lit(lr));
        let one = T::one();
        let mut idx = 0;
        let state = &mut self.state;
        for m in modules.iter_mut() {
            m.visit_params_mut("", &mut |_, p: &mut Param<T>| {
                let m1 = &mut state.first[idx];
                let m2 = &mut state.second[idx];
                ndarray::Zip::from(&mut p.value)
                    .and(&mut p.grad)
                    .and(m1)
                    .and(m2)
                    .for_each(|w, g, m, v| {
                        *m = b1 * *m + (one - b1) * *g;
                        *v = b2 * *v + (one - b2) * *g * *g;
                        let mh = *m / c1;
                        let vh = *v / c2;
                        *w -= lr * mh / (vh.sqrt() + eps);
                        *g = T::zero();
                    });
                idx += 1;
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Layer, Linear, Sequential};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_moves_each_weight_by_lr_against_gradient_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Sequential::<f64>::new().with("fc", Layer::Linear(Linear::new(3, 2, 0.1, &mut rng)));
        let before = net.snapshot();
        net.visit_params_mut("", &mut |_, p| p.grad.fill(-2.0));
        let mut opt = Adam::new(AdamConfig { beta1: 0.5, beta2: 0.9, eps: 1e-8 }, &[&net]);
        opt.step(1e-3, &mut [&mut net]);
        for (b, a) in before.iter().zip(net.snapshot()) {
            for (x, y) in b.iter().zip(a.iter()) {
                assert!((y - x - 1e-3).abs() < 1e-9);
            }
        }
        net.visit_params("", &mut |_, p| assert!(p.grad.iter().all(|&g| g == 0.0)));
    }
}
