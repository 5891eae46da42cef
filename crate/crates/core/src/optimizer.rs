//! NADAM: Adam with a Nesterov-style look-ahead on the first moment.
//!
//! Uses constant β₁ bias correction (no momentum schedule):
//!
//! ```text
//! m ← β₁m + (1−β₁)g          n ← β₂n + (1−β₂)g²
//! m̂ = m/(1−β₁ᵗ)  ĝ = g/(1−β₁ᵗ)  n̂ = n/(1−β₂ᵗ)
//! θ ← θ − lr·(β₁m̂ + (1−β₁)ĝ)/(√n̂ + ε)
//! ```

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::params::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NadamState<T = f32> {
    pub config: NadamConfig,
    pub step: u64,
    /// First and second moments, one pair per parameter tensor in visit order.
    pub moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> NadamState<T> {
    pub fn new(config: NadamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update to every parameter of `model` using its accumulated
    /// gradients. Refuses the step (leaving model and state untouched) if any
    /// gradient is non-finite.
    pub fn step<M: Parameterized<T> + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut shapes = Vec::new();
        let mut bad = None;
        model.visit_params("", &mut |name, p| {
            shapes.push(p.value.shape().to_vec());
            if bad.is_none() && !p.grad.is_finite() {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!("gradient of {name}; optimizer step refused")));
        }
        if self.moments.is_empty() {
            self.moments = shapes.iter().map(|s| (Tensor::zeros(s), Tensor::zeros(s))).collect();
        } else if self.moments.len() != shapes.len()
            || self.moments.iter().zip(&shapes).any(|((m, _), s)| m.shape() != s.as_slice())
        {
            return Err(Error::dim("nadam_step", "optimizer state does not match model parameters"));
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let corr1 = T::lit(1.0 / (1.0 - c.beta1.powi(t)));
        let corr2 = T::lit(1.0 / (1.0 - c.beta2.powi(t)));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.epsilon);

        let mut idx = 0;
        let moments = &mut self.moments;
        model.visit_params_mut("", &mut |_, p| {
            let (m, n) = &mut moments[idx];
            idx += 1;
            let values = p.value.data_mut();
            for (((theta, &g), m), n) in values
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(n.data_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *n = b2 * *n + (one - b2) * g * g;
                let m_hat = *m * corr1;
                let g_hat = g * corr1;
                let n_hat = *n * corr2;
                *theta -= lr * (b1 * m_hat + (one - b1) * g_hat) / (n_hat.sqrt() + eps);
            }
        });
        Ok(())
    }
}
