//! Trainable parameters and the visitor used by the optimizer, checkpoints
//! and gradient checks.

use crate::numerics::{Real, Tensor};

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Anything that owns named parameters and non-trainable buffers.
///
/// Visit order is fixed for a given architecture; the optimizer and the
/// checkpoint format both rely on it.
pub trait Parameterized<T: Real> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor<T>)) {}

    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.value.len());
        n
    }

    /// Names and values of all parameters followed by all buffers.
    fn named_state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, p| out.push((name.to_string(), p.value.clone())));
        self.visit_buffers("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
