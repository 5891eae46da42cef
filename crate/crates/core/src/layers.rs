//! Building blocks of the dense ladder: affine, batch normalization, ReLU,
//! dropout and Gaussian noise injection.
//!
//! Every layer with a backward pass caches what it needs during `forward` and
//! consumes the cache in `backward`; calling `backward` twice, or without a
//! preceding `forward`, is a state error. Parameter gradients accumulate into
//! [`Param::grad`].

use crate::error::{Error, Result};
use crate::numerics::{sample_gaussian, Real, RngStream, Tensor, Transpose};
use crate::params::{join, Param, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `y = x·Wᵀ + b`
#[derive(Debug, Clone)]
pub struct DenseLayer<T = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> DenseLayer<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = Tensor::from_fn(&[outputs, inputs], |_| T::lit(rng.uniform_range(-limit, limit)));
        Self::from_parts(weight, Tensor::zeros(&[outputs])).expect("consistent shapes")
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (out, _) = weight.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::dim("dense", format!("bias {:?} for {out} outputs", bias.shape())));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, w) = x.dims2()?;
        if w != self.inputs() {
            return Err(Error::dim(
                "dense_forward",
                format!("input width {w}, layer expects {}", self.inputs()),
            ));
        }
        let mut y = x.matmul_with(&self.weight.value, Transpose::Right)?;
        y.add_row_broadcast(&self.bias.value)?;
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::State("dense backward without cached forward".into()))?;
        let dw = dy.matmul_with(&x, Transpose::Left)?;
        self.weight.grad.add_assign(&dw)?;
        self.bias.grad.add_assign(&dy.sum_rows()?)?;
        dy.matmul(&self.weight.value)
    }
}

impl<T: Real> Parameterized<T> for DenseLayer<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Per-feature statistics of one batch.
#[derive(Debug, Clone)]
pub struct BatchStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
struct NormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

/// Batch normalization, split into its normalization and its learned
/// scale/bias so noise can be injected in between.
#[derive(Debug, Clone)]
pub struct BatchNormLayer<T = f32> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
    norm_cache: Option<NormCache<T>>,
    affine_cache: Option<Tensor<T>>,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

impl<T: Real> BatchNormLayer<T> {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[width], T::one())),
            beta: Param::new(Tensor::zeros(&[width])),
            running_mean: Tensor::zeros(&[width]),
            running_var: Tensor::full(&[width], T::one()),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            norm_cache: None,
            affine_cache: None,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.value.len()
    }

    /// Biased batch mean and variance per column.
    pub fn batch_stats(x: &Tensor<T>) -> Result<BatchStats<T>> {
        let (n, w) = x.dims2()?;
        if n < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch normalization needs at least 2 samples in train mode, got {n}"
            )));
        }
        let inv_n = T::lit(1.0 / n as f64);
        let mut mean = vec![T::zero(); w];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_n);
        let mut var = vec![T::zero(); w];
        for i in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s *= inv_n);
        Ok(BatchStats { mean, var })
    }

    fn normalize_impl(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        update_running: bool,
    ) -> Result<(Tensor<T>, Vec<T>, BatchStats<T>)> {
        let (n, w) = x.dims2()?;
        if w != self.width() {
            return Err(Error::dim("batchnorm_forward", format!("width {w}, layer {}", self.width())));
        }
        let eps = T::lit(self.epsilon);
        let stats = match mode {
            Mode::Train => {
                let stats = Self::batch_stats(x)?;
                if update_running {
                    let m = T::lit(self.momentum);
                    let one_m = T::one() - m;
                    for j in 0..w {
                        let rm = &mut self.running_mean.data_mut()[j];
                        *rm = m * *rm + one_m * stats.mean[j];
                        let rv = &mut self.running_var.data_mut()[j];
                        *rv = m * *rv + one_m * stats.var[j];
                    }
                }
                stats
            }
            Mode::Eval => BatchStats {
                mean: self.running_mean.data().to_vec(),
                var: self.running_var.data().to_vec(),
            },
        };
        let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.clone();
        for i in 0..n {
            for ((v, &m), &s) in xhat.row_mut(i).iter_mut().zip(&stats.mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        Ok((xhat, inv_std, stats))
    }

    /// `(x − μ)/√(σ² + ε)` with batch statistics in train mode and running
    /// statistics in eval mode. Caches for [`Self::normalize_backward`].
    pub fn normalize(&mut self, x: &Tensor<T>, mode: Mode, update_running: bool) -> Result<(Tensor<T>, BatchStats<T>)> {
        let (xhat, inv_std, stats) = self.normalize_impl(x, mode, update_running)?;
        self.norm_cache = Some(NormCache {
            xhat: xhat.clone(),
            inv_std,
            batch_stats: mode == Mode::Train,
        });
        Ok((xhat, stats))
    }

    /// Same as [`Self::normalize`] without caching anything for backward.
    pub fn normalize_uncached(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        update_running: bool,
    ) -> Result<(Tensor<T>, BatchStats<T>)> {
        let (xhat, _, stats) = self.normalize_impl(x, mode, update_running)?;
        Ok((xhat, stats))
    }

    /// Eval-mode normalization with running statistics; touches no state.
    pub fn normalize_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, w) = x.dims2()?;
        if w != self.width() {
            return Err(Error::dim("batchnorm_forward", format!("width {w}, layer {}", self.width())));
        }
        let eps = T::lit(self.epsilon);
        let inv_std: Vec<T> = self.running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.clone();
        for i in 0..n {
            for ((v, &m), &s) in xhat.row_mut(i).iter_mut().zip(self.running_mean.data()).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        Ok(xhat)
    }

    pub fn normalize_backward(&mut self, dxhat: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .norm_cache
            .take()
            .ok_or_else(|| Error::State("batchnorm backward without cached forward".into()))?;
        normalize_backward(&cache.xhat, &cache.inv_std, cache.batch_stats, dxhat)
    }

    /// `γ ⊙ x + β`
    pub fn scale_shift(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.scale_shift_infer(x)?;
        self.affine_cache = Some(x.clone());
        Ok(y)
    }

    pub fn scale_shift_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, w) = x.dims2()?;
        if w != self.width() {
            return Err(Error::dim("batchnorm_scale", format!("width {w}, layer {}", self.width())));
        }
        let mut y = x.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for i in 0..n {
            for ((v, &g), &b) in y.row_mut(i).iter_mut().zip(g).zip(b) {
                *v = g * *v + b;
            }
        }
        Ok(y)
    }

    pub fn scale_shift_backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .affine_cache
            .take()
            .ok_or_else(|| Error::State("batchnorm scale backward without cached forward".into()))?;
        x.expect_same_shape(dy, "batchnorm_backward")?;
        let (n, _) = dy.dims2()?;
        let mut dx = dy.clone();
        for i in 0..n {
            let (xr, dyr) = (x.row(i), dy.row(i));
            for j in 0..xr.len() {
                self.gamma.grad.data_mut()[j] += dyr[j] * xr[j];
                self.beta.grad.data_mut()[j] += dyr[j];
            }
            for (v, &g) in dx.row_mut(i).iter_mut().zip(self.gamma.value.data()) {
                *v *= g;
            }
        }
        Ok(dx)
    }

    /// Full batch normalization: normalize then scale/shift.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (xhat, _) = self.normalize(x, mode, mode == Mode::Train)?;
        self.scale_shift(&xhat)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let dxhat = self.scale_shift_backward(dy)?;
        self.normalize_backward(&dxhat)
    }
}

/// Backward of `(x − μ_B)·s` where `μ_B`, `s` are batch statistics of `x`
/// (when `batch_stats`) or constants.
pub(crate) fn normalize_backward<T: Real>(
    xhat: &Tensor<T>,
    inv_std: &[T],
    batch_stats: bool,
    dxhat: &Tensor<T>,
) -> Result<Tensor<T>> {
    xhat.expect_same_shape(dxhat, "batchnorm_backward")?;
    let (n, w) = dxhat.dims2()?;
    let mut dx = dxhat.clone();
    if !batch_stats {
        for i in 0..n {
            for (v, &s) in dx.row_mut(i).iter_mut().zip(inv_std) {
                *v *= s;
            }
        }
        return Ok(dx);
    }
    let inv_n = T::lit(1.0 / n as f64);
    let mut mean_d = vec![T::zero(); w];
    let mut mean_dx = vec![T::zero(); w];
    for i in 0..n {
        for j in 0..w {
            let d = dxhat.row(i)[j];
            mean_d[j] += d;
            mean_dx[j] += d * xhat.row(i)[j];
        }
    }
    mean_d.iter_mut().for_each(|v| *v *= inv_n);
    mean_dx.iter_mut().for_each(|v| *v *= inv_n);
    for i in 0..n {
        let xr = xhat.row(i);
        for (j, v) in dx.row_mut(i).iter_mut().enumerate() {
            *v = inv_std[j] * (*v - mean_d[j] - xr[j] * mean_dx[j]);
        }
    }
    Ok(dx)
}

impl<T: Real> Parameterized<T> for BatchNormLayer<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Parameter-free standardization with batch statistics, used for the
/// decoder projections `u`.
#[derive(Debug, Clone, Default)]
pub struct BatchStandardize<T = f32> {
    epsilon: f64,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Real> BatchStandardize<T> {
    pub fn new() -> Self {
        Self {
            epsilon: BN_EPSILON,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let stats = BatchNormLayer::batch_stats(x)?;
        let eps = T::lit(self.epsilon);
        let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.clone();
        for i in 0..xhat.rows() {
            for ((v, &m), &s) in xhat.row_mut(i).iter_mut().zip(&stats.mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        self.cache = Some((xhat.clone(), inv_std));
        Ok(xhat)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (xhat, inv_std) = self
            .cache
            .take()
            .ok_or_else(|| Error::State("standardize backward without cached forward".into()))?;
        normalize_backward(&xhat, &inv_std, true, dy)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T = f32> {
    cache: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn infer(x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| v.max(T::zero()))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.cache = Some(x.clone());
        Self::infer(x)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::State("relu backward without cached forward".into()))?;
        x.zip_map(dy, |x, d| if x > T::zero() { d } else { T::zero() })
    }
}

#[derive(Debug, Clone)]
enum DropMask<T> {
    Identity,
    Scale(Tensor<T>),
}

/// Inverted dropout: survivors are scaled by `1/(1−p)` at train time so that
/// evaluation is the identity.
#[derive(Debug, Clone)]
pub struct DropoutLayer<T = f32> {
    p: f64,
    cache: Option<DropMask<T>>,
}

impl<T: Real> DropoutLayer<T> {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability must be in [0, 1), got {p}")));
        }
        Ok(Self { p, cache: None })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut RngStream) -> Tensor<T> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.cache = Some(DropMask::Identity);
            return x.clone();
        }
        let keep = T::lit(1.0 / (1.0 - self.p));
        let mask = Tensor::from_fn(x.shape(), |_| {
            if rng.uniform() < self.p {
                T::zero()
            } else {
                keep
            }
        });
        let y = x.mul(&mask).expect("mask shaped like input");
        self.cache = Some(DropMask::Scale(mask));
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match self.cache.take() {
            None => Err(Error::State("dropout backward without cached forward".into())),
            Some(DropMask::Identity) => Ok(dy.clone()),
            Some(DropMask::Scale(mask)) => dy.mul(&mask),
        }
    }
}

/// Additive `N(0, σ²)` corruption used by the noisy encoder.
#[derive(Debug, Clone, Copy)]
pub struct NoiseLayer {
    sigma: f64,
}

impl NoiseLayer {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Parameter(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Adds noise on the noisy path; the clean path passes `x` through.
    /// The map is `x ↦ x + ε`, so its backward is the identity.
    pub fn forward<T: Real>(&self, x: &Tensor<T>, noisy: bool, rng: &mut RngStream) -> Result<Tensor<T>> {
        if !noisy || self.sigma == 0.0 {
            return Ok(x.clone());
        }
        let eps = sample_gaussian(x.shape(), self.sigma, rng)?;
        x.add(&eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_params, check_tensor};
    use crate::numerics::mean_var;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        sample_gaussian(shape, 1.0, &mut RngStream::new(seed)).unwrap()
    }

    /// `L = Σ y ⊙ R` so that `dL/dy = R`.
    fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
        y.mul(r).unwrap().sum()
    }

    #[test]
    fn dense_identity_and_constant() {
        let mut layer = DenseLayer::<f64>::from_parts(Tensor::eye(3), Tensor::zeros(&[3])).unwrap();
        let x = rand_tensor(&[4, 3], 1);
        assert_eq!(layer.forward(&x).unwrap(), x);
        let dy = rand_tensor(&[4, 3], 2);
        assert_eq!(layer.backward(&dy).unwrap(), dy);

        let layer = DenseLayer::<f64>::from_parts(Tensor::zeros(&[2, 3]), Tensor::new(vec![2], vec![7.0, -1.0]).unwrap())
            .unwrap();
        let y = layer.infer(&x).unwrap();
        for i in 0..4 {
            assert_eq!(y.row(i), &[7.0, -1.0]);
        }
    }

    #[test]
    fn dense_hand_example() {
        let layer = DenseLayer::<f64>::from_parts(
            Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            Tensor::new(vec![1], vec![1.0]).unwrap(),
        )
        .unwrap();
        let y = layer.infer(&Tensor::from_rows(&[vec![2.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn dense_width_mismatch() {
        let layer = DenseLayer::<f32>::new(3, 2, &mut RngStream::new(0));
        assert!(matches!(layer.infer(&Tensor::zeros(&[1, 4])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut dense = DenseLayer::<f64>::new(2, 2, &mut RngStream::new(0));
        assert!(matches!(dense.backward(&Tensor::zeros(&[1, 2])), Err(Error::State(_))));
        let mut bn = BatchNormLayer::<f64>::new(2);
        assert!(matches!(bn.backward(&Tensor::zeros(&[2, 2])), Err(Error::State(_))));
        let mut relu = Relu::<f64>::new();
        assert!(matches!(relu.backward(&Tensor::zeros(&[2, 2])), Err(Error::State(_))));
        let mut drop = DropoutLayer::<f64>::new(0.5).unwrap();
        assert!(matches!(drop.backward(&Tensor::zeros(&[2, 2])), Err(Error::State(_))));
    }

    #[test]
    fn batchnorm_hand_example() {
        let mut bn = BatchNormLayer::<f64>::new(1);
        bn.epsilon = 1e-12;
        let y = bn.forward(&Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap(), Mode::Train).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9);
        assert!((y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn batchnorm_fixed_point_and_zero_gamma() {
        let x = Tensor::<f64>::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let mut bn = BatchNormLayer::new(2);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        let mut bn = BatchNormLayer::<f64>::new(2);
        bn.gamma.value.fill(0.0);
        bn.beta.value = Tensor::new(vec![2], vec![0.25, -3.0]).unwrap();
        let y = bn.forward(&rand_tensor(&[5, 2], 4), Mode::Train).unwrap();
        for i in 0..5 {
            assert_eq!(y.row(i), &[0.25, -3.0]);
        }
    }

    #[test]
    fn batchnorm_rejects_single_sample_in_train_mode() {
        let mut bn = BatchNormLayer::<f32>::new(3);
        assert!(matches!(bn.forward(&Tensor::zeros(&[1, 3]), Mode::Train), Err(Error::DegenerateBatch(_))));
        assert!(bn.forward(&Tensor::zeros(&[1, 3]), Mode::Eval).is_ok());
    }

    #[test]
    fn batchnorm_running_stats_track_batches() {
        let mut bn = BatchNormLayer::<f64>::new(1);
        let x = Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.02).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.99 + 0.01)).abs() < 1e-12);
        let before = bn.running_mean.clone();
        bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(bn.running_mean, before);
    }

    #[test]
    fn dropout_identity_cases() {
        let x = rand_tensor(&[3, 3], 8);
        let mut rng = RngStream::new(0);
        let mut p0 = DropoutLayer::new(0.0).unwrap();
        assert_eq!(p0.forward(&x, Mode::Train, &mut rng), x);
        let mut p5 = DropoutLayer::new(0.5).unwrap();
        assert_eq!(p5.forward(&x, Mode::Eval, &mut rng), x);
        assert!(DropoutLayer::<f32>::new(1.0).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        let x = Tensor::<f64>::full(&[1000, 1000], 1.0);
        let mut layer = DropoutLayer::new(0.5).unwrap();
        let y = layer.forward(&x, Mode::Train, &mut RngStream::new(11));
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn noise_cases() {
        let x = rand_tensor(&[4, 4], 3);
        let mut rng = RngStream::new(1);
        assert_eq!(NoiseLayer::new(0.0).unwrap().forward(&x, true, &mut rng).unwrap(), x);
        assert_eq!(NoiseLayer::new(5.0).unwrap().forward(&x, false, &mut rng).unwrap(), x);

        let big = Tensor::<f64>::zeros(&[1000, 1000]);
        let out = NoiseLayer::new(0.3f64.sqrt()).unwrap().forward(&big, true, &mut rng).unwrap();
        let (_, var, _) = mean_var(out.data().iter().copied());
        assert!((var - 0.3).abs() < 0.01, "var {var}");
    }

    #[test]
    fn relu_kills_negative_inputs() {
        let mut relu = Relu::<f64>::new();
        relu.forward(&Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap());
        let dx = relu.backward(&Tensor::new(vec![1, 2], vec![5.0, 5.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0.0, 5.0]);
    }

    #[test]
    fn dense_gradients() {
        let x = rand_tensor(&[8, 16], 1);
        let r = rand_tensor(&[8, 5], 2);
        let mut layer = DenseLayer::<f64>::new(16, 5, &mut RngStream::new(3));
        layer.forward(&x).unwrap();
        let dx = layer.backward(&r).unwrap();
        let rep = check_tensor("dense.x", &x, &dx, |x| project(&layer.infer(x).unwrap(), &r));
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        let rep = check_params(&mut layer, usize::MAX, |l| project(&l.infer(&x).unwrap(), &r));
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn batchnorm_gradients_train_and_eval() {
        let x = rand_tensor(&[8, 16], 5).map(|v| 2.0 * v + 0.5);
        let r = rand_tensor(&[8, 16], 6);
        for mode in [Mode::Train, Mode::Eval] {
            let mut bn = BatchNormLayer::<f64>::new(16);
            bn.gamma.value = rand_tensor(&[16], 7);
            bn.beta.value = rand_tensor(&[16], 8);
            bn.running_mean = rand_tensor(&[16], 9);
            bn.running_var = rand_tensor(&[16], 10).map(|v| v.abs() + 0.5);
            bn.forward(&x, mode).unwrap();
            let dx = bn.backward(&r).unwrap();
            let frozen = bn.clone();
            let rep = check_tensor("bn.x", &x, &dx, |x| {
                let mut b = frozen.clone();
                project(&b.forward(x, mode).unwrap(), &r)
            });
            assert!(rep.max_rel_error < 1e-4, "{mode:?} {rep:?}");
            let rep = check_params(&mut bn, usize::MAX, |b| project(&b.clone().forward(&x, mode).unwrap(), &r));
            assert!(rep.max_rel_error < 1e-4, "{mode:?} {rep:?}");
        }
    }

    #[test]
    fn relu_and_dropout_gradients() {
        let x = rand_tensor(&[8, 16], 12);
        let r = rand_tensor(&[8, 16], 13);
        let mut relu = Relu::<f64>::new();
        relu.forward(&x);
        let dx = relu.backward(&r).unwrap();
        let rep = check_tensor("relu.x", &x, &dx, |x| project(&Relu::infer(x), &r));
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");

        let mut drop = DropoutLayer::<f64>::new(0.3).unwrap();
        drop.forward(&x, Mode::Train, &mut RngStream::new(1));
        let dx = drop.backward(&r).unwrap();
        let rep = check_tensor("dropout.x", &x, &dx, |x| {
            let mut d = DropoutLayer::new(0.3).unwrap();
            project(&d.forward(x, Mode::Train, &mut RngStream::new(1)), &r)
        });
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");

        let noise = NoiseLayer::new(0.5).unwrap();
        let rep = check_tensor("noise.x", &x, &r, |x| {
            project(&noise.forward(x, true, &mut RngStream::new(2)).unwrap(), &r)
        });
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    proptest::proptest! {
        #[test]
        fn batchnorm_train_output_is_standardized(seed in 0u64..1000, n in 2usize..20) {
            let x = rand_tensor(&[n, 6], seed).map(|v| 3.0 * v - 1.0);
            let mut bn = BatchNormLayer::<f64>::new(6);
            let (xhat, _) = bn.normalize(&x, Mode::Train, true).unwrap();
            for j in 0..6 {
                let (m, v, _) = mean_var((0..n).map(|i| xhat.row(i)[j]));
                let (_, raw_var, _) = mean_var((0..n).map(|i| x.row(i)[j]));
                proptest::prop_assert!(m.abs() < 1e-6);
                // ε shrinks the variance by σ²/(σ²+ε).
                proptest::prop_assert!((v - raw_var / (raw_var + BN_EPSILON)).abs() < 1e-9);
                proptest::prop_assert!(raw_var < 0.1 || (v - 1.0).abs() < 1e-4);
            }
        }
    }
}
