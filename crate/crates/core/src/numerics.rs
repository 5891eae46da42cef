//! Dense tensors and the deterministic random stream.
//!
//! `Tensor<T>` is a row-major n-dimensional array. Training runs in `f32`;
//! gradient checks and statistical oracles instantiate the same code with `f64`.
//! Matrix products are delegated to `matrixmultiply`, which is single-threaded
//! and therefore reproducible run to run on one machine.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Floating-point element type of a [`Tensor`].
pub trait Real:
    Float
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C = alpha * A·B + beta * C` on strided views.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping `m×k`, `k×n`
    /// and `m×n` views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<&T> = self.data.iter().take(8).collect();
        write!(f, "Tensor{:?} {:?}", self.shape, preview)?;
        if self.data.len() > 8 {
            write!(f, "…")?;
        }
        Ok(())
    }
}

/// How the operands of [`Tensor::matmul_with`] are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transpose {
    /// `A·B`
    None,
    /// `A·Bᵀ`
    Right,
    /// `Aᵀ·B`
    Left,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) && !data.is_empty() {
            return Err(Error::dim("tensor", format!("shape {shape:?} holds no elements")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("from_rows", "ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::dim("dims2", format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.shape[1];
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_with(other, Transpose::None)
    }

    /// Matrix product with an optionally transposed operand.
    pub fn matmul_with(&self, other: &Tensor<T>, mode: Transpose) -> Result<Tensor<T>> {
        let (ar, ac) = self.dims2()?;
        let (br, bc) = other.dims2()?;
        // (m, k, n) plus row/col strides of each operand as read.
        let (m, k, n, rsa, csa, rsb, csb) = match mode {
            Transpose::None => (ar, ac, bc, ac, 1, bc, 1),
            Transpose::Right => (ar, ac, br, ac, 1, 1, bc),
            Transpose::Left => (ac, ar, bc, 1, ac, bc, 1),
        };
        let inner_b = match mode {
            Transpose::Right => bc,
            _ => br,
        };
        if k != inner_b {
            return Err(Error::dim(
                "matmul",
                format!("[{ar}x{ac}] · [{br}x{bc}] ({mode:?}) inner extents differ"),
            ));
        }
        let mut out = Tensor::zeros(&[m, n]);
        if m == 0 || n == 0 || k == 0 {
            return Ok(out);
        }
        // SAFETY: shapes were checked above; strides address in-bounds elements
        // of `self.data`, `other.data` and the freshly allocated `out.data`.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                self.data.as_ptr(),
                rsa as isize,
                csa as isize,
                other.data.as_ptr(),
                rsb as isize,
                csb as isize,
                T::zero(),
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        Ok(Tensor::from_fn(&[c, r], |i| self.data[(i % r) * c + i / r]))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Column sums of a 2-D tensor.
    pub fn sum_rows(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        Tensor::new(vec![c], out)
    }

    /// Adds `bias` to every row of a 2-D tensor in place.
    pub fn add_row_broadcast(&mut self, bias: &Tensor<T>) -> Result<()> {
        let (r, c) = self.dims2()?;
        if bias.len() != c {
            return Err(Error::dim("add_row_broadcast", format!("{c} columns, bias {}", bias.len())));
        }
        for i in 0..r {
            for (v, &b) in self.row_mut(i).iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(())
    }

    /// Gathers the given rows of a 2-D tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::dim("select_rows", format!("row {i} of {r}")));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![idx.len(), c], data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn expect_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }
}

/// Seedable random stream backed by ChaCha8.
///
/// ChaCha8 output is fixed by the algorithm definition and `rand_chacha`
/// guarantees value stability, so a seed reproduces the same draws on every
/// platform. Parallel consumers derive independent streams with [`RngStream::fork`].
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, a pure function of (seed, tag).
    pub fn fork(&self, tag: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// I.i.d. draws from `N(0, sigma²)`.
///
/// `sigma == 0` yields zeros without consuming the stream, so a noiseless
/// layer never shifts the draws seen by later layers.
pub fn sample_gaussian<T: Real>(shape: &[usize], sigma: f64, rng: &mut RngStream) -> Result<Tensor<T>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("gaussian sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(Tensor::zeros(shape));
    }
    Ok(Tensor::from_fn(shape, |_| T::lit(sigma * rng.standard_normal())))
}

/// Biased (1/n) mean and variance of a slice, accumulated in f64.
pub fn mean_var(values: impl IntoIterator<Item = f64>) -> (f64, f64, usize) {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for v in values {
        n += 1;
        let d = v - mean;
        mean += d / n as f64;
        m2 += d * (v - mean);
    }
    if n == 0 {
        (0.0, 0.0, 0)
    } else {
        (mean, m2 / n as f64, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_times_matrix() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::eye(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn zeros_annihilate() {
        let z = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::from_fn(&[3, 4], |i| i as f64 + 0.5);
        let p = z.matmul(&b).unwrap();
        assert_eq!(p.shape(), &[2, 4]);
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_product_by_hand() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn mismatched_inner_extent() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = RngStream::new(3);
        let a: Tensor<f64> = sample_gaussian(&[3, 5], 1.0, &mut rng).unwrap();
        let b: Tensor<f64> = sample_gaussian(&[4, 5], 1.0, &mut rng).unwrap();
        let direct = a.matmul(&b.transpose().unwrap()).unwrap();
        let fused = a.matmul_with(&b, Transpose::Right).unwrap();
        for (x, y) in direct.data().iter().zip(fused.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c: Tensor<f64> = sample_gaussian(&[3, 4], 1.0, &mut rng).unwrap();
        let direct = a.transpose().unwrap().matmul(&c).unwrap();
        let fused = a.matmul_with(&c, Transpose::Left).unwrap();
        for (x, y) in direct.data().iter().zip(fused.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_shape_invariant() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_sigma_is_all_zero() {
        let mut rng = RngStream::new(1);
        let before = rng.clone().next_u64();
        let t: Tensor<f32> = sample_gaussian(&[3, 4], 0.0, &mut rng).unwrap();
        assert_eq!(t.shape(), &[3, 4]);
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert_eq!(rng.next_u64(), before);
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut rng = RngStream::new(1);
        assert!(matches!(
            sample_gaussian::<f32>(&[2], -0.1, &mut rng),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a: Tensor<f64> = sample_gaussian(&[64], 0.5, &mut RngStream::new(99)).unwrap();
        let b: Tensor<f64> = sample_gaussian(&[64], 0.5, &mut RngStream::new(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_moments_at_ladder_noise_level() {
        let sigma = 0.3f64.sqrt();
        let t: Tensor<f64> = sample_gaussian(&[1_000_000], sigma, &mut RngStream::new(2024)).unwrap();
        let (mean, var, _) = mean_var(t.data().iter().copied());
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 0.3).abs() < 0.01, "var {var}");
    }

    #[test]
    fn forks_are_distinct_and_reproducible() {
        let root = RngStream::new(5);
        assert_eq!(root.fork(1).next_u64(), root.fork(1).next_u64());
        assert_ne!(root.fork(1).next_u64(), root.fork(2).next_u64());
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in any::<u64>()) {
            let mut rng = RngStream::new(seed);
            let a: Tensor<f64> = sample_gaussian(&[4, 4], 1.0, &mut rng).unwrap();
            let b: Tensor<f64> = sample_gaussian(&[4, 4], 1.0, &mut rng).unwrap();
            let c: Tensor<f64> = sample_gaussian(&[4, 4], 1.0, &mut rng).unwrap();
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn distinct_seeds_give_distinct_draws(s1 in any::<u64>(), s2 in any::<u64>()) {
            prop_assume!(s1 != s2);
            let a: Tensor<f64> = sample_gaussian(&[128], 1.0, &mut RngStream::new(s1)).unwrap();
            let b: Tensor<f64> = sample_gaussian(&[128], 1.0, &mut RngStream::new(s2)).unwrap();
            prop_assert!(a != b);
        }
    }
}
