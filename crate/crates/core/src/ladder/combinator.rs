//! Denoising functions `g(u, z̃)` that merge the top-down decoder signal with
//! the lateral noisy encoder activation.

use crate::error::{Error, Result};
use crate::numerics::{Real, RngStream, Tensor};
use crate::params::{join, Param, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombinatorKind {
    /// Per-unit MLP over `[u, z̃, u·z̃]` with one ReLU hidden layer.
    Mlp { hidden: usize },
    /// Ten-parameter sigmoid-gated combinator of the original ladder network.
    Vanilla,
}

impl Default for CombinatorKind {
    fn default() -> Self {
        CombinatorKind::Mlp { hidden: 4 }
    }
}

#[derive(Debug, Clone)]
pub enum Combinator<T = f32> {
    Mlp(MlpCombinator<T>),
    Vanilla(VanillaCombinator<T>),
}

impl<T: Real> Combinator<T> {
    pub fn new(kind: CombinatorKind, width: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(match kind {
            CombinatorKind::Mlp { hidden } => Combinator::Mlp(MlpCombinator::new(width, hidden, rng)?),
            CombinatorKind::Vanilla => Combinator::Vanilla(VanillaCombinator::new(width)),
        })
    }

    pub fn width(&self) -> usize {
        match self {
            Combinator::Mlp(c) => c.b_out.value.len(),
            Combinator::Vanilla(c) => c.a.value.shape()[0],
        }
    }

    pub fn forward(&mut self, u: &Tensor<T>, z_tilde: &Tensor<T>) -> Result<Tensor<T>> {
        check_inputs(u, z_tilde, self.width())?;
        match self {
            Combinator::Mlp(c) => c.forward(u, z_tilde),
            Combinator::Vanilla(c) => c.forward(u, z_tilde),
        }
    }

    /// Returns `(d u, d z̃)`.
    pub fn backward(&mut self, d_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        match self {
            Combinator::Mlp(c) => c.backward(d_out),
            Combinator::Vanilla(c) => c.backward(d_out),
        }
    }
}

fn check_inputs<T: Real>(u: &Tensor<T>, z: &Tensor<T>, width: usize) -> Result<()> {
    u.expect_same_shape(z, "combinator_apply")?;
    let (_, w) = u.dims2()?;
    if w != width {
        return Err(Error::dim("combinator_apply", format!("width {w}, combinator {width}")));
    }
    Ok(())
}

impl<T: Real> Parameterized<T> for Combinator<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        match self {
            Combinator::Mlp(c) => {
                f(&join(prefix, "w_in"), &c.w_in);
                f(&join(prefix, "b_in"), &c.b_in);
                f(&join(prefix, "w_out"), &c.w_out);
                f(&join(prefix, "b_out"), &c.b_out);
            }
            Combinator::Vanilla(c) => f(&join(prefix, "a"), &c.a),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match self {
            Combinator::Mlp(c) => {
                f(&join(prefix, "w_in"), &mut c.w_in);
                f(&join(prefix, "b_in"), &mut c.b_in);
                f(&join(prefix, "w_out"), &mut c.w_out);
                f(&join(prefix, "b_out"), &mut c.b_out);
            }
            Combinator::Vanilla(c) => f(&join(prefix, "a"), &mut c.a),
        }
    }
}

/// `ẑ_j = Σ_k v_jk · relu(W_jk · [u_j, z̃_j, u_j z̃_j] + b_jk) + c_j`,
/// independently per unit `j`.
///
/// Initialized so that `ẑ = z̃`: hidden units 0 and 1 read `+z̃` and `−z̃` and
/// are combined as `relu(z̃) − relu(−z̃)`. The remaining hidden units get small
/// random input weights and zero output weights.
#[derive(Debug, Clone)]
pub struct MlpCombinator<T = f32> {
    /// `[width, hidden, 3]`
    pub w_in: Param<T>,
    /// `[width, hidden]`
    pub b_in: Param<T>,
    /// `[width, hidden]`
    pub w_out: Param<T>,
    /// `[width]`
    pub b_out: Param<T>,
    cache: Option<MlpCache<T>>,
}

#[derive(Debug, Clone)]
struct MlpCache<T> {
    u: Tensor<T>,
    z: Tensor<T>,
    /// Hidden pre-activations, `[batch, width, hidden]` flattened.
    pre: Vec<T>,
}

impl<T: Real> MlpCombinator<T> {
    pub fn new(width: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        if hidden < 2 {
            return Err(Error::Parameter(format!(
                "combinator hidden width must be >= 2 for identity initialization, got {hidden}"
            )));
        }
        let mut w_in = Tensor::zeros(&[width, hidden, 3]);
        let mut w_out = Tensor::zeros(&[width, hidden]);
        for j in 0..width {
            for k in 0..hidden {
                let base = (j * hidden + k) * 3;
                match k {
                    0 => w_in.data_mut()[base + 1] = T::one(),
                    1 => w_in.data_mut()[base + 1] = -T::one(),
                    _ => {
                        for i in 0..3 {
                            w_in.data_mut()[base + i] = T::lit(0.1 * rng.standard_normal());
                        }
                    }
                }
            }
            w_out.data_mut()[j * hidden] = T::one();
            w_out.data_mut()[j * hidden + 1] = -T::one();
        }
        Ok(Self {
            w_in: Param::new(w_in),
            b_in: Param::new(Tensor::zeros(&[width, hidden])),
            w_out: Param::new(w_out),
            b_out: Param::new(Tensor::zeros(&[width])),
            cache: None,
        })
    }

    fn hidden(&self) -> usize {
        self.w_out.value.shape()[1]
    }

    fn forward(&mut self, u: &Tensor<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, w) = u.dims2()?;
        let h = self.hidden();
        let (wi, bi, wo, bo) = (
            self.w_in.value.data(),
            self.b_in.value.data(),
            self.w_out.value.data(),
            self.b_out.value.data(),
        );
        let mut pre = vec![T::zero(); n * w * h];
        let mut out = Tensor::zeros(&[n, w]);
        for i in 0..n {
            let (ur, zr) = (u.row(i), z.row(i));
            let or = out.row_mut(i);
            for j in 0..w {
                let a = [ur[j], zr[j], ur[j] * zr[j]];
                let mut acc = bo[j];
                for k in 0..h {
                    let base = (j * h + k) * 3;
                    let p = wi[base] * a[0] + wi[base + 1] * a[1] + wi[base + 2] * a[2] + bi[j * h + k];
                    pre[(i * w + j) * h + k] = p;
                    acc += wo[j * h + k] * p.max(T::zero());
                }
                or[j] = acc;
            }
        }
        self.cache = Some(MlpCache {
            u: u.clone(),
            z: z.clone(),
            pre,
        });
        Ok(out)
    }

    fn backward(&mut self, d_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let MlpCache { u, z, pre } = self
            .cache
            .take()
            .ok_or_else(|| Error::State("combinator backward without cached forward".into()))?;
        u.expect_same_shape(d_out, "combinator_backward")?;
        let (n, w) = u.dims2()?;
        let h = self.hidden();
        let mut du = Tensor::zeros(&[n, w]);
        let mut dz = Tensor::zeros(&[n, w]);
        let wi = self.w_in.value.data();
        let wo = self.w_out.value.data();
        let dwi = self.w_in.grad.data_mut();
        let dbi = self.b_in.grad.data_mut();
        let dwo = self.w_out.grad.data_mut();
        let dbo = self.b_out.grad.data_mut();
        for i in 0..n {
            let (ur, zr, dr) = (u.row(i), z.row(i), d_out.row(i));
            for j in 0..w {
                let a = [ur[j], zr[j], ur[j] * zr[j]];
                let d = dr[j];
                dbo[j] += d;
                let mut da = [T::zero(); 3];
                for k in 0..h {
                    let p = pre[(i * w + j) * h + k];
                    dwo[j * h + k] += d * p.max(T::zero());
                    if p > T::zero() {
                        let dp = d * wo[j * h + k];
                        let base = (j * h + k) * 3;
                        dbi[j * h + k] += dp;
                        for c in 0..3 {
                            dwi[base + c] += dp * a[c];
                            da[c] += dp * wi[base + c];
                        }
                    }
                }
                du.row_mut(i)[j] = da[0] + da[2] * zr[j];
                dz.row_mut(i)[j] = da[1] + da[2] * ur[j];
            }
        }
        Ok((du, dz))
    }
}

/// Per unit, with `σ` the logistic function:
///
/// ```text
/// μ(u) = a₁σ(a₂u + a₃) + a₄u + a₅
/// v(u) = a₆σ(a₇u + a₈) + a₉u + a₁₀
/// ẑ    = (z̃ − μ(u))·v(u) + μ(u)
/// ```
#[derive(Debug, Clone)]
pub struct VanillaCombinator<T = f32> {
    /// `[width, 10]`
    pub a: Param<T>,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> VanillaCombinator<T> {
    /// `a₂ = a₇ = 1`, `a₁₀ = 1`, everything else zero, giving `ẑ = z̃`.
    pub fn new(width: usize) -> Self {
        let mut a = Tensor::zeros(&[width, 10]);
        for j in 0..width {
            let row = &mut a.data_mut()[j * 10..(j + 1) * 10];
            row[1] = T::one();
            row[6] = T::one();
            row[9] = T::one();
        }
        Self {
            a: Param::new(a),
            cache: None,
        }
    }

    fn forward(&mut self, u: &Tensor<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, w) = u.dims2()?;
        let a = self.a.value.data();
        let mut out = Tensor::zeros(&[n, w]);
        for i in 0..n {
            for j in 0..w {
                let p = &a[j * 10..(j + 1) * 10];
                let (uu, zz) = (u.row(i)[j], z.row(i)[j]);
                let mu = p[0] * sigmoid(p[1] * uu + p[2]) + p[3] * uu + p[4];
                let v = p[5] * sigmoid(p[6] * uu + p[7]) + p[8] * uu + p[9];
                out.row_mut(i)[j] = (zz - mu) * v + mu;
            }
        }
        self.cache = Some((u.clone(), z.clone()));
        Ok(out)
    }

    fn backward(&mut self, d_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (u, z) = self
            .cache
            .take()
            .ok_or_else(|| Error::State("combinator backward without cached forward".into()))?;
        u.expect_same_shape(d_out, "combinator_backward")?;
        let (n, w) = u.dims2()?;
        let mut du = Tensor::zeros(&[n, w]);
        let mut dz = Tensor::zeros(&[n, w]);
        let a = self.a.value.data().to_vec();
        let ga = self.a.grad.data_mut();
        for i in 0..n {
            for j in 0..w {
                let p = &a[j * 10..(j + 1) * 10];
                let g = &mut ga[j * 10..(j + 1) * 10];
                let (uu, zz, d) = (u.row(i)[j], z.row(i)[j], d_out.row(i)[j]);
                let s1 = sigmoid(p[1] * uu + p[2]);
                let s2 = sigmoid(p[6] * uu + p[7]);
                let mu = p[0] * s1 + p[3] * uu + p[4];
                let v = p[5] * s2 + p[8] * uu + p[9];
                // ẑ = (z − μ)v + μ  ⇒  ∂ẑ/∂z = v, ∂ẑ/∂μ = 1 − v, ∂ẑ/∂v = z − μ
                let dmu = d * (T::one() - v);
                let dv = d * (zz - mu);
                let ds1 = s1 * (T::one() - s1);
                let ds2 = s2 * (T::one() - s2);
                g[0] += dmu * s1;
                g[1] += dmu * p[0] * ds1 * uu;
                g[2] += dmu * p[0] * ds1;
                g[3] += dmu * uu;
                g[4] += dmu;
                g[5] += dv * s2;
                g[6] += dv * p[5] * ds2 * uu;
                g[7] += dv * p[5] * ds2;
                g[8] += dv * uu;
                g[9] += dv;
                let dmu_du = p[0] * ds1 * p[1] + p[3];
                let dv_du = p[5] * ds2 * p[6] + p[8];
                du.row_mut(i)[j] = dmu * dmu_du + dv * dv_du;
                dz.row_mut(i)[j] = d * v;
            }
        }
        Ok((du, dz))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_params, check_tensor};
    use crate::numerics::sample_gaussian;

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        sample_gaussian(shape, 1.0, &mut RngStream::new(seed)).unwrap()
    }

    #[test]
    fn identity_initialization_passes_z_tilde() {
        for kind in [CombinatorKind::default(), CombinatorKind::Vanilla] {
            let mut g = Combinator::<f64>::new(kind, 5, &mut RngStream::new(1)).unwrap();
            let z = rand(&[7, 5], 2);
            assert_eq!(g.forward(&rand(&[7, 5], 3), &z).unwrap(), z, "{kind:?}");
            assert_eq!(g.forward(&Tensor::zeros(&[7, 5]), &z).unwrap(), z, "{kind:?}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut g = Combinator::<f32>::new(CombinatorKind::default(), 3, &mut RngStream::new(1)).unwrap();
        assert!(g.forward(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 4])).is_err());
        assert!(g.forward(&Tensor::zeros(&[2, 4]), &Tensor::zeros(&[2, 4])).is_err());
    }

    fn perturbed(kind: CombinatorKind, seed: u64) -> Combinator<f64> {
        let mut g = Combinator::<f64>::new(kind, 6, &mut RngStream::new(seed)).unwrap();
        let mut rng = RngStream::new(seed + 1);
        g.visit_params_mut("", &mut |_, p| {
            for v in p.value.data_mut() {
                *v += 0.3 * rng.standard_normal();
            }
        });
        g
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [CombinatorKind::default(), CombinatorKind::Mlp { hidden: 3 }, CombinatorKind::Vanilla] {
            let u = rand(&[8, 6], 10);
            let z = rand(&[8, 6], 11);
            let r = rand(&[8, 6], 12);
            let mut g = perturbed(kind, 4);
            g.forward(&u, &z).unwrap();
            let (du, dz) = g.backward(&r).unwrap();
            let frozen = g.clone();
            let loss = |g: &mut Combinator<f64>, u: &Tensor<f64>, z: &Tensor<f64>| g.forward(u, z).unwrap().mul(&r).unwrap().sum();
            let rep = check_tensor("u", &u, &du, |u| loss(&mut frozen.clone(), u, &z));
            assert!(rep.max_rel_error < 1e-4, "{kind:?} {rep:?}");
            let rep = check_tensor("z", &z, &dz, |z| loss(&mut frozen.clone(), &u, z));
            assert!(rep.max_rel_error < 1e-4, "{kind:?} {rep:?}");
            let rep = check_params(&mut g, usize::MAX, |g| loss(&mut g.clone(), &u, &z));
            assert!(rep.max_rel_error < 1e-4, "{kind:?} {rep:?}");
        }
    }
}
