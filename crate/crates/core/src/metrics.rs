//! Concordance correlation, its training gradient, and the two significance
//! tests used to compare systems.

use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// One-tailed significance level used throughout.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub ccc: f64,
    pub pearson: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignificanceResult {
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

impl SignificanceResult {
    fn from_upper_tail(statistic: f64, p_value: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            statistic,
            p_value,
            significant: p_value < ALPHA,
        }
    }
}

/// Biased first and second moments of a pair of series.
#[derive(Debug, Clone, Copy)]
struct Moments {
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
    n: usize,
}

fn moments(x: &[f64], y: &[f64]) -> Result<Moments> {
    if x.len() != y.len() {
        return Err(Error::dim("ccc", format!("{} predictions vs {} labels", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("need at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = y.iter().sum::<f64>() / nf;
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mean_x, b - mean_y);
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    Ok(Moments {
        mean_x,
        mean_y,
        var_x: var_x / nf,
        var_y: var_y / nf,
        cov: cov / nf,
        n,
    })
}

impl Moments {
    fn ccc_parts(&self) -> Result<(f64, f64)> {
        let gap = self.mean_x - self.mean_y;
        let den = self.var_x + self.var_y + gap * gap;
        if self.var_x == 0.0 && self.var_y == 0.0 {
            return Err(Error::UndefinedMetric("both series are constant".into()));
        }
        Ok((2.0 * self.cov, den))
    }
}

/// `2·s_xy / (s_x² + s_y² + (μ_x − μ_y)²)` with biased moments.
pub fn ccc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    let (num, den) = moments(pred, truth)?.ccc_parts()?;
    Ok(num / den)
}

/// Pearson correlation; zero when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let m = moments(x, y)?;
    let den = (m.var_x * m.var_y).sqrt();
    Ok(if den == 0.0 { 0.0 } else { m.cov / den })
}

pub fn metric_value(pred: &[f64], truth: &[f64]) -> Result<MetricValue> {
    Ok(MetricValue {
        ccc: ccc(pred, truth)?,
        pearson: pearson(pred, truth)?,
        n: pred.len(),
    })
}

/// `1 − CCC` and its gradient with respect to each prediction.
pub fn ccc_loss_and_grad(pred: &[f64], truth: &[f64]) -> Result<(f64, Vec<f64>)> {
    let m = moments(pred, truth)?;
    let (num, den) = m.ccc_parts()?;
    let nf = m.n as f64;
    let gap = m.mean_x - m.mean_y;
    // d num/dx_i = 2(y_i − μ_y)/n ; d den/dx_i = 2(x_i − μ_x)/n + 2(μ_x − μ_y)/n
    let grad = pred
        .iter()
        .zip(truth)
        .map(|(&x, &y)| {
            let dnum = 2.0 * (y - m.mean_y) / nf;
            let dden = 2.0 * (x - m.mean_x + gap) / nf;
            -(dnum * den - num * dden) / (den * den)
        })
        .collect();
    Ok((1.0 - num / den, grad))
}

/// Standard normal upper tail `1 − Φ(z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Upper tail of Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, x);
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// One-tailed test that system A's coefficient exceeds system B's, via the
/// Fisher z-transform.
pub fn fisher_z_test(ccc_a: f64, n_a: usize, ccc_b: f64, n_b: usize) -> Result<SignificanceResult> {
    if n_a <= 3 || n_b <= 3 {
        return Err(Error::DegenerateTest(format!("sample counts must exceed 3, got {n_a} and {n_b}")));
    }
    for c in [ccc_a, ccc_b] {
        if !(c.abs() < 1.0) {
            return Err(Error::DegenerateTest(format!("atanh is infinite for coefficient {c}")));
        }
    }
    let se = (1.0 / (n_a as f64 - 3.0) + 1.0 / (n_b as f64 - 3.0)).sqrt();
    let z = (ccc_a.atanh() - ccc_b.atanh()) / se;
    Ok(SignificanceResult::from_upper_tail(z, normal_sf(z)))
}

/// One-tailed matched-pair t-test that `a` exceeds `b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<SignificanceResult> {
    if a.len() != b.len() {
        return Err(Error::dim("paired_t_test", format!("{} vs {} folds", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::DegenerateTest(format!("need at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Err(Error::DegenerateTest("differences have zero variance".into()));
    }
    let t = mean / (var / nf).sqrt();
    Ok(SignificanceResult::from_upper_tail(t, student_t_sf(t, nf - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{rel_error, STEP};
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn series(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = RngStream::new(seed);
        (0..n).map(|_| rng.standard_normal()).collect()
    }

    #[test]
    fn perfect_and_anti_concordance() {
        let y = [1.0, -2.0, 0.5, 0.5];
        assert_eq!(ccc(&y, &y).unwrap(), 1.0);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((ccc(&neg, &y).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn worked_example() {
        let c = ccc(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((c - 5.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn constant_series_is_undefined() {
        assert!(matches!(ccc(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::UndefinedMetric(_))));
        assert_eq!(ccc(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn loss_is_zero_at_perfect_prediction() {
        let y = series(1, 10);
        let (loss, _) = ccc_loss_and_grad(&y, &y).unwrap();
        assert_eq!(loss, 0.0);
    }

    fn fd_grad(pred: &[f64], truth: &[f64]) -> Vec<f64> {
        (0..pred.len())
            .map(|i| {
                let mut p = pred.to_vec();
                p[i] += STEP;
                let up = 1.0 - ccc(&p, truth).unwrap();
                p[i] -= 2.0 * STEP;
                let down = 1.0 - ccc(&p, truth).unwrap();
                (up - down) / (2.0 * STEP)
            })
            .collect()
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let pred = series(seed, 32);
            let truth = series(seed + 100, 32);
            let (_, g) = ccc_loss_and_grad(&pred, &truth).unwrap();
            for (a, n) in g.iter().zip(fd_grad(&pred, &truth)) {
                assert!(rel_error(*a, n) < 1e-6, "{a} vs {n}");
            }
        }
    }

    #[test]
    fn loss_gradient_under_common_affine_map() {
        // CCC(a·x+b, a·y+b) = CCC(x, y), so dL/dx = a · dL/d(ax+b).
        let (a, b) = (2.5, -1.0);
        let pred = series(7, 32);
        let truth = series(8, 32);
        let mp: Vec<f64> = pred.iter().map(|v| a * v + b).collect();
        let mt: Vec<f64> = truth.iter().map(|v| a * v + b).collect();
        let (_, g) = ccc_loss_and_grad(&pred, &truth).unwrap();
        let (_, gm) = ccc_loss_and_grad(&mp, &mt).unwrap();
        let oracle = fd_grad(&mp, &mt);
        for ((g, gm), o) in g.iter().zip(&gm).zip(oracle) {
            assert!(rel_error(*gm, o) < 1e-6);
            assert!(rel_error(*g, a * gm) < 1e-9);
        }
    }

    #[test]
    fn fisher_equal_values() {
        let r = fisher_z_test(0.5, 100, 0.5, 100).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.5).abs() < 1e-15);
        assert!(!r.significant);
    }

    #[test]
    fn fisher_published_arousal_pair() {
        let r = fisher_z_test(0.770, 7341, 0.743, 7341).unwrap();
        // atanh(0.770) − atanh(0.743) over √(2/7338)
        assert!((r.statistic - 3.83).abs() < 0.01, "{}", r.statistic);
        assert!(r.significant);
        assert!(!fisher_z_test(0.303, 7341, 0.312, 7341).unwrap().significant);
    }

    #[test]
    fn fisher_rejects_unit_coefficients() {
        assert!(fisher_z_test(1.0, 10, 0.5, 10).is_err());
        assert!(fisher_z_test(0.5, 3, 0.5, 10).is_err());
    }

    #[test]
    fn normal_tail_reference_values() {
        // Φ(1.959963984540054) = 0.975
        let p = normal_sf(1.959963984540054);
        assert!((p - 0.025).abs() < 1e-12, "{p:e}");
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn student_t_reference_values() {
        // t_{0.95, 4} = 2.131846786326649
        assert!((student_t_sf(2.131846786326649, 4.0) - 0.05).abs() < 1e-10);
        // df = 1 is Cauchy: P(T > 1) = 1/4
        assert!((student_t_sf(1.0, 1.0) - 0.25).abs() < 1e-12);
        assert!((student_t_sf(-1.0, 1.0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn paired_t_cases() {
        assert!(matches!(paired_t_test(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::DegenerateTest(_))));
        let b = [0.40, 0.55, 0.31, 0.62, 0.47];
        let jitter = [1e-3, -2e-3, 0.5e-3, 1.5e-3, -1e-3];
        let a: Vec<f64> = b.iter().zip(jitter).map(|(v, j)| v + 0.1 + j).collect();
        let r = paired_t_test(&a, &b).unwrap();
        assert!(r.significant && r.p_value < 0.05);
        let s = paired_t_test(&b, &a).unwrap();
        assert_eq!(s.statistic, -r.statistic);
    }

    proptest! {
        #[test]
        fn ccc_bounded_and_attenuated(seed in any::<u64>(), n in 2usize..50) {
            let x = series(seed, n);
            let y = series(seed ^ 0xABCD, n);
            let c = ccc(&x, &y).unwrap();
            let r = pearson(&x, &y).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert!(c.abs() <= r.abs() + 1e-12);
        }

        #[test]
        fn ccc_common_affine_invariance(seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let x = series(seed, 20);
            let y = series(seed.wrapping_add(1), 20);
            let tx: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let ty: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            prop_assert!((ccc(&tx, &ty).unwrap() - ccc(&x, &y).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn ccc_penalizes_any_distortion(seed in any::<u64>(), a in 0.2f64..5.0, b in -2.0f64..2.0) {
            prop_assume!((a - 1.0).abs() > 1e-3 || b.abs() > 1e-3);
            let y = series(seed, 16);
            let t: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            prop_assert!(ccc(&t, &y).unwrap() < 1.0);
        }

        #[test]
        fn fisher_is_antisymmetric(a in -0.95f64..0.95, b in -0.95f64..0.95, n in 10usize..10000) {
            let ab = fisher_z_test(a, n, b, n + 7).unwrap();
            let ba = fisher_z_test(b, n + 7, a, n).unwrap();
            prop_assert!((ab.statistic + ba.statistic).abs() < 1e-12);
        }
    }
}
