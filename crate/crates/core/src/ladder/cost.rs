//! Supervised CCC costs and the per-layer reconstruction cost.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::ccc_loss_and_grad;
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    Arousal,
    Valence,
    Dominance,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Arousal, Attribute::Valence, Attribute::Dominance];

    /// Column in a `[batch × 3]` label tensor.
    pub fn index(self) -> usize {
        match self {
            Attribute::Arousal => 0,
            Attribute::Valence => 1,
            Attribute::Dominance => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Arousal => "arousal",
            Attribute::Valence => "valence",
            Attribute::Dominance => "dominance",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arousal" | "aro" => Ok(Attribute::Arousal),
            "valence" | "val" => Ok(Attribute::Valence),
            "dominance" | "dom" => Ok(Attribute::Dominance),
            _ => Err(Error::Config(format!("unknown attribute '{s}'"))),
        }
    }
}

/// Single-task models have one head for one attribute; multitask models have
/// three heads in arousal, valence, dominance order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Stl(Attribute),
    Mtl,
}

impl Task {
    pub fn heads(self) -> usize {
        match self {
            Task::Stl(_) => 1,
            Task::Mtl => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    /// Reconstruction weight per level, input level first.
    pub lambda: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl CostWeights {
    pub fn new(lambda: Vec<f64>, alpha: f64, beta: f64) -> Result<Self> {
        let w = Self { lambda, alpha, beta };
        w.validate()?;
        Ok(w)
    }

    /// The same `λ` at each of `levels` levels.
    pub fn uniform(lambda: f64, levels: usize, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(vec![lambda; levels], alpha, beta)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::Parameter(format!("reconstruction weight must be >= 0, got {l}")));
        }
        let (a, b) = (self.alpha, self.beta);
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a + b > 1.0 + 1e-12 {
            return Err(Error::Parameter(format!(
                "MTL weights must satisfy alpha, beta in [0, 1] and alpha + beta <= 1, got ({a}, {b})"
            )));
        }
        Ok(())
    }

    /// `[α, β, 1 − α − β]`
    pub fn attribute_weights(&self) -> [f64; 3] {
        [self.alpha, self.beta, (1.0 - self.alpha - self.beta).max(0.0)]
    }
}

/// `1 − CCC` of the single head (STL) or `α·C_aro + β·C_val + (1−α−β)·C_dom`
/// (MTL). Returns the cost and its gradient with respect to `pred`.
///
/// Terms with zero weight are skipped, so degenerate weightings reproduce the
/// single-attribute cost exactly.
pub fn supervised_cost<T: Real>(
    pred: &Tensor<T>,
    labels: &Tensor<T>,
    weights: &CostWeights,
    task: Task,
) -> Result<(f64, Tensor<T>)> {
    let (n, heads) = pred.dims2()?;
    let (ln, lw) = labels.dims2()?;
    if heads != task.heads() || ln != n || lw != 3 {
        return Err(Error::dim(
            "supervised_cost",
            format!("predictions {:?}, labels {:?}, task {task:?}", pred.shape(), labels.shape()),
        ));
    }
    let terms: Vec<(usize, usize, f64)> = match task {
        Task::Stl(a) => vec![(0, a.index(), 1.0)],
        Task::Mtl => weights
            .attribute_weights()
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, &w)| (i, i, w))
            .collect(),
    };
    let mut cost = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for (head, col, w) in terms {
        let p: Vec<f64> = (0..n).map(|i| pred.row(i)[head].as_f64()).collect();
        let y: Vec<f64> = (0..n).map(|i| labels.row(i)[col].as_f64()).collect();
        let (loss, g) = ccc_loss_and_grad(&p, &y)?;
        cost += w * loss;
        for (i, gi) in g.into_iter().enumerate() {
            grad.row_mut(i)[head] += T::lit(w * gi);
        }
    }
    Ok((cost, grad))
}

/// `Σ_l λ_l · MSE(ẑ⁽ˡ⁾, z⁽ˡ⁾)`, the mean taken over batch and units.
///
/// Callers normalize hidden-layer reconstructions beforehand; this function
/// compares whatever it is given.
pub fn reconstruction_cost<T: Real>(z_hat: &[Tensor<T>], z: &[Tensor<T>], lambda: &[f64]) -> Result<f64> {
    Ok(reconstruction_terms(z_hat, z, lambda, false)?.0.iter().sum())
}

/// Per-level weighted terms and, if requested, `∂cost/∂ẑ` per level.
pub(crate) fn reconstruction_terms<T: Real>(
    z_hat: &[Tensor<T>],
    z: &[Tensor<T>],
    lambda: &[f64],
    with_grad: bool,
) -> Result<(Vec<f64>, Vec<Tensor<T>>)> {
    if z_hat.len() != z.len() || z.len() != lambda.len() {
        return Err(Error::dim(
            "reconstruction_cost",
            format!("{} reconstructions, {} targets, {} weights", z_hat.len(), z.len(), lambda.len()),
        ));
    }
    let mut terms = Vec::with_capacity(z.len());
    let mut grads = Vec::new();
    for ((zh, zc), &lam) in z_hat.iter().zip(z).zip(lambda) {
        zh.expect_same_shape(zc, "reconstruction_cost")?;
        let count = zh.len().max(1) as f64;
        let sq: f64 = zh.data().iter().zip(zc.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
        terms.push(lam * sq / count);
        if with_grad {
            let k = T::lit(2.0 * lam / count);
            grads.push(zh.zip_map(zc, |a, b| k * (a - b))?);
        }
    }
    Ok((terms, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ccc;
    use crate::numerics::{sample_gaussian, RngStream};

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn reconstruction_examples() {
        let z = t(&[vec![0.5, 2.0]]);
        let zh = t(&[vec![1.5, 1.0]]);
        assert_eq!(reconstruction_cost(&[zh.clone()], &[z.clone()], &[1.0]).unwrap(), 1.0);
        assert_eq!(reconstruction_cost(&[z.clone()], &[z.clone()], &[1.0]).unwrap(), 0.0);
        assert_eq!(reconstruction_cost(&[zh.clone()], &[z.clone()], &[0.0]).unwrap(), 0.0);
        assert!(reconstruction_cost(&[zh], &[z.clone(), z], &[1.0, 1.0]).is_err());
    }

    fn random_batch(n: usize, heads: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = RngStream::new(seed);
        (
            sample_gaussian(&[n, heads], 1.0, &mut rng).unwrap(),
            sample_gaussian(&[n, 3], 1.0, &mut rng).unwrap(),
        )
    }

    fn column(x: &Tensor<f64>, c: usize) -> Vec<f64> {
        (0..x.rows()).map(|i| x.row(i)[c]).collect()
    }

    #[test]
    fn mtl_corners_equal_single_attribute_costs() {
        let (pred, labels) = random_batch(20, 3, 3);
        let c: Vec<f64> = (0..3).map(|a| 1.0 - ccc(&column(&pred, a), &column(&labels, a)).unwrap()).collect();
        for ((a, b), expected) in [((1.0, 0.0), c[0]), ((0.0, 1.0), c[1]), ((0.0, 0.0), c[2])] {
            let w = CostWeights::uniform(1.0, 1, a, b).unwrap();
            assert_eq!(supervised_cost(&pred, &labels, &w, Task::Mtl).unwrap().0, expected);
        }
        let w = CostWeights::uniform(1.0, 1, 0.2, 0.5).unwrap();
        let mixed = supervised_cost(&pred, &labels, &w, Task::Mtl).unwrap().0;
        assert!((mixed - (0.2 * c[0] + 0.5 * c[1] + 0.3 * c[2])).abs() < 1e-12);
    }

    #[test]
    fn stl_uses_target_column() {
        let (pred, labels) = random_batch(16, 1, 5);
        let w = CostWeights::uniform(1.0, 1, 0.0, 0.0).unwrap();
        let (cost, _) = supervised_cost(&pred, &labels, &w, Task::Stl(Attribute::Valence)).unwrap();
        assert_eq!(cost, 1.0 - ccc(&column(&pred, 0), &column(&labels, 1)).unwrap());
    }

    #[test]
    fn perfect_predictions_cost_nothing() {
        let (_, labels) = random_batch(12, 3, 9);
        let w = CostWeights::uniform(1.0, 1, 0.3, 0.3).unwrap();
        let (cost, _) = supervised_cost(&labels, &labels, &w, Task::Mtl).unwrap();
        assert!(cost.abs() < 1e-12);
    }

    #[test]
    fn weight_validation() {
        assert!(CostWeights::uniform(1.0, 2, 0.6, 0.5).is_err());
        assert!(CostWeights::uniform(-1.0, 2, 0.0, 0.0).is_err());
        assert!(CostWeights::uniform(1.0, 2, 0.7, 0.3).is_ok());
    }
}
