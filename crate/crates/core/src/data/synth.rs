//! Synthetic sentence-level corpus with a low-dimensional latent cause.
//!
//! `h ~ N(0, I_k)`, features `x = A·tanh(B·h) + ε`, and three targets that are
//! smooth functions of `h`. The third target is built from the first so the
//! pair is strongly correlated.

use super::{DataSet, FeatureKind, Split};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Centre of the synthetic rating scale.
pub const LABEL_CENTER: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub d: usize,
    pub latent_k: usize,
    /// Standard deviation of the additive feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_labeled: 200,
            n_unlabeled: 20_000,
            n_dev: 200,
            n_test: 1000,
            d: 512,
            latent_k: 8,
            noise: 2.0,
            seed: 7,
        }
    }
}

/// The target functions of one generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTargets {
    /// Unit directions in latent space.
    pub directions: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SynthTargets {
    /// Nonlinear features of `h` in which every target is exactly linear.
    pub fn basis(&self, h: &[f64]) -> Vec<f64> {
        let p: Vec<f64> = self.directions.iter().map(|v| dot(v, h)).collect();
        vec![p[0].tanh(), p[1].sin(), p[2].sin(), p[3].tanh(), p[4].tanh()]
    }

    /// Arousal, valence, dominance.
    pub fn targets(&self, h: &[f64]) -> [f64; 3] {
        let b = self.basis(h);
        let t1 = b[0] + 0.5 * b[1];
        let t2 = 0.8 * b[2] + 0.4 * b[3];
        let t3 = 0.6 * t1 + 0.5 * b[4];
        [t1, t2, t3].map(|t| LABEL_CENTER + t)
    }
}

pub struct SynthData {
    pub dataset: DataSet,
    /// Latent cause of each sample, aligned with the dataset.
    pub latents: Vec<Vec<f64>>,
    pub targets: SynthTargets,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Deterministic in `config`. Samples are ordered train, dev, test,
/// unlabeled with ids `s000000`, `s000001`, ...
pub fn synth_generate(config: &SynthConfig) -> Result<SynthData> {
    let SynthConfig { d, latent_k: k, noise, .. } = *config;
    if k == 0 || d < k {
        return Err(Error::Parameter(format!("need d >= latent_k >= 1, got d={d}, latent_k={k}")));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::Parameter(format!("noise must be >= 0, got {noise}")));
    }
    let root = RngStream::new(config.seed);
    let mut structure = root.fork(1);
    let mut samples = root.fork(2);

    let m = 2 * k;
    let b_scale = 1.5 / (k as f64).sqrt();
    let b: Vec<Vec<f64>> = (0..m).map(|_| (0..k).map(|_| b_scale * structure.standard_normal()).collect()).collect();
    let a_scale = 1.0 / (m as f64).sqrt();
    let a: Vec<Vec<f64>> = (0..d).map(|_| (0..m).map(|_| a_scale * structure.standard_normal()).collect()).collect();

    // Gram-Schmidt while the latent space has room, plain unit vectors after.
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for _ in 0..5 {
        let mut v: Vec<f64> = (0..k).map(|_| structure.standard_normal()).collect();
        if directions.len() < k {
            for u in &directions {
                let c = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
        }
        directions.push(unit(v));
    }
    let targets = SynthTargets { directions };

    let groups = [
        (Split::Train, config.n_labeled),
        (Split::Dev, config.n_dev),
        (Split::Test, config.n_test),
        (Split::Unlabeled, config.n_unlabeled),
    ];
    let total: usize = groups.iter().map(|g| g.1).sum();
    let mut dataset = DataSet::empty(FeatureKind::Sentence, d);
    let mut latents = Vec::with_capacity(total);
    let mut hidden = vec![0.0; m];
    for (split, count) in groups {
        for _ in 0..count {
            let h: Vec<f64> = (0..k).map(|_| samples.standard_normal()).collect();
            for (hv, row) in hidden.iter_mut().zip(&b) {
                *hv = dot(row, &h).tanh();
            }
            let x: Vec<f64> = a.iter().map(|row| dot(row, &hidden) + noise * samples.standard_normal()).collect();
            let label = (split != Split::Unlabeled).then(|| targets.targets(&h));
            dataset.push(format!("s{:06}", latents.len()), x, 1, label, split)?;
            latents.push(h);
        }
    }
    Ok(SynthData {
        dataset,
        latents,
        targets,
    })
}
