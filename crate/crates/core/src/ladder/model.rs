//! The ladder network: a noisy and a clean encoder sharing weights, a
//! decoder with lateral combinators, and the assembled training costs.

use super::combinator::{Combinator, CombinatorKind};
use super::cost::{reconstruction_terms, supervised_cost, CostWeights, Task};
use crate::error::{Error, Result};
use crate::layers::{BatchNormLayer, BatchStandardize, BatchStats, DenseLayer, DropoutLayer, Mode, NoiseLayer, Relu};
use crate::numerics::{Real, RngStream, Tensor};
use crate::params::{join, Param, Parameterized};

/// Variance of the Gaussian corruption in the noisy encoder.
pub const NOISE_VARIANCE: f64 = 0.3;
pub const HIDDEN_WIDTH: usize = 256;
pub const LADDER_INPUT_DROPOUT: f64 = 0.1;
pub const BASELINE_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub combinator: CombinatorKind,
    /// Lowest reconstructed level; 0 reconstructs the input.
    pub first_level: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            combinator: CombinatorKind::default(),
            first_level: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub task: Task,
    /// Standard deviation of the noisy-path corruption.
    pub sigma: f64,
    /// Dropout rate on the input of each dense layer.
    pub dropout: Vec<f64>,
    /// `None` builds a supervised-only model.
    pub decoder: Option<DecoderConfig>,
}

impl LadderConfig {
    pub fn ladder(input_dim: usize, task: Task) -> Self {
        Self {
            input_dim,
            hidden: vec![HIDDEN_WIDTH; 2],
            task,
            sigma: NOISE_VARIANCE.sqrt(),
            dropout: vec![LADDER_INPUT_DROPOUT, 0.0],
            decoder: Some(DecoderConfig::default()),
        }
    }

    pub fn baseline(input_dim: usize, task: Task) -> Self {
        Self {
            input_dim,
            hidden: vec![HIDDEN_WIDTH; 2],
            task,
            sigma: 0.0,
            dropout: vec![BASELINE_DROPOUT; 2],
            decoder: None,
        }
    }

    /// Number of levels including the input level.
    pub fn levels(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn width(&self, level: usize) -> usize {
        if level == 0 {
            self.input_dim
        } else {
            self.hidden[level - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "input width {} and hidden widths {:?} must be positive and non-empty",
                self.input_dim, self.hidden
            )));
        }
        if self.dropout.len() != self.hidden.len() {
            return Err(Error::Config(format!(
                "{} dropout rates for {} dense layers",
                self.dropout.len(),
                self.hidden.len()
            )));
        }
        if let Some(d) = &self.decoder {
            if d.first_level > self.hidden.len() {
                return Err(Error::Config(format!("first reconstructed level {} out of range", d.first_level)));
            }
        }
        Ok(())
    }
}

/// Clean-encoder outputs: reconstruction targets and inference predictions.
#[derive(Debug, Clone)]
pub struct CleanPass<T = f32> {
    /// Normalized pre-activations per level; level 0 is the input.
    pub z: Vec<Tensor<T>>,
    /// Batch statistics per level in train mode (`None` at level 0 and in eval).
    pub stats: Vec<Option<BatchStats<T>>>,
    pub y: Tensor<T>,
}

/// Everything one ladder forward pass produces.
#[derive(Debug, Clone)]
pub struct LadderActivations<T = f32> {
    pub z: Vec<Tensor<T>>,
    pub z_tilde: Vec<Tensor<T>>,
    /// Reconstructions for levels `first_level..=L`, lowest first.
    pub z_hat: Vec<Tensor<T>>,
    /// Standardized decoder projections, aligned with `z_hat`.
    pub u: Vec<Tensor<T>>,
    pub first_level: usize,
    pub y_noisy: Tensor<T>,
    pub y_clean: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub total: f64,
    /// `None` on unlabeled batches.
    pub supervised: Option<f64>,
    pub reconstruction: f64,
    /// Weighted reconstruction term per reconstructed level, lowest first.
    pub per_level: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Decoder<T = f32> {
    first: usize,
    pub projections: Vec<DenseLayer<T>>,
    standardize: Vec<BatchStandardize<T>>,
    pub combinators: Vec<Combinator<T>>,
}

impl<T: Real> Decoder<T> {
    /// `widths[l]` is the width of level `l`; levels `first..` are decoded.
    pub fn new(widths: &[usize], first: usize, kind: CombinatorKind, rng: &mut RngStream) -> Result<Self> {
        let top = widths.len() - 1;
        let mut projections = Vec::new();
        let mut combinators = Vec::new();
        for l in first..=top {
            let inputs = if l == top { widths[top] } else { widths[l + 1] };
            projections.push(DenseLayer::new(inputs, widths[l], rng));
            combinators.push(Combinator::new(kind, widths[l], rng)?);
        }
        Ok(Self {
            first,
            standardize: vec![BatchStandardize::new(); projections.len()],
            projections,
            combinators,
        })
    }

    pub fn first_level(&self) -> usize {
        self.first
    }

    pub fn reconstructed_levels(&self) -> usize {
        self.projections.len()
    }

    /// Returns `(ẑ, u)` for levels `first..=L`, lowest first.
    pub fn forward(&mut self, z_tilde: &[Tensor<T>]) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        let top = self.first + self.projections.len() - 1;
        if z_tilde.len() != top + 1 {
            return Err(Error::dim("decode", format!("{} noisy levels, decoder top level {top}", z_tilde.len())));
        }
        let mut z_hat = Vec::with_capacity(self.projections.len());
        let mut us = Vec::with_capacity(self.projections.len());
        let mut signal = z_tilde[top].clone();
        for l in (self.first..=top).rev() {
            let i = l - self.first;
            let p = self.projections[i].forward(&signal)?;
            let u = self.standardize[i].forward(&p)?;
            signal = self.combinators[i].forward(&u, &z_tilde[l])?;
            z_hat.push(signal.clone());
            us.push(u);
        }
        z_hat.reverse();
        us.reverse();
        Ok((z_hat, us))
    }

    /// Takes `∂C/∂ẑ` per decoded level and returns `∂C/∂z̃` per decoded level.
    pub fn backward(&mut self, d_z_hat: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let levels = self.projections.len();
        if d_z_hat.len() != levels {
            return Err(Error::dim("decode_backward", format!("{} gradients for {levels} levels", d_z_hat.len())));
        }
        let mut lateral = Vec::with_capacity(levels);
        let mut carried: Option<Tensor<T>> = None;
        for i in 0..levels {
            let mut d = d_z_hat[i].clone();
            if let Some(c) = carried.take() {
                d.add_assign(&c)?;
            }
            let (du, mut dz) = self.combinators[i].backward(&d)?;
            let dp = self.standardize[i].backward(&du)?;
            let d_in = self.projections[i].backward(&dp)?;
            if i + 1 == levels {
                dz.add_assign(&d_in)?;
            } else {
                carried = Some(d_in);
            }
            lateral.push(dz);
        }
        Ok(lateral)
    }
}

impl<T: Real> Parameterized<T> for Decoder<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, (p, g)) in self.projections.iter().zip(&self.combinators).enumerate() {
            let level = join(prefix, &(self.first + i).to_string());
            p.visit_params(&join(&level, "proj"), f);
            g.visit_params(&join(&level, "g"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let first = self.first;
        for (i, (p, g)) in self.projections.iter_mut().zip(&mut self.combinators).enumerate() {
            let level = join(prefix, &(first + i).to_string());
            p.visit_params_mut(&join(&level, "proj"), f);
            g.visit_params_mut(&join(&level, "g"), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LadderModel<T = f32> {
    config: LadderConfig,
    pub dense: Vec<DenseLayer<T>>,
    pub bn: Vec<BatchNormLayer<T>>,
    relu: Vec<Relu<T>>,
    dropout: Vec<DropoutLayer<T>>,
    noise: NoiseLayer,
    /// One linear output per head, reading the top pre-activation.
    pub head: DenseLayer<T>,
    pub decoder: Option<Decoder<T>>,
}

impl<T: Real> LadderModel<T> {
    pub fn new(config: LadderConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let depth = config.hidden.len();
        let widths: Vec<usize> = (0..=depth).map(|l| config.width(l)).collect();
        let dense = (0..depth).map(|l| DenseLayer::new(widths[l], widths[l + 1], rng)).collect();
        let bn = (1..=depth).map(|l| BatchNormLayer::new(widths[l])).collect();
        let dropout = config.dropout.iter().map(|&p| DropoutLayer::new(p)).collect::<Result<_>>()?;
        let head = DenseLayer::new(widths[depth], config.task.heads(), rng);
        let decoder = match &config.decoder {
            Some(d) => Some(Decoder::new(&widths, d.first_level, d.combinator, rng)?),
            None => None,
        };
        Ok(Self {
            noise: NoiseLayer::new(config.sigma)?,
            relu: vec![Relu::new(); depth],
            config,
            dense,
            bn,
            dropout,
            head,
            decoder,
        })
    }

    pub fn config(&self) -> &LadderConfig {
        &self.config
    }

    pub fn depth(&self) -> usize {
        self.dense.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, w) = x.dims2()?;
        if w != self.config.input_dim {
            return Err(Error::dim(
                "encode",
                format!("input width {w}, model expects {}", self.config.input_dim),
            ));
        }
        Ok(())
    }

    /// Clean-encoder inference with running statistics.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let depth = self.depth();
        let mut h = x.clone();
        for l in 0..depth {
            let z = self.bn[l].normalize_eval(&self.dense[l].infer(&h)?)?;
            h = if l + 1 < depth { Relu::infer(&self.bn[l].scale_shift_infer(&z)?) } else { z };
        }
        self.head.infer(&h)
    }

    /// No noise, no dropout. Train mode normalizes with the batch's own
    /// statistics and updates the running averages.
    pub fn clean_encode(&mut self, x: &Tensor<T>, mode: Mode) -> Result<CleanPass<T>> {
        self.check_input(x)?;
        let depth = self.depth();
        let mut z = vec![x.clone()];
        let mut stats = vec![None];
        let mut h = x.clone();
        for l in 0..depth {
            let pre = self.dense[l].infer(&h)?;
            let (zl, st) = match mode {
                Mode::Train => {
                    let (zl, st) = self.bn[l].normalize_uncached(&pre, Mode::Train, true)?;
                    (zl, Some(st))
                }
                Mode::Eval => (self.bn[l].normalize_eval(&pre)?, None),
            };
            if l + 1 < depth {
                h = Relu::infer(&self.bn[l].scale_shift_infer(&zl)?);
            }
            z.push(zl);
            stats.push(st);
        }
        let y = self.head.infer(&z[depth])?;
        Ok(CleanPass { z, stats, y })
    }

    /// Train-mode pass with dropout and (when `noisy`) Gaussian corruption at
    /// every level. Caches everything for [`Self::encoder_backward`].
    fn noisy_encode(
        &mut self,
        x: &Tensor<T>,
        rng: &mut RngStream,
        noisy: bool,
        update_running: bool,
    ) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        self.check_input(x)?;
        let depth = self.depth();
        let dropped = self.dropout[0].forward(x, Mode::Train, rng);
        let mut z_tilde = vec![self.noise.forward(&dropped, noisy, rng)?];
        let mut h = z_tilde[0].clone();
        for l in 0..depth {
            if l > 0 {
                h = self.dropout[l].forward(&h, Mode::Train, rng);
            }
            let pre = self.dense[l].forward(&h)?;
            let (zn, _) = self.bn[l].normalize(&pre, Mode::Train, update_running)?;
            let zt = self.noise.forward(&zn, noisy, rng)?;
            if l + 1 < depth {
                let a = self.bn[l].scale_shift(&zt)?;
                h = self.relu[l].forward(&a);
            }
            z_tilde.push(zt);
        }
        let y = self.head.forward(&z_tilde[depth])?;
        Ok((z_tilde, y))
    }

    /// Backpropagates head and lateral gradients through the noisy encoder;
    /// returns the gradient with respect to the input.
    fn encoder_backward(&mut self, mut lateral: Vec<Option<Tensor<T>>>, d_y: &Tensor<T>) -> Result<Tensor<T>> {
        let depth = self.depth();
        let mut g = self.head.backward(d_y)?;
        add_into(&mut g, lateral[depth].take())?;
        for l in (0..depth).rev() {
            let d_pre = self.bn[l].normalize_backward(&g)?;
            let mut d_in = self.dense[l].backward(&d_pre)?;
            if l > 0 {
                d_in = self.dropout[l].backward(&d_in)?;
                let d_act = self.relu[l - 1].backward(&d_in)?;
                g = self.bn[l - 1].scale_shift_backward(&d_act)?;
            } else {
                g = d_in;
            }
            add_into(&mut g, lateral[l].take())?;
        }
        self.dropout[0].backward(&g)
    }

    /// Clean pass, noisy pass and decoder, without gradients.
    pub fn forward(&mut self, x: &Tensor<T>, rng: &mut RngStream) -> Result<LadderActivations<T>> {
        let clean = self.clean_encode(x, Mode::Train)?;
        let (z_tilde, y_noisy) = self.noisy_encode(x, rng, true, false)?;
        let decoder = self.decoder_mut()?;
        let first_level = decoder.first_level();
        let (z_hat, u) = decoder.forward(&z_tilde)?;
        Ok(LadderActivations {
            z: clean.z,
            z_tilde,
            z_hat,
            u,
            first_level,
            y_noisy,
            y_clean: clean.y,
        })
    }

    fn decoder_mut(&mut self) -> Result<&mut Decoder<T>> {
        self.decoder
            .as_mut()
            .ok_or_else(|| Error::State("model has no decoder".into()))
    }

    /// Ladder cost of one batch with fresh gradients in every parameter.
    ///
    /// Labeled batches (`labels` given) add the supervised cost to the
    /// reconstruction cost; unlabeled batches contribute reconstruction only.
    /// The clean targets are constants: no gradient flows through them.
    pub fn ladder_cost(
        &mut self,
        x: &Tensor<T>,
        labels: Option<&Tensor<T>>,
        weights: &CostWeights,
        rng: &mut RngStream,
    ) -> Result<CostReport> {
        self.zero_grad();
        let clean = self.clean_encode(x, Mode::Train)?;
        Ok(self.ladder_cost_with_targets(x, labels, &clean, weights, rng)?.0)
    }

    /// Noisy pass, decoder, costs against the given clean targets, and
    /// backward. Gradients accumulate; the input gradient is returned.
    pub fn ladder_cost_with_targets(
        &mut self,
        x: &Tensor<T>,
        labels: Option<&Tensor<T>>,
        clean: &CleanPass<T>,
        weights: &CostWeights,
        rng: &mut RngStream,
    ) -> Result<(CostReport, Tensor<T>)> {
        weights.validate()?;
        let levels = self.config.levels();
        if weights.lambda.len() != levels || clean.z.len() != levels {
            return Err(Error::dim(
                "ladder_cost",
                format!("{levels} levels, {} weights, {} targets", weights.lambda.len(), clean.z.len()),
            ));
        }
        let (z_tilde, y_noisy) = self.noisy_encode(x, rng, true, false)?;
        let decoder = self.decoder_mut()?;
        let first = decoder.first_level();
        let (z_hat, _) = decoder.forward(&z_tilde)?;

        let mut compared = Vec::with_capacity(z_hat.len());
        let mut inv_stds = Vec::with_capacity(z_hat.len());
        for (i, zh) in z_hat.iter().enumerate() {
            match &clean.stats[first + i] {
                Some(st) => {
                    let inv: Vec<T> = st.var.iter().map(|&v| T::one() / (v + T::lit(self.bn[0].epsilon)).sqrt()).collect();
                    let mut zn = zh.clone();
                    for r in 0..zn.rows() {
                        for ((v, &m), &s) in zn.row_mut(r).iter_mut().zip(&st.mean).zip(&inv) {
                            *v = (*v - m) * s;
                        }
                    }
                    compared.push(zn);
                    inv_stds.push(Some(inv));
                }
                None if first + i == 0 => {
                    compared.push(zh.clone());
                    inv_stds.push(None);
                }
                None => return Err(Error::State("reconstruction targets need train-mode clean statistics".into())),
            }
        }
        let (per_level, mut d_cmp) =
            reconstruction_terms(&compared, &clean.z[first..], &weights.lambda[first..], true)?;
        for (d, inv) in d_cmp.iter_mut().zip(&inv_stds) {
            if let Some(inv) = inv {
                for r in 0..d.rows() {
                    for (v, &s) in d.row_mut(r).iter_mut().zip(inv) {
                        *v *= s;
                    }
                }
            }
        }
        let reconstruction: f64 = per_level.iter().sum();
        let (supervised, d_y) = match labels {
            Some(lab) => {
                let (c, g) = supervised_cost(&y_noisy, lab, weights, self.config.task)?;
                (Some(c), g)
            }
            None => (None, Tensor::zeros(y_noisy.shape())),
        };

        let decoder = self.decoder_mut()?;
        let lateral_dec = decoder.backward(&d_cmp)?;
        let mut lateral: Vec<Option<Tensor<T>>> = vec![None; levels];
        for (i, d) in lateral_dec.into_iter().enumerate() {
            lateral[first + i] = Some(d);
        }
        let dx = self.encoder_backward(lateral, &d_y)?;
        let report = CostReport {
            total: supervised.unwrap_or(0.0) + reconstruction,
            supervised,
            reconstruction,
            per_level,
        };
        Ok((report, dx))
    }

    /// Supervised cost of the plain encoder (dropout, no noise, no decoder)
    /// with fresh gradients. Updates running statistics.
    pub fn baseline_cost(
        &mut self,
        x: &Tensor<T>,
        labels: &Tensor<T>,
        weights: &CostWeights,
        rng: &mut RngStream,
    ) -> Result<CostReport> {
        self.zero_grad();
        Ok(self.baseline_cost_accumulate(x, labels, weights, rng)?.0)
    }

    /// As [`Self::baseline_cost`] but accumulating gradients and returning
    /// the input gradient.
    pub fn baseline_cost_accumulate(
        &mut self,
        x: &Tensor<T>,
        labels: &Tensor<T>,
        weights: &CostWeights,
        rng: &mut RngStream,
    ) -> Result<(CostReport, Tensor<T>)> {
        let (z_tilde, y) = self.noisy_encode(x, rng, false, true)?;
        let (cost, d_y) = supervised_cost(&y, labels, weights, self.config.task)?;
        let dx = self.encoder_backward(vec![None; z_tilde.len()], &d_y)?;
        Ok((
            CostReport {
                total: cost,
                supervised: Some(cost),
                reconstruction: 0.0,
                per_level: Vec::new(),
            },
            dx,
        ))
    }

    /// Training cost for one batch: the ladder cost when the model has a
    /// decoder, otherwise the baseline cost.
    pub fn train_cost(
        &mut self,
        x: &Tensor<T>,
        labels: Option<&Tensor<T>>,
        weights: &CostWeights,
        rng: &mut RngStream,
    ) -> Result<CostReport> {
        match (&self.decoder, labels) {
            (Some(_), _) => self.ladder_cost(x, labels, weights, rng),
            (None, Some(l)) => self.baseline_cost(x, l, weights, rng),
            (None, None) => Err(Error::BatchContract("supervised-only model given an unlabeled batch".into())),
        }
    }
}

fn add_into<T: Real>(g: &mut Tensor<T>, extra: Option<Tensor<T>>) -> Result<()> {
    match extra {
        Some(e) => g.add_assign(&e),
        None => Ok(()),
    }
}

impl<T: Real> Parameterized<T> for LadderModel<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (l, (d, b)) in self.dense.iter().zip(&self.bn).enumerate() {
            let p = join(prefix, &format!("encoder.{l}"));
            d.visit_params(&join(&p, "dense"), f);
            b.visit_params(&join(&p, "bn"), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
        if let Some(dec) = &self.decoder {
            dec.visit_params(&join(prefix, "decoder"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (l, (d, b)) in self.dense.iter_mut().zip(&mut self.bn).enumerate() {
            let p = join(prefix, &format!("encoder.{l}"));
            d.visit_params_mut(&join(&p, "dense"), f);
            b.visit_params_mut(&join(&p, "bn"), f);
        }
        self.head.visit_params_mut(&join(prefix, "head"), f);
        if let Some(dec) = &mut self.decoder {
            dec.visit_params_mut(&join(prefix, "decoder"), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (l, b) in self.bn.iter().enumerate() {
            b.visit_buffers(&join(prefix, &format!("encoder.{l}.bn")), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (l, b) in self.bn.iter_mut().enumerate() {
            b.visit_buffers_mut(&join(prefix, &format!("encoder.{l}.bn")), f);
        }
    }
}
