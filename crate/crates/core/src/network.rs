//! The trainable model behind a run: a dense ladder or a CNN τ-ladder, each
//! with or without its decoder.

use crate::cnn::CnnLadder;
use crate::config::RunConfig;
use crate::data::{DataSet, FeatureKind};
use crate::error::{Error, Result};
use crate::ladder::{CostReport, CostWeights, LadderModel, Task};
use crate::numerics::{RngStream, Tensor};
use crate::params::{Param, Parameterized};

/// Samples per inference chunk.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone)]
pub enum Network {
    Dense(LadderModel<f32>),
    Cnn(CnnLadder<f32>),
}

impl Network {
    /// `input_dim` is the feature width after normalization (channels for
    /// frame-level input).
    pub fn build(config: &RunConfig, input_dim: usize, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        Ok(if config.model.is_cnn() {
            Network::Cnn(CnnLadder::new(config.cnn_config(input_dim), rng)?)
        } else {
            Network::Dense(LadderModel::new(config.ladder_config(input_dim), rng)?)
        })
    }

    pub fn feature_kind(&self) -> FeatureKind {
        match self {
            Network::Dense(_) => FeatureKind::Sentence,
            Network::Cnn(_) => FeatureKind::Frame,
        }
    }

    /// Encoder levels including the input level; the length of `λ`.
    pub fn levels(&self) -> usize {
        match self {
            Network::Dense(m) => m.config().levels(),
            Network::Cnn(m) => m.config().fc.len() + 1,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Network::Dense(m) => m.config().task,
            Network::Cnn(m) => m.config().task,
        }
    }

    pub fn frames(&self) -> usize {
        match self {
            Network::Dense(_) => 1,
            Network::Cnn(m) => m.config().frames,
        }
    }

    pub fn train_cost(
        &mut self,
        x: &Tensor<f32>,
        labels: Option<&Tensor<f32>>,
        weights: &CostWeights,
        rng: &mut RngStream,
    ) -> Result<CostReport> {
        match self {
            Network::Dense(m) => m.train_cost(x, labels, weights, rng),
            Network::Cnn(m) => m.train_cost(x, labels, weights, rng),
        }
    }

    /// Clean encoder with running batch-norm statistics.
    pub fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            Network::Dense(m) => m.predict(x),
            Network::Cnn(m) => m.predict(x),
        }
    }

    /// Predictions for `idx`, one column per head, in the model's label space.
    pub fn predict_samples(&self, data: &DataSet, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
        if data.kind != self.feature_kind() {
            return Err(Error::Data(format!(
                "model expects {:?} features, dataset holds {:?}",
                self.feature_kind(),
                data.kind
            )));
        }
        let heads = self.task().heads();
        let mut cols = vec![Vec::with_capacity(idx.len()); heads];
        for chunk in idx.chunks(EVAL_CHUNK) {
            let y = self.predict(&data.feature_tensor(chunk, self.frames())?)?;
            for r in 0..chunk.len() {
                for (h, col) in cols.iter_mut().enumerate() {
                    col.push(f64::from(y.data()[r * heads + h]));
                }
            }
        }
        Ok(cols)
    }
}

impl Parameterized<f32> for Network {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f32>)) {
        match self {
            Network::Dense(m) => m.visit_params(prefix, f),
            Network::Cnn(m) => m.visit_params(prefix, f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
        match self {
            Network::Dense(m) => m.visit_params_mut(prefix, f),
            Network::Cnn(m) => m.visit_params_mut(prefix, f),
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<f32>)) {
        match self {
            Network::Dense(m) => m.visit_buffers(prefix, f),
            Network::Cnn(m) => m.visit_buffers(prefix, f),
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<f32>)) {
        match self {
            Network::Dense(m) => m.visit_buffers_mut(prefix, f),
            Network::Cnn(m) => m.visit_buffers_mut(prefix, f),
        }
    }
}
