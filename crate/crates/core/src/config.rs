//! Run configuration: a flat `key = value` file plus command-line overrides.
//!
//! Lines starting with `#` are comments. Lists are comma-separated. Every key
//! has a default, so an empty file is a valid configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cnn::{CnnConfig, ConvBlockConfig, DEFAULT_FILTERS, DEFAULT_KERNEL, DEFAULT_POOL};
use crate::data::{EpochPolicy, FeatureKind, ScheduleMode, FRAMES};
use crate::error::{Error, Result};
use crate::ladder::model::{BASELINE_DROPOUT, HIDDEN_WIDTH, LADDER_INPUT_DROPOUT, NOISE_VARIANCE};
use crate::ladder::{Attribute, CombinatorKind, CostWeights, DecoderConfig, LadderConfig, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Dense network over sentence-level high-level descriptors.
    DenseHld,
    /// CNN over frame-level low-level descriptors.
    CnnLld,
    /// CNN over Mel-frequency band energies.
    CnnMfb,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::DenseHld => "dense-HLD",
            ModelKind::CnnLld => "cnn-LLD",
            ModelKind::CnnMfb => "cnn-MFB",
        }
    }

    pub fn feature_kind(self) -> FeatureKind {
        match self {
            ModelKind::DenseHld => FeatureKind::Sentence,
            ModelKind::CnnLld | ModelKind::CnnMfb => FeatureKind::Frame,
        }
    }

    pub fn is_cnn(self) -> bool {
        self != ModelKind::DenseHld
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dense-hld" | "dense" => Ok(ModelKind::DenseHld),
            "cnn-lld" => Ok(ModelKind::CnnLld),
            "cnn-mfb" => Ok(ModelKind::CnnMfb),
            _ => Err(Error::Config(format!("unknown model kind '{s}'"))),
        }
    }
}

/// The six trained systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Stl,
    Mtl,
    LadLStl,
    LadLMtl,
    LadUlStl,
    LadUlMtl,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Stl,
        Variant::Mtl,
        Variant::LadLStl,
        Variant::LadLMtl,
        Variant::LadUlStl,
        Variant::LadUlMtl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Stl => "STL",
            Variant::Mtl => "MTL",
            Variant::LadLStl => "Lad+L+STL",
            Variant::LadLMtl => "Lad+L+MTL",
            Variant::LadUlStl => "Lad+UL+STL",
            Variant::LadUlMtl => "Lad+UL+MTL",
        }
    }

    pub fn is_ladder(self) -> bool {
        !matches!(self, Variant::Stl | Variant::Mtl)
    }

    pub fn is_mtl(self) -> bool {
        matches!(self, Variant::Mtl | Variant::LadLMtl | Variant::LadUlMtl)
    }

    pub fn uses_unlabeled(self) -> bool {
        matches!(self, Variant::LadUlStl | Variant::LadUlMtl)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown system variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub variant: Variant,
    /// Attribute of the STL head and of dev-set model selection.
    pub target: Attribute,
    pub alpha: f64,
    pub beta: f64,
    /// Variance of the noisy-path corruption.
    pub noise_variance: f64,
    /// Reconstruction weight, the same on every reconstructed level.
    pub lambda: f64,
    /// Per-layer dropout; `None` picks the variant's default.
    pub dropout: Option<Vec<f64>>,
    pub hidden: Vec<usize>,
    pub combinator: CombinatorKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub policy: EpochPolicy,
    pub frames: usize,
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
}

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_LR: f64 = 5e-5;
pub const DEFAULT_BATCH_SIZE: usize = 256;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::DenseHld,
            variant: Variant::Stl,
            target: Attribute::Arousal,
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            noise_variance: NOISE_VARIANCE,
            lambda: 1.0,
            dropout: None,
            hidden: vec![HIDDEN_WIDTH; 2],
            combinator: CombinatorKind::default(),
            lr: DEFAULT_LR,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            policy: EpochPolicy::Subsample,
            frames: FRAMES,
            filters: DEFAULT_FILTERS.to_vec(),
            kernel: DEFAULT_KERNEL,
            pool: DEFAULT_POOL,
            features: None,
            labels: None,
            unlabeled: None,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn list<V: fmt::Debug>(v: &[V]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{}' is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "model" => self.model = value.parse()?,
            "variant" => self.variant = value.parse()?,
            "target" => self.target = value.parse()?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "noise_variance" => self.noise_variance = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "dropout" => {
                self.dropout = match value {
                    "" | "default" => None,
                    v => Some(parse_list(key, v)?),
                }
            }
            "hidden" => self.hidden = parse_list(key, value)?,
            "combinator" => {
                self.combinator = match value {
                    "vanilla" => CombinatorKind::Vanilla,
                    "mlp" => CombinatorKind::default(),
                    v => match v.strip_prefix("mlp:") {
                        Some(h) => CombinatorKind::Mlp { hidden: parse(key, h)? },
                        None => return Err(Error::Config(format!("unknown combinator '{v}'"))),
                    },
                }
            }
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "policy" => {
                self.policy = match value {
                    "subsample" => EpochPolicy::Subsample,
                    "full" => EpochPolicy::Full,
                    v => return Err(Error::Config(format!("unknown epoch policy '{v}'"))),
                }
            }
            "frames" => self.frames = parse(key, value)?,
            "filters" => self.filters = parse_list(key, value)?,
            "kernel" => self.kernel = parse(key, value)?,
            "pool" => self.pool = parse(key, value)?,
            "features" => self.features = path(value),
            "labels" => self.labels = path(value),
            "unlabeled" => self.unlabeled = path(value),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the configuration.
    pub fn to_text(&self) -> String {
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let combinator = match self.combinator {
            CombinatorKind::Vanilla => "vanilla".to_string(),
            CombinatorKind::Mlp { hidden } => format!("mlp:{hidden}"),
        };
        let policy = match self.policy {
            EpochPolicy::Subsample => "subsample",
            EpochPolicy::Full => "full",
        };
        let lines = [
            ("model", self.model.name().to_string()),
            ("variant", self.variant.name().to_string()),
            ("target", self.target.name().to_string()),
            ("alpha", format!("{:?}", self.alpha)),
            ("beta", format!("{:?}", self.beta)),
            ("noise_variance", format!("{:?}", self.noise_variance)),
            ("lambda", format!("{:?}", self.lambda)),
            ("dropout", self.dropout.as_deref().map_or("default".into(), list)),
            ("hidden", list(&self.hidden)),
            ("combinator", combinator),
            ("lr", format!("{:?}", self.lr)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("policy", policy.to_string()),
            ("frames", self.frames.to_string()),
            ("filters", list(&self.filters)),
            ("kernel", self.kernel.to_string()),
            ("pool", self.pool.to_string()),
            ("features", p(&self.features)),
            ("labels", p(&self.labels)),
            ("unlabeled", p(&self.unlabeled)),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn task(&self) -> Task {
        if self.variant.is_mtl() {
            Task::Mtl
        } else {
            Task::Stl(self.target)
        }
    }

    pub fn schedule_mode(&self) -> ScheduleMode {
        if self.variant.uses_unlabeled() {
            ScheduleMode::Ul
        } else {
            ScheduleMode::L
        }
    }

    pub fn sigma(&self) -> f64 {
        if self.variant.is_ladder() {
            self.noise_variance.sqrt()
        } else {
            0.0
        }
    }

    /// Ladder: 0.1 on the input, none above. Baselines: 0.5 on both dense
    /// layers. CNN models: none.
    pub fn dropout_rates(&self) -> Vec<f64> {
        if let Some(d) = &self.dropout {
            return d.clone();
        }
        let n = self.hidden.len();
        if self.model.is_cnn() {
            vec![0.0; n]
        } else if self.variant.is_ladder() {
            (0..n).map(|i| if i == 0 { LADDER_INPUT_DROPOUT } else { 0.0 }).collect()
        } else {
            vec![BASELINE_DROPOUT; n]
        }
    }

    /// Cost weights over `levels` encoder levels, input level included.
    pub fn cost_weights(&self, levels: usize) -> Result<CostWeights> {
        let (a, b) = if self.variant.is_mtl() { (self.alpha, self.beta) } else { (1.0, 0.0) };
        CostWeights::uniform(self.lambda, levels, a, b)
    }

    pub fn ladder_config(&self, input_dim: usize) -> LadderConfig {
        LadderConfig {
            input_dim,
            hidden: self.hidden.clone(),
            task: self.task(),
            sigma: self.sigma(),
            dropout: self.dropout_rates(),
            decoder: self.variant.is_ladder().then_some(DecoderConfig {
                combinator: self.combinator,
                first_level: 0,
            }),
        }
    }

    pub fn cnn_config(&self, channels: usize) -> CnnConfig {
        CnnConfig {
            input_channels: channels,
            frames: self.frames,
            blocks: self
                .filters
                .iter()
                .map(|&filters| ConvBlockConfig {
                    filters,
                    kernel: self.kernel,
                    pool: self.pool,
                })
                .collect(),
            fc: self.hidden.clone(),
            task: self.task(),
            sigma: self.sigma(),
            combinator: self.variant.is_ladder().then_some(self.combinator),
        }
    }

    /// Checks internal consistency. File paths are checked separately by
    /// [`RunConfig::validate_paths`].
    pub fn validate(&self) -> Result<()> {
        if self.variant.is_mtl() {
            CostWeights::uniform(self.lambda, 1, self.alpha, self.beta).map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::Config(format!("noise variance must be >= 0, got {}", self.noise_variance)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("hidden widths {:?} must be positive", self.hidden)));
        }
        let dropout = self.dropout_rates();
        if dropout.len() != self.hidden.len() || dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config(format!(
                "need one dropout rate in [0, 1) per dense layer, got {dropout:?}"
            )));
        }
        if self.model.is_cnn() {
            self.cnn_config(1).validate()?;
        }
        Ok(())
    }

    pub fn validate_paths(&self) -> Result<()> {
        self.validate()?;
        if self.features.is_none() || self.labels.is_none() {
            return Err(Error::Config("features and labels paths are required".into()));
        }
        if self.variant.uses_unlabeled() && self.unlabeled.is_none() {
            return Err(Error::Config(format!("{} needs an unlabeled features path", self.variant)));
        }
        Ok(())
    }
}
