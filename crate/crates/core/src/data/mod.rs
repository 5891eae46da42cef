//! Datasets, z-normalization, label-scale mapping and batching.

mod io;
mod schedule;
mod synth;

pub use io::{load_dataset, load_features, load_labels, write_features, write_labels, FeatureFormat};
pub use schedule::{make_schedule, BatchPlan, BatchTag, EpochPolicy, ScheduleMode};
pub use synth::{synth_generate, SynthConfig, SynthData, SynthTargets};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Frame count every frame-level sequence is padded or truncated to.
pub const FRAMES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// One `d`-vector per sample.
    Sentence,
    /// One `d × T_i` sequence per sample.
    Frame,
}

impl FeatureKind {
    fn code(self) -> u8 {
        match self {
            FeatureKind::Sentence => 0,
            FeatureKind::Frame => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(FeatureKind::Sentence),
            1 => Ok(FeatureKind::Frame),
            _ => Err(Error::Format(format!("unknown feature kind code {c}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
    Unlabeled,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "development" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            "unlabeled" | "unlabelled" => Ok(Split::Unlabeled),
            other => Err(Error::Data(format!("unknown split '{other}'"))),
        }
    }
}

/// Samples with their features, optional labels and split tags.
///
/// Sentence-level features are stored as `d` values per sample; frame-level
/// features as a row-major `d × T_i` block.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub kind: FeatureKind,
    pub dim: usize,
    pub ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub frames: Vec<usize>,
    /// Arousal, valence, dominance.
    pub labels: Vec<Option<[f64; 3]>>,
    pub splits: Vec<Split>,
}

impl DataSet {
    pub fn empty(kind: FeatureKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            ids: Vec::new(),
            features: Vec::new(),
            frames: Vec::new(),
            labels: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: String, features: Vec<f64>, frames: usize, label: Option<[f64; 3]>, split: Split) -> Result<()> {
        if features.len() != self.dim * frames || (self.kind == FeatureKind::Sentence && frames != 1) {
            return Err(Error::dim(
                "dataset_push",
                format!("sample '{id}' has {} values for {frames} frames of width {}", features.len(), self.dim),
            ));
        }
        self.ids.push(id);
        self.features.push(features);
        self.frames.push(frames);
        self.labels.push(label);
        self.splits.push(split);
        Ok(())
    }

    /// Unique ids; labels present exactly on non-unlabeled splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for i in 0..self.len() {
            let id = &self.ids[i];
            if !seen.insert(id) {
                return Err(Error::Data(format!("duplicate sample id '{id}'")));
            }
            match (self.splits[i], &self.labels[i]) {
                (Split::Unlabeled, Some(_)) => {
                    return Err(Error::Data(format!("sample '{id}' is unlabeled but carries labels")))
                }
                (s, None) if s != Split::Unlabeled => {
                    return Err(Error::Data(format!("sample '{id}' in split {s} has no labels")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> DataSet {
        let mut out = DataSet::empty(self.kind, self.dim);
        for &i in idx {
            out.ids.push(self.ids[i].clone());
            out.features.push(self.features[i].clone());
            out.frames.push(self.frames[i]);
            out.labels.push(self.labels[i]);
            out.splits.push(self.splits[i]);
        }
        out
    }

    pub fn split(&self, split: Split) -> DataSet {
        self.subset(&self.indices(split))
    }

    /// Sentence-level features of `idx` as `[n × d]`, or frame-level features
    /// padded/truncated to `frames` as `[n × d × frames]`.
    pub fn feature_tensor<T: Real>(&self, idx: &[usize], frames: usize) -> Result<Tensor<T>> {
        match self.kind {
            FeatureKind::Sentence => {
                let mut data = Vec::with_capacity(idx.len() * self.dim);
                for &i in idx {
                    data.extend(self.features[i].iter().map(|&v| T::lit(v)));
                }
                Tensor::new(vec![idx.len(), self.dim], data)
            }
            FeatureKind::Frame => {
                let mut data = Vec::with_capacity(idx.len() * self.dim * frames);
                for &i in idx {
                    let seq = Tensor::new(vec![self.dim, self.frames[i]], self.features[i].clone())?;
                    data.extend(pad_or_truncate(&seq, frames)?.data().iter().map(|&v| T::lit(v)));
                }
                Tensor::new(vec![idx.len(), self.dim, frames], data)
            }
        }
    }

    /// `[n × 3]` labels, or `None` if no sample in `idx` is labeled. A mix of
    /// labeled and unlabeled samples violates the batch contract.
    pub fn label_tensor<T: Real>(&self, idx: &[usize]) -> Result<Option<Tensor<T>>> {
        let labeled = idx.iter().filter(|&&i| self.labels[i].is_some()).count();
        if labeled == 0 {
            return Ok(None);
        }
        if labeled != idx.len() {
            return Err(Error::BatchContract(format!(
                "batch mixes {labeled} labeled and {} unlabeled samples",
                idx.len() - labeled
            )));
        }
        let data = idx
            .iter()
            .flat_map(|&i| self.labels[i].expect("checked above").map(T::lit))
            .collect();
        Ok(Some(Tensor::new(vec![idx.len(), 3], data)?))
    }

    pub fn batch<T: Real>(&self, idx: &[usize], frames: usize) -> Result<Batch<T>> {
        Ok(Batch {
            features: self.feature_tensor(idx, frames)?,
            labels: self.label_tensor(idx)?,
        })
    }

    /// Labels of `idx` for one attribute column.
    pub fn label_column(&self, idx: &[usize], column: usize) -> Result<Vec<f64>> {
        idx.iter()
            .map(|&i| {
                self.labels[i]
                    .map(|l| l[column])
                    .ok_or_else(|| Error::Data(format!("sample '{}' has no labels", self.ids[i])))
            })
            .collect()
    }
}

/// A wholly labeled or wholly unlabeled mini-batch.
#[derive(Debug, Clone)]
pub struct Batch<T = f32> {
    pub features: Tensor<T>,
    pub labels: Option<Tensor<T>>,
}

impl<T: Real> Batch<T> {
    pub fn tag(&self) -> BatchTag {
        if self.labels.is_some() {
            BatchTag::Labeled
        } else {
            BatchTag::Unlabeled
        }
    }
}

/// Train-split statistics for features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub feature_mean: Vec<f64>,
    /// Population standard deviation; zero marks a dropped feature.
    pub feature_std: Vec<f64>,
    /// Indices of constant features removed by [`apply_znorm`].
    pub dropped: Vec<usize>,
    pub label_mean: [f64; 3],
    pub label_std: [f64; 3],
}

impl NormStats {
    pub fn retained(&self) -> Vec<usize> {
        (0..self.feature_mean.len()).filter(|j| !self.dropped.contains(j)).collect()
    }

    pub fn normalize_label(&self, column: usize, y: f64) -> f64 {
        (y - self.label_mean[column]) / self.label_std[column]
    }

    pub fn denormalize_label(&self, column: usize, y: f64) -> f64 {
        y * self.label_std[column] + self.label_mean[column]
    }
}

/// Fits per-feature and per-attribute statistics on train samples only.
pub fn fit_znorm(train: &DataSet) -> Result<NormStats> {
    if let Some(i) = train.splits.iter().position(|&s| s != Split::Train) {
        return Err(Error::Data(format!(
            "normalization statistics must come from the train split; sample '{}' is {}",
            train.ids[i], train.splits[i]
        )));
    }
    if train.is_empty() {
        return Err(Error::Data("cannot fit normalization on an empty train split".into()));
    }
    let d = train.dim;
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for (f, &t) in train.features.iter().zip(&train.frames) {
        for j in 0..d {
            sum[j] += f[j * t..(j + 1) * t].iter().sum::<f64>();
        }
        count += t;
    }
    if count == 0 {
        return Err(Error::Data("train split has no frames".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; d];
    for (f, &t) in train.features.iter().zip(&train.frames) {
        for j in 0..d {
            sq[j] += f[j * t..(j + 1) * t].iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>();
        }
    }
    let mut std: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
    let mut dropped = Vec::new();
    for (j, s) in std.iter_mut().enumerate() {
        if *s <= 1e-12 * (1.0 + mean[j].abs()) {
            *s = 0.0;
            dropped.push(j);
        }
    }

    let mut label_mean = [0.0; 3];
    let mut label_std = [0.0; 3];
    for c in 0..3 {
        let col = train.label_column(&(0..train.len()).collect::<Vec<_>>(), c)?;
        let (m, v, _) = crate::numerics::mean_var(col);
        if v <= 0.0 {
            return Err(Error::Data(format!("label column {c} is constant on the train split")));
        }
        label_mean[c] = m;
        label_std[c] = v.sqrt();
    }
    Ok(NormStats {
        feature_mean: mean,
        feature_std: std,
        dropped,
        label_mean,
        label_std,
    })
}

/// Standardizes features and labels with `stats`, dropping constant features.
pub fn apply_znorm(ds: &DataSet, stats: &NormStats) -> Result<DataSet> {
    if ds.dim != stats.feature_mean.len() {
        return Err(Error::dim(
            "apply_znorm",
            format!("dataset width {}, statistics width {}", ds.dim, stats.feature_mean.len()),
        ));
    }
    let keep = stats.retained();
    let mut out = DataSet::empty(ds.kind, keep.len());
    for i in 0..ds.len() {
        let t = ds.frames[i];
        let f = &ds.features[i];
        let mut g = Vec::with_capacity(keep.len() * t);
        for &j in &keep {
            let (m, s) = (stats.feature_mean[j], stats.feature_std[j]);
            g.extend(f[j * t..(j + 1) * t].iter().map(|v| (v - m) / s));
        }
        let label = ds.labels[i].map(|l| [0, 1, 2].map(|c| stats.normalize_label(c, l[c])));
        out.push(ds.ids[i].clone(), g, t, label, ds.splits[i])?;
    }
    Ok(out)
}

/// Inverse of [`apply_znorm`]; dropped features are restored at their
/// (constant) train value.
pub fn invert_znorm(ds: &DataSet, stats: &NormStats) -> Result<DataSet> {
    let keep = stats.retained();
    if ds.dim != keep.len() {
        return Err(Error::dim(
            "invert_znorm",
            format!("dataset width {}, retained features {}", ds.dim, keep.len()),
        ));
    }
    let d = stats.feature_mean.len();
    let mut out = DataSet::empty(ds.kind, d);
    for i in 0..ds.len() {
        let t = ds.frames[i];
        let f = &ds.features[i];
        let mut g = vec![0.0; d * t];
        for j in 0..d {
            g[j * t..(j + 1) * t].fill(stats.feature_mean[j]);
        }
        for (k, &j) in keep.iter().enumerate() {
            let (m, s) = (stats.feature_mean[j], stats.feature_std[j]);
            for (dst, &v) in g[j * t..(j + 1) * t].iter_mut().zip(&f[k * t..(k + 1) * t]) {
                *dst = v * s + m;
            }
        }
        let label = ds.labels[i].map(|l| [0, 1, 2].map(|c| stats.denormalize_label(c, l[c])));
        out.push(ds.ids[i].clone(), g, t, label, ds.splits[i])?;
    }
    Ok(out)
}

/// Affine map between two rating scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelMap {
    pub src: (f64, f64),
    pub dst: (f64, f64),
}

impl LabelMap {
    pub fn new(src: (f64, f64), dst: (f64, f64)) -> Result<Self> {
        if !(src.1 > src.0) || !(dst.1 > dst.0) {
            return Err(Error::Parameter(format!("degenerate label range {src:?} -> {dst:?}")));
        }
        Ok(Self { src, dst })
    }

    /// Exact identity when both ranges coincide.
    pub fn apply(&self, y: f64) -> f64 {
        if self.src == self.dst {
            return y;
        }
        self.dst.0 + (y - self.src.0) * (self.dst.1 - self.dst.0) / (self.src.1 - self.src.0)
    }

    pub fn inverse(&self) -> LabelMap {
        LabelMap {
            src: self.dst,
            dst: self.src,
        }
    }
}

/// `dst_lo + (y − src_lo)·(dst_hi − dst_lo)/(src_hi − src_lo)`
pub fn affine_label_map(y: f64, src_lo: f64, src_hi: f64, dst_lo: f64, dst_hi: f64) -> Result<f64> {
    Ok(LabelMap::new((src_lo, src_hi), (dst_lo, dst_hi))?.apply(y))
}

/// Right-truncates or right-pads with zero frames a `[d × T_i]` sequence.
pub fn pad_or_truncate<T: Real>(seq: &Tensor<T>, frames: usize) -> Result<Tensor<T>> {
    let (d, t) = seq.dims2()?;
    let keep = t.min(frames);
    let mut out = Tensor::zeros(&[d, frames]);
    for c in 0..d {
        out.row_mut(c)[..keep].copy_from_slice(&seq.row(c)[..keep]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn toy(n: usize, d: usize, seed: u64) -> DataSet {
        let mut rng = RngStream::new(seed);
        let mut ds = DataSet::empty(FeatureKind::Sentence, d);
        for i in 0..n {
            let mut f: Vec<f64> = (0..d).map(|_| 3.0 * rng.standard_normal() + 1.0).collect();
            f[d - 1] = 7.5;
            let l = [rng.uniform_range(1.0, 7.0), rng.uniform_range(1.0, 7.0), rng.uniform_range(1.0, 7.0)];
            ds.push(format!("u{i}"), f, 1, Some(l), Split::Train).unwrap();
        }
        ds
    }

    #[test]
    fn znorm_standardizes_train_and_drops_constant_features() {
        let ds = toy(50, 5, 1);
        let stats = fit_znorm(&ds).unwrap();
        assert_eq!(stats.dropped, vec![4]);
        let z = apply_znorm(&ds, &stats).unwrap();
        assert_eq!(z.dim, 4);
        for j in 0..4 {
            let col: Vec<f64> = z.features.iter().map(|f| f[j]).collect();
            let (m, v, _) = crate::numerics::mean_var(col);
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        }
        for c in 0..3 {
            let (m, v, _) = crate::numerics::mean_var(z.labels.iter().map(|l| l.unwrap()[c]));
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        }
        let back = invert_znorm(&z, &stats).unwrap();
        for (a, b) in back.features.iter().flatten().zip(ds.features.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in back.labels.iter().zip(&ds.labels) {
            for c in 0..3 {
                assert!((a.unwrap()[c] - b.unwrap()[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn znorm_refuses_non_train_samples() {
        let mut ds = toy(10, 3, 2);
        ds.splits[3] = Split::Dev;
        assert!(matches!(fit_znorm(&ds), Err(Error::Data(_))));
    }

    #[test]
    fn label_map_examples() {
        assert_eq!(affine_label_map(1.0, 1.0, 7.0, 1.0, 5.0).unwrap(), 1.0);
        assert_eq!(affine_label_map(7.0, 1.0, 7.0, 1.0, 5.0).unwrap(), 5.0);
        assert_eq!(affine_label_map(4.0, 1.0, 7.0, 1.0, 5.0).unwrap(), 3.0);
        assert!(affine_label_map(4.0, 1.0, 1.0, 1.0, 5.0).is_err());
    }

    proptest! {
        #[test]
        fn label_map_inverse_is_identity(y in -10.0f64..10.0, lo in -5.0f64..5.0, w in 0.1f64..10.0, lo2 in -5.0f64..5.0, w2 in 0.1f64..10.0) {
            let m = LabelMap::new((lo, lo + w), (lo2, lo2 + w2)).unwrap();
            prop_assert!((m.inverse().apply(m.apply(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn padding_and_truncation() {
        let seq = Tensor::<f64>::from_fn(&[2, 1200], |i| i as f64);
        let cut = pad_or_truncate(&seq, 1000).unwrap();
        assert_eq!(cut.shape(), [2, 1000]);
        assert_eq!(cut.row(1)[999], 1200.0 + 999.0);
        assert_eq!(pad_or_truncate(&cut, 1000).unwrap(), cut);
        let empty = Tensor::<f64>::zeros(&[3, 0]);
        assert_eq!(pad_or_truncate(&empty, 5).unwrap(), Tensor::zeros(&[3, 5]));
        let short = pad_or_truncate(&Tensor::<f64>::full(&[1, 2], 1.0), 4).unwrap();
        assert_eq!(short.data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn mixed_batches_rejected() {
        let mut ds = toy(4, 2, 3);
        ds.labels[1] = None;
        ds.splits[1] = Split::Unlabeled;
        assert!(matches!(ds.label_tensor::<f32>(&[0, 1]), Err(Error::BatchContract(_))));
        assert!(ds.label_tensor::<f32>(&[1]).unwrap().is_none());
        assert_eq!(ds.batch::<f32>(&[0, 2], 1).unwrap().tag(), BatchTag::Labeled);
    }

    #[test]
    fn validation_catches_duplicates_and_label_mismatch() {
        let mut ds = toy(3, 2, 4);
        ds.validate().unwrap();
        ds.ids[2] = "u0".into();
        assert!(ds.validate().is_err());
        let mut ds = toy(3, 2, 4);
        ds.splits[0] = Split::Unlabeled;
        assert!(ds.validate().is_err());
    }
}
