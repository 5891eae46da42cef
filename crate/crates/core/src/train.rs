//! The training loop with best-dev-epoch selection, and the MTL weight grid
//! search built on it.

use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, DevRecord};
use crate::config::RunConfig;
use crate::data::{apply_znorm, fit_znorm, load_dataset, load_features, make_schedule, DataSet, FeatureFormat, Split};
use crate::error::{Error, Result};
use crate::ladder::{Attribute, Task};
use crate::metrics::ccc;
use crate::network::Network;
use crate::numerics::RngStream;
use crate::optimizer::{NadamConfig, NadamState};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 0 is the initialized model, before any update.
    pub epoch: usize,
    /// Mean batch cost over the epoch; `None` for epoch 0.
    pub train_cost: Option<f64>,
    /// Dev CCC per attribute; `None` where the model has no head.
    pub dev_ccc: [Option<f64>; 3],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The epoch with the highest dev CCC on the target attribute.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Dev CCC of every head, in normalized label space. CCC is invariant to a
/// positive affine map applied to both series, so this equals the raw-scale
/// score.
pub fn dev_scores(net: &Network, data: &DataSet, idx: &[usize]) -> Result<[Option<f64>; 3]> {
    let cols = net.predict_samples(data, idx)?;
    let attrs: Vec<Attribute> = match net.task() {
        Task::Stl(a) => vec![a],
        Task::Mtl => Attribute::ALL.to_vec(),
    };
    let mut out = [None; 3];
    for (a, pred) in attrs.into_iter().zip(&cols) {
        out[a.index()] = Some(ccc(pred, &data.label_column(idx, a.index())?)?);
    }
    Ok(out)
}

/// Loads the configured feature and label files, appending the unlabeled
/// pool when one is configured.
pub fn load_run_data(config: &RunConfig) -> Result<DataSet> {
    let (Some(features), Some(labels)) = (&config.features, &config.labels) else {
        return Err(Error::Config("features and labels paths are required".into()));
    };
    let kind = config.model.feature_kind();
    let mut data = load_dataset(features, labels, kind, None)?;
    if let Some(path) = &config.unlabeled {
        let pool = load_features(path, FeatureFormat::from_path(path), kind, Some(data.dim))?;
        for i in 0..pool.len() {
            data.push(pool.ids[i].clone(), pool.features[i].clone(), pool.frames[i], None, Split::Unlabeled)?;
        }
        data.validate()?;
    }
    Ok(data)
}

pub fn train(config: &RunConfig, data: &DataSet) -> Result<TrainOutcome> {
    train_with(config, data, |_| {})
}

/// Trains on the train (and, for UL variants, unlabeled) split, scoring the
/// dev split after every epoch. `on_epoch` sees each log line as it is made.
pub fn train_with(config: &RunConfig, data: &DataSet, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    config.validate()?;
    if data.kind != config.model.feature_kind() {
        return Err(Error::Data(format!(
            "{} needs {:?} features, dataset holds {:?}",
            config.model.name(),
            config.model.feature_kind(),
            data.kind
        )));
    }
    let norm = fit_znorm(&data.split(Split::Train))?;
    let data = apply_znorm(data, &norm)?;
    let labeled = data.indices(Split::Train);
    let unlabeled = data.indices(Split::Unlabeled);
    let dev = data.indices(Split::Dev);
    if dev.len() < 2 {
        return Err(Error::Data("model selection needs at least two dev samples".into()));
    }

    let root = RngStream::new(config.seed);
    let mut net = Network::build(config, data.dim, &mut root.fork(1))?;
    let mut schedule_rng = root.fork(2);
    let mut noise_rng = root.fork(3);
    let weights = config.cost_weights(net.levels())?;
    let mut opt = NadamState::new(NadamConfig {
        lr: config.lr,
        ..NadamConfig::default()
    });
    let target = config.target;

    let score = |scores: &[Option<f64>; 3]| -> Result<f64> {
        scores[target.index()]
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::NonFinite(format!("dev CCC for {target}")))
    };
    let record = |epoch, scores: [Option<f64>; 3]| -> Result<DevRecord> {
        Ok(DevRecord {
            epoch,
            attribute: target,
            ccc: score(&scores)?,
            per_attribute: scores,
        })
    };

    let scores = dev_scores(&net, &data, &dev)?;
    let mut best = Checkpoint::capture(config, data.dim, &net, &opt, &norm, record(0, scores)?);
    let mut log = vec![EpochLog {
        epoch: 0,
        train_cost: None,
        dev_ccc: scores,
    }];
    on_epoch(&log[0]);

    for epoch in 1..=config.epochs {
        let diverged = |best: &Checkpoint| Error::Diverged {
            epoch,
            last_good: Box::new(best.clone()),
        };
        let plan = make_schedule(&labeled, &unlabeled, config.batch_size, config.schedule_mode(), config.policy, &mut schedule_rng)?;
        let mut total = 0.0;
        for b in &plan {
            let batch = data.batch::<f32>(&b.indices, net.frames())?;
            let report = match net.train_cost(&batch.features, batch.labels.as_ref(), &weights, &mut noise_rng) {
                Ok(r) if r.total.is_finite() => r,
                Ok(_) | Err(Error::NonFinite(_)) => return Err(diverged(&best)),
                Err(e) => return Err(e),
            };
            match opt.step(&mut net) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => return Err(diverged(&best)),
                Err(e) => return Err(e),
            }
            total += report.total;
        }
        let scores = dev_scores(&net, &data, &dev)?;
        let current = match score(&scores) {
            Ok(v) => v,
            Err(_) => return Err(diverged(&best)),
        };
        let line = EpochLog {
            epoch,
            train_cost: Some(total / plan.len() as f64),
            dev_ccc: scores,
        };
        on_epoch(&line);
        log.push(line);
        if current > best.best_dev.ccc {
            best = Checkpoint::capture(config, data.dim, &net, &opt, &norm, record(epoch, scores)?);
        }
    }
    Ok(TrainOutcome { checkpoint: best, log })
}

/// All `(α, β)` on the lattice `{i·step, j·step : i, j ≥ 0, i + j ≤ 1/step}`.
pub fn simplex_grid(step: f64) -> Result<Vec<(f64, f64)>> {
    let n = (1.0 / step).round();
    if !(step > 0.0) || n < 1.0 || ((n * step) - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("grid step {step} must divide 1")));
    }
    let n = n as usize;
    Ok((0..=n)
        .flat_map(|i| (0..=n - i).map(move |j| (i as f64 / n as f64, j as f64 / n as f64)))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub alpha: f64,
    pub beta: f64,
    /// Best dev CCC across epochs for each attribute.
    pub dev_ccc: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub cells: Vec<GridCell>,
    /// Index into `cells` of the chosen pair for each attribute.
    pub best: [usize; 3],
}

impl GridSearch {
    pub fn best_pair(&self, attribute: Attribute) -> (f64, f64) {
        let c = &self.cells[self.best[attribute.index()]];
        (c.alpha, c.beta)
    }
}

/// Picks the cell with the highest dev CCC for `attribute`. Ties go to the
/// larger weight on that attribute, then to the lexicographically smaller
/// `(α, β)`.
pub fn select_cell(cells: &[GridCell], attribute: Attribute) -> Option<usize> {
    let a = attribute.index();
    let weight = |c: &GridCell| [c.alpha, c.beta, 1.0 - c.alpha - c.beta][a];
    (0..cells.len()).reduce(|best, i| {
        let (x, y) = (&cells[i], &cells[best]);
        let better = x.dev_ccc[a]
            .total_cmp(&y.dev_ccc[a])
            .then(weight(x).total_cmp(&weight(y)))
            .then(y.alpha.total_cmp(&x.alpha))
            .then(y.beta.total_cmp(&x.beta));
        if better.is_gt() {
            i
        } else {
            best
        }
    })
}

/// Trains one MTL system per grid cell, in parallel, each with its own seed
/// derived from the configured one.
pub fn grid_search_mtl(config: &RunConfig, data: &DataSet, step: f64) -> Result<GridSearch> {
    if !config.variant.is_mtl() {
        return Err(Error::Config(format!("grid search needs an MTL variant, got {}", config.variant)));
    }
    let grid = simplex_grid(step)?;
    let root = RngStream::new(config.seed);
    let cells = grid
        .par_iter()
        .enumerate()
        .map(|(i, &(alpha, beta))| {
            let cfg = RunConfig {
                alpha,
                beta,
                seed: root.fork(i as u64).next_u64(),
                ..config.clone()
            };
            let out = train(&cfg, data)?;
            let mut dev_ccc = [f64::NEG_INFINITY; 3];
            for line in &out.log {
                for (best, v) in dev_ccc.iter_mut().zip(line.dev_ccc) {
                    *best = best.max(v.unwrap_or(f64::NEG_INFINITY));
                }
            }
            Ok(GridCell { alpha, beta, dev_ccc })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = Attribute::ALL.map(|a| select_cell(&cells, a).expect("grid is non-empty"));
    Ok(GridSearch { cells, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::data::{synth_generate, SynthConfig};

    fn tiny_data() -> DataSet {
        synth_generate(&SynthConfig {
            n_labeled: 60,
            n_unlabeled: 120,
            n_dev: 30,
            n_test: 30,
            d: 12,
            latent_k: 3,
            ..SynthConfig::default()
        })
        .unwrap()
        .dataset
    }

    fn tiny_config(variant: Variant) -> RunConfig {
        RunConfig {
            variant,
            hidden: vec![8, 6],
            epochs: 3,
            batch_size: 16,
            lr: 1e-2,
            seed: 5,
            ..RunConfig::default()
        }
    }

    #[test]
    fn grid_has_66_cells_at_step_tenth() {
        let g = simplex_grid(0.1).unwrap();
        assert_eq!(g.len(), 66);
        assert!(g.contains(&(1.0, 0.0)));
        assert!(g.iter().all(|&(a, b)| a >= 0.0 && b >= 0.0 && a + b <= 1.0 + 1e-12));
        assert_eq!(simplex_grid(0.5).unwrap().len(), 6);
        assert!(simplex_grid(0.3).is_err());
    }

    #[test]
    fn selection_tie_breaks() {
        let cell = |alpha, beta, c| GridCell { alpha, beta, dev_ccc: [c; 3] };
        let cells = vec![cell(0.2, 0.3, 0.5), cell(0.6, 0.0, 0.5), cell(0.0, 0.6, 0.5), cell(0.1, 0.1, 0.4)];
        assert_eq!(select_cell(&cells, Attribute::Arousal), Some(1));
        assert_eq!(select_cell(&cells, Attribute::Valence), Some(2));
        // dominance weights 0.5, 0.4, 0.4 → first cell.
        assert_eq!(select_cell(&cells, Attribute::Dominance), Some(0));
        let tied = vec![cell(0.3, 0.2, 0.5), cell(0.3, 0.1, 0.5), cell(0.2, 0.3, 0.5)];
        // Equal arousal weight 0.3 → lexicographically smaller (0.3, 0.1).
        assert_eq!(select_cell(&tied, Attribute::Arousal), Some(1));
    }

    #[test]
    fn zero_epochs_keeps_initial_model() {
        let data = tiny_data();
        let cfg = RunConfig { epochs: 0, ..tiny_config(Variant::Stl) };
        let out = train(&cfg, &data).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.checkpoint.best_dev.epoch, 0);
        assert_eq!(Some(out.checkpoint.best_dev.ccc), out.log[0].dev_ccc[0]);
    }

    #[test]
    fn every_variant_trains_and_selects_the_best_dev_epoch() {
        let data = tiny_data();
        for v in Variant::ALL {
            let cfg = RunConfig { target: Attribute::Valence, ..tiny_config(v) };
            let out = train(&cfg, &data).unwrap();
            assert_eq!(out.log.len(), 4);
            let max = out.log.iter().map(|l| l.dev_ccc[1].unwrap()).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(out.checkpoint.best_dev.ccc, max, "{v}");
            assert!(out.log[1..].iter().all(|l| l.train_cost.unwrap().is_finite()));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_data();
        let cfg = tiny_config(Variant::LadUlMtl);
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn divergence_returns_last_good_checkpoint() {
        let data = tiny_data();
        let cfg = RunConfig { lr: 1e30, epochs: 5, ..tiny_config(Variant::Mtl) };
        match train(&cfg, &data) {
            Err(Error::Diverged { epoch, last_good }) => {
                assert!(epoch >= 1);
                assert!(last_good.best_dev.epoch < epoch);
                last_good.network().unwrap();
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn unlabeled_variants_need_an_unlabeled_pool() {
        let data = tiny_data();
        let labeled_only = data.subset(&(0..data.len()).filter(|&i| data.splits[i] != Split::Unlabeled).collect::<Vec<_>>());
        assert!(train(&tiny_config(Variant::LadUlStl), &labeled_only).is_err());
        train(&tiny_config(Variant::LadLStl), &labeled_only).unwrap();
    }

    #[test]
    fn small_grid_search() {
        let data = tiny_data();
        let cfg = RunConfig { epochs: 1, ..tiny_config(Variant::Mtl) };
        let g = grid_search_mtl(&cfg, &data, 0.5).unwrap();
        assert_eq!(g.cells.len(), 6);
        for a in Attribute::ALL {
            let (al, be) = g.best_pair(a);
            assert!(al + be <= 1.0);
        }
        assert!(grid_search_mtl(&tiny_config(Variant::Stl), &data, 0.5).is_err());
    }
}
