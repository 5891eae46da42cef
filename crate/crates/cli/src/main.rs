use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ladder_ser::checkpoint::Checkpoint;
use ladder_ser::config::RunConfig;
use ladder_ser::data::{self, FeatureFormat, LabelMap, Split, SynthConfig};
use ladder_ser::eval::{compare, comparison_csv, evaluate, render_comparison, EvalReport, TestKind};
use ladder_ser::ladder::Attribute;
use ladder_ser::train::{grid_search_mtl, load_run_data, train_with, EpochLog};

#[derive(Parser)]
#[command(name = "ladder", version, about = "Ladder networks for emotional attribute regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one system and keep the best dev epoch.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Search the (alpha, beta) simplex for an MTL variant.
    GridSearch {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// Every cell's dev scores as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a labeled dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// train, dev, test; all labeled samples when omitted.
        #[arg(long)]
        split: Option<Split>,
        /// Training label range `lo,hi` for cross-corpus mapping.
        #[arg(long, requires = "map_to", value_parser = parse_range)]
        map_from: Option<(f64, f64)>,
        /// Target corpus label range `lo,hi`.
        #[arg(long, requires = "map_from", value_parser = parse_range)]
        map_to: Option<(f64, f64)>,
        /// Contiguous folds scored separately, for paired t-tests.
        #[arg(long, default_value_t = 0)]
        folds: usize,
        /// Report CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test whether system A beats system B on each attribute.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// fisher or paired_t
        #[arg(long, default_value = "fisher")]
        test: TestKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus and a matching run configuration.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = SynthConfig::default().n_labeled)]
        n_labeled: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_unlabeled)]
        n_unlabeled: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_dev)]
        n_dev: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_test)]
        n_test: usize,
        #[arg(long, default_value_t = SynthConfig::default().d)]
        dim: usize,
        #[arg(long, default_value_t = SynthConfig::default().latent_k)]
        latent_k: usize,
        #[arg(long, default_value_t = SynthConfig::default().noise)]
        noise: f64,
        #[arg(long, default_value_t = SynthConfig::default().seed)]
        seed: u64,
        /// Write CSV instead of binary feature files.
        #[arg(long)]
        text: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides, `key=value`, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        c.apply_overrides(&self.overrides)?;
        c.validate_paths()?;
        Ok(c)
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let hi = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    Ok((lo, hi))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn print_epoch(l: &EpochLog) {
    let [a, v, d] = l.dev_ccc.map(fmt_opt);
    println!("{:>6} {:>12} {:>9} {:>9} {:>9}", l.epoch, fmt_opt(l.train_cost), a, v, d);
}

fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_cost,dev_arousal,dev_valence,dev_dominance\n");
    for l in log {
        let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
        let [a, v, d] = l.dev_ccc.map(cell);
        out.push_str(&format!("{},{},{a},{v},{d}\n", l.epoch, cell(l.train_cost)));
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, out, log } => {
            let config = run.load()?;
            let data = load_run_data(&config)?;
            println!("{:>6} {:>12} {:>9} {:>9} {:>9}", "epoch", "train_cost", "aro", "val", "dom");
            let mut lines = Vec::new();
            let outcome = train_with(&config, &data, |l| {
                print_epoch(l);
                lines.push(l.clone());
            });
            if let Some(p) = &log {
                write(p, &log_csv(&lines))?;
            }
            let outcome = outcome?;
            outcome.checkpoint.save(&out)?;
            let best = outcome.checkpoint.best_dev;
            println!("best dev {} CCC {:.4} at epoch {}; saved {}", best.attribute, best.ccc, best.epoch, out.display());
        }
        Command::GridSearch { run, step, out } => {
            let config = run.load()?;
            let data = load_run_data(&config)?;
            let g = grid_search_mtl(&config, &data, step)?;
            println!("{:<10} {:>6} {:>6} {:>9}", "attribute", "alpha", "beta", "dev CCC");
            for a in Attribute::ALL {
                let c = &g.cells[g.best[a.index()]];
                println!("{:<10} {:>6.2} {:>6.2} {:>9.4}", a.name(), c.alpha, c.beta, c.dev_ccc[a.index()]);
            }
            if let Some(p) = out {
                let mut text = String::from("alpha,beta,dev_arousal,dev_valence,dev_dominance\n");
                for c in &g.cells {
                    text.push_str(&format!("{:?},{:?},{:?},{:?},{:?}\n", c.alpha, c.beta, c.dev_ccc[0], c.dev_ccc[1], c.dev_ccc[2]));
                }
                write(&p, &text)?;
            }
        }
        Command::Evaluate {
            checkpoint,
            features,
            labels,
            split,
            map_from,
            map_to,
            folds,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let data = data::load_dataset(&features, &labels, ckpt.config.model.feature_kind(), None)?;
            let map = match (map_from, map_to) {
                (Some(s), Some(d)) => Some(LabelMap::new(s, d)?),
                _ => None,
            };
            let report = evaluate(&ckpt, &data, split, map.as_ref(), folds)?;
            print!("{}", report.render());
            if let Some(p) = out {
                write(&p, &report.to_csv())?;
            }
        }
        Command::Compare { a, b, test, out } => {
            let ra = EvalReport::load(&a).with_context(|| format!("reading {}", a.display()))?;
            let rb = EvalReport::load(&b).with_context(|| format!("reading {}", b.display()))?;
            let rows = compare(&ra, &rb, test)?;
            print!("{}", render_comparison(&ra, &rb, &rows));
            if let Some(p) = out {
                write(&p, &comparison_csv(&rows))?;
            }
        }
        Command::Synth {
            out_dir,
            n_labeled,
            n_unlabeled,
            n_dev,
            n_test,
            dim,
            latent_k,
            noise,
            seed,
            text,
        } => {
            let cfg = SynthConfig {
                n_labeled,
                n_unlabeled,
                n_dev,
                n_test,
                d: dim,
                latent_k,
                noise,
                seed,
            };
            let ds = data::synth_generate(&cfg)?.dataset;
            fs::create_dir_all(&out_dir)?;
            let (ext, format) = if text { ("csv", FeatureFormat::Text) } else { ("bin", FeatureFormat::Binary) };
            let labeled: Vec<usize> = (0..ds.len()).filter(|&i| ds.splits[i] != Split::Unlabeled).collect();
            let pool = ds.indices(Split::Unlabeled);
            let features = out_dir.join(format!("features.{ext}"));
            let unlabeled = out_dir.join(format!("unlabeled.{ext}"));
            let labels = out_dir.join("labels.csv");
            data::write_features(&ds.subset(&labeled), &features, format)?;
            data::write_labels(&ds.subset(&labeled), &labels)?;
            data::write_features(&ds.subset(&pool), &unlabeled, format)?;
            let run = RunConfig {
                features: Some(features),
                labels: Some(labels),
                unlabeled: (!pool.is_empty()).then_some(unlabeled),
                ..RunConfig::default()
            };
            write(&out_dir.join("run.cfg"), &run.to_text())?;
            println!(
                "wrote {} labeled and {} unlabeled samples to {}",
                labeled.len(),
                pool.len(),
                out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
