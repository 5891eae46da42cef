//! Test-set evaluation and significance comparison of two systems.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::data::{apply_znorm, DataSet, LabelMap, Split};
use crate::error::{Error, Result};
use crate::ladder::{Attribute, Task};
use crate::metrics::{ccc, fisher_z_test, metric_value, paired_t_test, SignificanceResult};

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeScore {
    pub attribute: Attribute,
    pub ccc: f64,
    pub pearson: f64,
    /// CCC on each contiguous fold; empty when folds were not requested.
    pub folds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub system: String,
    pub n: usize,
    pub scores: Vec<AttributeScore>,
}

impl EvalReport {
    pub fn score(&self, attribute: Attribute) -> Option<&AttributeScore> {
        self.scores.iter().find(|s| s.attribute == attribute)
    }

    /// Aligned text table.
    pub fn render(&self) -> String {
        let mut out = format!("{} (n = {})\n{:<10} {:>8} {:>8}\n", self.system, self.n, "attribute", "CCC", "Pearson");
        for s in &self.scores {
            let _ = writeln!(out, "{:<10} {:>8.4} {:>8.4}", s.attribute.name(), s.ccc, s.pearson);
        }
        out
    }

    /// `system,attribute,n,ccc,pearson,folds` with folds joined by `;`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,attribute,n,ccc,pearson,folds\n");
        for s in &self.scores {
            let folds: Vec<String> = s.folds.iter().map(|f| format!("{f:?}")).collect();
            let _ = writeln!(
                out,
                "{},{},{},{:?},{:?},{}",
                self.system,
                s.attribute.name(),
                self.n,
                s.ccc,
                s.pearson,
                folds.join(";")
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut report: Option<EvalReport> = None;
        let bad = |what: &str| Error::Format(format!("report: {what}"));
        for record in reader.records() {
            let r = record.map_err(|e| bad(&e.to_string()))?;
            if r.len() != 6 {
                return Err(bad(&format!("expected 6 columns, found {}", r.len())));
            }
            let num = |i: usize| r[i].trim().parse::<f64>().map_err(|_| bad(&format!("bad number '{}'", &r[i])));
            let n: usize = r[2].trim().parse().map_err(|_| bad("bad sample count"))?;
            let folds = r[5]
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad("bad fold value")))
                .collect::<Result<Vec<_>>>()?;
            let score = AttributeScore {
                attribute: r[1].parse()?,
                ccc: num(3)?,
                pearson: num(4)?,
                folds,
            };
            let rep = report.get_or_insert_with(|| EvalReport {
                system: r[0].to_string(),
                n,
                scores: Vec::new(),
            });
            if rep.n != n || rep.system != r[0] {
                return Err(bad("rows disagree on system or sample count"));
            }
            rep.scores.push(score);
        }
        report.ok_or_else(|| bad("no rows"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Scores `ckpt` on the labeled samples of `split` (all labeled samples when
/// `None`). Predictions are mapped back to the training label scale, then
/// through `label_map` if given, and compared with the raw labels.
pub fn evaluate(
    ckpt: &Checkpoint,
    data: &DataSet,
    split: Option<Split>,
    label_map: Option<&LabelMap>,
    folds: usize,
) -> Result<EvalReport> {
    let kind = ckpt.config.model.feature_kind();
    if data.kind != kind {
        return Err(Error::Data(format!(
            "feature kind mismatch: checkpoint expects {kind:?}, dataset holds {:?}",
            data.kind
        )));
    }
    let idx: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels[i].is_some() && split.is_none_or(|s| data.splits[i] == s))
        .collect();
    let subset = data.subset(&idx);
    let normalized = apply_znorm(&subset, &ckpt.norm)?;
    let net = ckpt.network()?;
    let all: Vec<usize> = (0..subset.len()).collect();
    let cols = net.predict_samples(&normalized, &all)?;
    let attrs: Vec<Attribute> = match net.task() {
        Task::Stl(a) => vec![a],
        Task::Mtl => Attribute::ALL.to_vec(),
    };
    let bounds = fold_bounds(all.len(), folds);
    let mut scores = Vec::with_capacity(attrs.len());
    for (a, col) in attrs.into_iter().zip(cols) {
        let pred: Vec<f64> = col
            .into_iter()
            .map(|p| {
                let y = ckpt.norm.denormalize_label(a.index(), p);
                label_map.map_or(y, |m| m.apply(y))
            })
            .collect();
        let truth = subset.label_column(&all, a.index())?;
        let m = metric_value(&pred, &truth)?;
        let folds = bounds
            .windows(2)
            .map(|w| ccc(&pred[w[0]..w[1]], &truth[w[0]..w[1]]))
            .collect::<Result<Vec<_>>>()?;
        scores.push(AttributeScore {
            attribute: a,
            ccc: m.ccc,
            pearson: m.pearson,
            folds,
        });
    }
    Ok(EvalReport {
        system: ckpt.config.variant.name().to_string(),
        n: all.len(),
        scores,
    })
}

/// Boundaries of `k` contiguous near-equal folds over `n` samples; empty for
/// `k < 2`.
fn fold_bounds(n: usize, k: usize) -> Vec<usize> {
    if k < 2 {
        return Vec::new();
    }
    (0..=k).map(|i| i * n / k).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Fisher,
    PairedT,
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fisher" => Ok(TestKind::Fisher),
            "paired_t" => Ok(TestKind::PairedT),
            _ => Err(Error::Config(format!("unknown test '{s}' (fisher or paired_t)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub attribute: Attribute,
    pub ccc_a: f64,
    pub ccc_b: f64,
    /// One-tailed test that A beats B; degenerate inputs are reported here
    /// rather than aborting the comparison.
    pub outcome: std::result::Result<SignificanceResult, String>,
}

impl Comparison {
    pub fn significant(&self) -> bool {
        matches!(self.outcome, Ok(r) if r.significant)
    }
}

/// Compares every attribute scored in both reports.
pub fn compare(a: &EvalReport, b: &EvalReport, test: TestKind) -> Result<Vec<Comparison>> {
    if test == TestKind::Fisher && a.n != b.n {
        return Err(Error::Data(format!("Fisher test needs equal test sizes, got {} and {}", a.n, b.n)));
    }
    let mut out = Vec::new();
    for sa in &a.scores {
        let Some(sb) = b.score(sa.attribute) else { continue };
        let outcome = match test {
            TestKind::Fisher => fisher_z_test(sa.ccc, a.n, sb.ccc, b.n),
            TestKind::PairedT => {
                if sa.folds.len() != sb.folds.len() || sa.folds.len() < 2 {
                    return Err(Error::Data(format!(
                        "paired t-test needs matching folds, got {} and {} for {}",
                        sa.folds.len(),
                        sb.folds.len(),
                        sa.attribute
                    )));
                }
                paired_t_test(&sa.folds, &sb.folds)
            }
        };
        out.push(Comparison {
            attribute: sa.attribute,
            ccc_a: sa.ccc,
            ccc_b: sb.ccc,
            outcome: outcome.map_err(|e| e.to_string()),
        });
    }
    if out.is_empty() {
        return Err(Error::Data("the reports share no attribute".into()));
    }
    Ok(out)
}

/// Text table with `•` marking attributes where A is significantly better.
pub fn render_comparison(a: &EvalReport, b: &EvalReport, rows: &[Comparison]) -> String {
    let mut out = format!(
        "{:<10} {:>12} {:>12} {:>9} {:>8}\n",
        "attribute", a.system, b.system, "stat", "p"
    );
    for c in rows {
        let mark = if c.significant() { "•" } else { "" };
        let (stat, p) = match &c.outcome {
            Ok(r) => (format!("{:.3}", r.statistic), format!("{:.4}", r.p_value)),
            Err(_) => ("degenerate".into(), "-".into()),
        };
        let _ = writeln!(
            out,
            "{:<10} {:>11.4}{:1} {:>12.4} {:>9} {:>8}",
            c.attribute.name(),
            c.ccc_a,
            mark,
            c.ccc_b,
            stat,
            p
        );
    }
    out
}

/// `attribute,ccc_a,ccc_b,statistic,p_value,significant,error`
pub fn comparison_csv(rows: &[Comparison]) -> String {
    let mut out = String::from("attribute,ccc_a,ccc_b,statistic,p_value,significant,error\n");
    for c in rows {
        let _ = match &c.outcome {
            Ok(r) => writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{},",
                c.attribute.name(),
                c.ccc_a,
                c.ccc_b,
                r.statistic,
                r.p_value,
                r.significant
            ),
            Err(e) => writeln!(out, "{},{:?},{:?},,,false,\"{}\"", c.attribute.name(), c.ccc_a, c.ccc_b, e.replace('"', "'")),
        };
    }
    out
}
