use super::metrics::EvalMetrics;
use super::train::{evaluate, train_classifier, ClassifierConfig};
use crate::dataset::LabeledSlice;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionName {
    NoDa,
    ClassicalDa,
    GanDa,
    CombinedDa,
}

impl ConditionName {
    pub const ALL: [ConditionName; 4] = [
        ConditionName::NoDa,
        ConditionName::ClassicalDa,
        ConditionName::GanDa,
        ConditionName::CombinedDa,
    ];

    pub fn needs_classical(self) -> bool {
        matches!(self, ConditionName::ClassicalDa | ConditionName::CombinedDa)
    }

    pub fn needs_gan(self) -> bool {
        matches!(self, ConditionName::GanDa | ConditionName::CombinedDa)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionName::NoDa => "no_da",
            ConditionName::ClassicalDa => "classical_da",
            ConditionName::GanDa => "gan_da",
            ConditionName::CombinedDa => "combined_da",
        }
    }
}

impl fmt::Display for ConditionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ConditionName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown condition {s:?}")))
    }
}

/// One grid row's training-set recipe: real training slices plus the
/// pools the condition calls for.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentCondition<'a> {
    pub name: ConditionName,
    pub classical_pool: Option<&'a [LabeledSlice]>,
    pub gan_pool: Option<&'a [LabeledSlice]>,
}

impl<'a> ExperimentCondition<'a> {
    /// Attaches exactly the pools `name` requires.
    pub fn resolve(name: ConditionName, classical: Option<&'a [LabeledSlice]>, gan: Option<&'a [LabeledSlice]>) -> Self {
        ExperimentCondition {
            name,
            classical_pool: classical.filter(|_| name.needs_classical()),
            gan_pool: gan.filter(|_| name.needs_gan()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |needed: bool, pool: Option<&[LabeledSlice]>, what: &str| {
            match (needed, pool) {
                (true, None) => Err(Error::InvalidArgument(format!("{} requires a {what} pool", self.name))),
                (true, Some(p)) if p.is_empty() => {
                    Err(Error::InvalidArgument(format!("{} has an empty {what} pool", self.name)))
                }
                (false, Some(_)) => Err(Error::InvalidArgument(format!("{} takes no {what} pool", self.name))),
                _ => Ok(()),
            }
        };
        check(self.name.needs_classical(), self.classical_pool, "classical")?;
        check(self.name.needs_gan(), self.gan_pool, "GAN")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridData<'a> {
    pub train: &'a [LabeledSlice],
    pub val: &'a [LabeledSlice],
    pub test: &'a [LabeledSlice],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub condition: ConditionName,
    pub real_count: usize,
    pub classical_count: usize,
    pub gan_count: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_accuracy: f64,
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

#[derive(Serialize)]
struct CsvRow {
    condition: ConditionName,
    accuracy: String,
    sensitivity: String,
    specificity: String,
    tp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    tn: usize,
    fp: usize,
    real_count: usize,
    classical_count: usize,
    gan_count: usize,
    best_epoch: usize,
}

impl GridReport {
    /// Percentages with two decimals, one row per condition.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            let (a, se, sp) = r.metrics.percentages();
            w.serialize(CsvRow {
                condition: r.condition,
                accuracy: format!("{a:.2}"),
                sensitivity: format!("{se:.2}"),
                specificity: format!("{sp:.2}"),
                tp: r.metrics.tp,
                fn_: r.metrics.fn_,
                tn: r.metrics.tn,
                fp: r.metrics.fp,
                real_count: r.real_count,
                classical_count: r.classical_count,
                gan_count: r.gan_count,
                best_epoch: r.best_epoch,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Plain-text table of accuracy, sensitivity and specificity.
    pub fn render(&self) -> String {
        let mut s = format!("{:<14}{:>10}{:>13}{:>13}\n", "condition", "accuracy", "sensitivity", "specificity");
        for r in &self.rows {
            let (a, se, sp) = r.metrics.percentages();
            s += &format!("{:<14}{:>9.2}%{:>12.2}%{:>12.2}%\n", r.condition.as_str(), a, se, sp);
        }
        s
    }
}

/// Trains one classifier per condition from identical initial weights and
/// evaluates each on the shared real test split. Conditions run in
/// parallel; each is deterministic on its own.
pub fn run_experiment_grid(
    conditions: &[ExperimentCondition<'_>],
    data: &GridData<'_>,
    cfg: &ClassifierConfig,
) -> Result<GridReport> {
    if conditions.is_empty() {
        return Err(Error::InvalidArgument("no conditions given".into()));
    }
    for c in conditions {
        c.validate()?;
    }
    let rows = conditions
        .par_iter()
        .map(|c| {
            let classical = c.classical_pool.unwrap_or(&[]);
            let gan = c.gan_pool.unwrap_or(&[]);
            let train: Vec<LabeledSlice> = data
                .train
                .iter()
                .chain(classical)
                .chain(gan)
                .cloned()
                .collect();
            let model = train_classifier(cfg, &train, data.val)?;
            let metrics = evaluate(&model, data.test)?;
            log::info!("{}: accuracy {:.4}", c.name, metrics.accuracy);
            Ok(GridRow {
                condition: c.name,
                real_count: data.train.len(),
                classical_count: classical.len(),
                gan_count: gan.len(),
                best_epoch: model.best_epoch,
                epochs_run: model.log.len(),
                best_val_accuracy: model.best_val_accuracy,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridReport { rows })
}
