//! Comparison-report assembly and rendering: JSON, an aligned text table,
//! and a per-fold CSV dump.

use super::stats::{t_test, SignificanceResult, TTestVariant};
use super::PrfScores;
use crate::corpus::Task;
use crate::error::Result;
use crate::model::Regime;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// One (run, fold, regime, task) evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct FoldRecord {
    pub run: usize,
    pub fold: usize,
    pub regime: Regime,
    pub task: Task,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A training job that failed; the experiment continues without it.
#[derive(Debug, Clone, Serialize)]
pub struct FoldFailure {
    pub run: usize,
    pub fold: usize,
    pub regime: Regime,
    pub message: String,
}

/// Mean metrics per (regime, task) over all successful cells.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub regime: Regime,
    pub task: Task,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub n: usize,
}

/// Significance of a contender regime over the task's single-task baseline,
/// paired on matched (run, fold) cells.
#[derive(Debug, Clone, Serialize)]
pub struct SignificanceEntry {
    pub task: Task,
    pub baseline: Regime,
    pub contender: Regime,
    pub result: SignificanceResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub k: usize,
    pub runs: usize,
    pub regimes: Vec<Regime>,
    pub records: Vec<FoldRecord>,
    pub failures: Vec<FoldFailure>,
    pub aggregates: Vec<Aggregate>,
    pub significance: Vec<SignificanceEntry>,
}

pub(super) struct RawCell {
    pub run: usize,
    pub fold: usize,
    pub regime: Regime,
    pub outcome: std::result::Result<Vec<(Task, PrfScores)>, String>,
}

fn stl_for(task: Task) -> Regime {
    match task {
        Task::Hyperbole => Regime::StlHyperbole,
        Task::Metaphor => Regime::StlMetaphor,
    }
}

pub(super) fn assemble(
    cells: Vec<RawCell>,
    regimes: &[Regime],
    k: usize,
    runs: usize,
    variant: TTestVariant,
) -> ComparisonReport {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for cell in cells {
        match cell.outcome {
            Ok(scores) => {
                for (task, s) in scores {
                    records.push(FoldRecord {
                        run: cell.run,
                        fold: cell.fold,
                        regime: cell.regime,
                        task,
                        precision: s.precision,
                        recall: s.recall,
                        f1: s.f1,
                    });
                }
            }
            Err(message) => failures.push(FoldFailure {
                run: cell.run,
                fold: cell.fold,
                regime: cell.regime,
                message,
            }),
        }
    }
    records.sort_by_key(|r| (r.run, r.fold, r.regime.name(), r.task.name()));

    // Aggregates in (task, regime-order) blocks.
    let mut aggregates = Vec::new();
    for task in [Task::Hyperbole, Task::Metaphor] {
        for &regime in regimes {
            let rows: Vec<&FoldRecord> = records
                .iter()
                .filter(|r| r.regime == regime && r.task == task)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let n = rows.len();
            let mean = |f: &dyn Fn(&FoldRecord) -> f64| {
                rows.iter().map(|r| f(r)).sum::<f64>() / n as f64
            };
            let mean_f1 = mean(&|r| r.f1);
            let var_f1 = if n > 1 {
                rows.iter().map(|r| (r.f1 - mean_f1) * (r.f1 - mean_f1)).sum::<f64>()
                    / (n - 1) as f64
            } else {
                0.0
            };
            aggregates.push(Aggregate {
                regime,
                task,
                mean_precision: mean(&|r| r.precision),
                mean_recall: mean(&|r| r.recall),
                mean_f1,
                std_f1: var_f1.sqrt(),
                n,
            });
        }
    }

    // Paired significance per task: STL baseline against each multi-task
    // regime, matched on (run, fold).
    let mut significance = Vec::new();
    for task in [Task::Hyperbole, Task::Metaphor] {
        let baseline = stl_for(task);
        if !regimes.contains(&baseline) {
            continue;
        }
        for &contender in regimes.iter().filter(|r| r.is_multi_task()) {
            let mut by_cell: BTreeMap<(usize, usize), (Option<f64>, Option<f64>)> = BTreeMap::new();
            for r in records.iter().filter(|r| r.task == task) {
                let entry = by_cell.entry((r.run, r.fold)).or_default();
                if r.regime == baseline {
                    entry.0 = Some(r.f1);
                } else if r.regime == contender {
                    entry.1 = Some(r.f1);
                }
            }
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (base, cont) in by_cell.values() {
                if let (Some(x), Some(y)) = (base, cont) {
                    a.push(*x);
                    b.push(*y);
                }
            }
            if a.len() >= 2 {
                if let Ok(result) = t_test(&a, &b, variant) {
                    significance.push(SignificanceEntry { task, baseline, contender, result });
                }
            }
        }
    }

    ComparisonReport {
        k,
        runs,
        regimes: regimes.to_vec(),
        records,
        failures,
        aggregates,
        significance,
    }
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table, one block per task, plus significance
    /// lines.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}-fold cross-validation over {} runs ({} scores per cell)",
            self.k,
            self.runs,
            self.k * self.runs
        );
        let _ = writeln!(
            out,
            "{:<10} {:<8} {:>9} {:>9} {:>9} {:>8} {:>4}",
            "task", "regime", "precision", "recall", "f1", "std(f1)", "n"
        );
        for agg in &self.aggregates {
            let _ = writeln!(
                out,
                "{:<10} {:<8} {:>9.3} {:>9.3} {:>9.3} {:>8.3} {:>4}",
                agg.task.name(),
                agg.regime.name(),
                agg.mean_precision,
                agg.mean_recall,
                agg.mean_f1,
                agg.std_f1,
                agg.n
            );
        }
        for entry in &self.significance {
            let r = &entry.result;
            let _ = writeln!(
                out,
                "significance [{}] {} vs {}: t={:.4} df={} p={} ({})",
                entry.task.name(),
                entry.baseline.name(),
                entry.contender.name(),
                r.t_statistic,
                r.degrees_of_freedom,
                r.p_display(),
                r.variant.name()
            );
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "failed cells: {}", self.failures.len());
            for f in &self.failures {
                let _ = writeln!(
                    out,
                    "  run {} fold {} {}: {}",
                    f.run,
                    f.fold,
                    f.regime.name(),
                    f.message
                );
            }
        }
        out
    }

    /// `run,fold,regime,task,precision,recall,f1` rows.
    pub fn per_fold_csv(&self) -> String {
        let mut out = String::from("run,fold,regime,task,precision,recall,f1\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.run,
                r.fold,
                r.regime.name(),
                r.task.name(),
                r.precision,
                r.recall,
                r.f1
            );
        }
        out
    }

    pub fn aggregate_for(&self, regime: Regime, task: Task) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.regime == regime && a.task == task)
    }
}
