//! Stratified k-fold cross-validation over multiple runs, positive-class
//! precision/recall/F1, and the regime-comparison experiment driver.

mod report;
mod stats;

pub use report::{Aggregate, ComparisonReport, FoldFailure, FoldRecord, SignificanceEntry};
pub use stats::{incomplete_beta, student_t_two_tailed_p, t_test, SignificanceResult, TTestVariant};

use crate::corpus::tokenizer::{tokenize, Vocabulary};
use crate::corpus::{LabeledSentence, Task};
use crate::error::{Error, Result};
use crate::model::{
    predict_mtle, predict_mtlf, predict_stl, train, EncoderConfig, ModelParams, OptimizerConfig,
    Regime,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;

// ── Fold construction ───────────────────────────────────────────────────

/// One run's fold assignment: `folds[row] = fold index`.
#[derive(Debug, Clone, Serialize)]
pub struct FoldAssignment {
    pub seed: u64,
    pub k: usize,
    pub folds: Vec<usize>,
    pub warnings: Vec<String>,
}

impl FoldAssignment {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }

    /// The id → fold view of the assignment.
    pub fn fold_map<'a>(&self, dataset: &'a [LabeledSentence]) -> HashMap<&'a str, usize> {
        dataset
            .iter()
            .zip(&self.folds)
            .map(|(s, &f)| (s.id.as_str(), f))
            .collect()
    }
}

/// Fold assignments for every run of an experiment.
#[derive(Debug, Clone, Serialize)]
pub struct FoldPlan {
    pub k: usize,
    pub run_seeds: Vec<u64>,
    pub runs: Vec<FoldAssignment>,
}

impl FoldPlan {
    pub fn build(dataset: &[LabeledSentence], k: usize, run_seeds: &[u64]) -> Result<FoldPlan> {
        let runs = run_seeds
            .iter()
            .map(|&seed| make_folds(dataset, k, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(FoldPlan { k, run_seeds: run_seeds.to_vec(), runs })
    }
}

fn strata_keys(dataset: &[LabeledSentence], k: usize) -> (Vec<usize>, Vec<String>) {
    let mut warnings = Vec::new();
    let all_joint = dataset.iter().all(|s| s.hyperbole.is_some() && s.metaphor.is_some());
    if all_joint {
        let mut counts = [0usize; 4];
        let keys: Vec<usize> = dataset
            .iter()
            .map(|s| crate::corpus::quadrant_of(s).expect("labels checked"))
            .collect();
        for &q in &keys {
            counts[q] += 1;
        }
        if counts.iter().all(|&c| c >= k) {
            return (keys, warnings);
        }
        warnings.push(format!(
            "a joint-label quadrant has fewer than {k} members; stratifying on the hyperbole label only"
        ));
        return (
            dataset.iter().map(|s| s.hyperbole.expect("labels checked") as usize).collect(),
            warnings,
        );
    }
    if dataset.iter().all(|s| s.hyperbole.is_some()) {
        return (dataset.iter().map(|s| s.hyperbole.unwrap() as usize).collect(), warnings);
    }
    if dataset.iter().all(|s| s.metaphor.is_some()) {
        return (dataset.iter().map(|s| s.metaphor.unwrap() as usize).collect(), warnings);
    }
    warnings.push("rows disagree on which labels are present; folds are unstratified".into());
    (vec![0; dataset.len()], warnings)
}

/// Deterministic stratified fold assignment for one run. Strata are dealt
/// round-robin after a seeded shuffle, with a rotating start fold so strata
/// remainders do not pile onto fold 0; per fold, each stratum's count is
/// within one of its ideal share.
pub fn make_folds(dataset: &[LabeledSentence], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::Config("fold count must be positive".into()));
    }
    if k > dataset.len() {
        return Err(Error::Config(format!(
            "fold count {k} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let (keys, warnings) = strata_keys(dataset, k);
    let n_strata = keys.iter().copied().max().unwrap_or(0) + 1;
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); n_strata];
    for (row, &key) in keys.iter().enumerate() {
        strata[key].push(row);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut folds = vec![0usize; dataset.len()];
    let mut dealt = 0usize;
    for members in &mut strata {
        members.shuffle(&mut rng);
        for (j, &row) in members.iter().enumerate() {
            folds[row] = (dealt + j) % k;
        }
        dealt += members.len();
    }
    Ok(FoldAssignment { seed, k, folds, warnings })
}

// ── Precision / recall / F1 ─────────────────────────────────────────────

/// Positive-class metrics with pinned zero-division conventions: no
/// predicted positives ⇒ P = 0, no gold positives ⇒ R = 0, P + R = 0 ⇒
/// F1 = 0, each raising a diagnostics flag instead of a NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub no_predicted_positives: bool,
    pub no_gold_positives: bool,
}

pub fn prf(predictions: &[u8], gold: &[u8]) -> Result<PrfScores> {
    if predictions.is_empty() || predictions.len() != gold.len() {
        return Err(Error::Contract(format!(
            "prf needs equal nonempty lengths, got {} and {}",
            predictions.len(),
            gold.len()
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in predictions.iter().zip(gold) {
        if p > 1 || g > 1 {
            return Err(Error::Contract("prf labels must be bits".into()));
        }
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let no_predicted_positives = tp + fp == 0;
    let no_gold_positives = tp + fn_ == 0;
    let precision = if no_predicted_positives { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if no_gold_positives { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PrfScores { precision, recall, f1, no_predicted_positives, no_gold_positives })
}

// ── Experiment driver ───────────────────────────────────────────────────

/// Cross-validated comparison setup. `run_seeds` defines the runs (fold
/// assignment, init, batch order, dropout all derive from them); training
/// jobs are independent and may execute on `jobs` threads without changing
/// any output.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub k: usize,
    pub run_seeds: Vec<u64>,
    pub encoder: EncoderConfig,
    pub optimizer: OptimizerConfig,
    pub variant: TTestVariant,
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn new(encoder: EncoderConfig) -> Self {
        ExperimentConfig {
            k: 10,
            run_seeds: vec![1, 2, 3],
            encoder,
            optimizer: OptimizerConfig::default(),
            variant: TTestVariant::Paired,
            jobs: 1,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Expand one master seed into per-run seeds; "three different runs" means
/// three full re-randomizations of folds, init, batch order, and dropout.
pub fn derive_run_seeds(master: u64, count: usize) -> Vec<u64> {
    (1..=count as u64).map(|i| splitmix64(master ^ i)).collect()
}

fn regime_tag(regime: Regime) -> u64 {
    match regime {
        Regime::StlHyperbole => 1,
        Regime::StlMetaphor => 2,
        Regime::MtlE => 3,
        Regime::MtlF => 4,
    }
}

/// Per-job seed: a stable mix of the run seed, fold, and regime.
fn job_seed(run_seed: u64, fold: usize, regime: Regime) -> u64 {
    splitmix64(splitmix64(splitmix64(run_seed) ^ fold as u64) ^ regime_tag(regime))
}

struct JobResult {
    run: usize,
    fold: usize,
    regime: Regime,
    outcome: std::result::Result<Vec<(Task, PrfScores)>, String>,
}

fn run_job(
    dataset: &[LabeledSentence],
    vocab: &Vocabulary,
    assignment: &FoldAssignment,
    run: usize,
    fold: usize,
    regime: Regime,
    config: &ExperimentConfig,
) -> JobResult {
    let outcome = (|| -> Result<Vec<(Task, PrfScores)>> {
        let train_rows = assignment.train_rows(fold);
        let test_rows = assignment.test_rows(fold);
        let train_set: Vec<LabeledSentence> =
            train_rows.iter().map(|&i| dataset[i].clone()).collect();

        let seed = job_seed(assignment.seed, fold, regime);
        let params = ModelParams::init(config.encoder.clone(), regime, seed)?;
        let mut optimizer = config.optimizer.clone();
        optimizer.seed = seed;
        let (trained, _trace) = train(params, &train_set, vocab, &optimizer)?;

        let max_len = config.encoder.max_len;
        let mut per_task: Vec<(Task, Vec<u8>, Vec<u8>)> = regime
            .tasks()
            .iter()
            .map(|&t| (t, Vec::new(), Vec::new()))
            .collect();
        for &row in &test_rows {
            let sentence = &dataset[row];
            let tokens = tokenize(vocab, &sentence.text, max_len);
            let decoded: Vec<(Task, u8)> = match regime {
                Regime::StlHyperbole => {
                    vec![(Task::Hyperbole, predict_stl(&trained, &tokens)?.decode())]
                }
                Regime::StlMetaphor => {
                    vec![(Task::Metaphor, predict_stl(&trained, &tokens)?.decode())]
                }
                Regime::MtlE => {
                    let (h, m) = predict_mtle(&trained, &tokens)?;
                    vec![(Task::Hyperbole, h.decode()), (Task::Metaphor, m.decode())]
                }
                Regime::MtlF => {
                    let p = predict_mtlf(&trained, &tokens, optimizer.threshold)?;
                    vec![(Task::Hyperbole, p.labels.0), (Task::Metaphor, p.labels.1)]
                }
            };
            for (task, bit) in decoded {
                let slot = per_task.iter_mut().find(|(t, _, _)| *t == task).expect("task slot");
                slot.1.push(bit);
                slot.2.push(task.label_of(sentence).ok_or_else(|| {
                    Error::Data(format!("row {} is missing the {task} label", sentence.id))
                })?);
            }
        }
        per_task
            .into_iter()
            .map(|(task, pred, gold)| Ok((task, prf(&pred, &gold)?)))
            .collect()
    })();
    JobResult {
        run,
        fold,
        regime,
        outcome: outcome.map_err(|e| e.to_string()),
    }
}

/// Train and evaluate every requested regime under the shared fold plan and
/// assemble the comparison report. Deterministic for a given config
/// regardless of `jobs`.
pub fn run_experiment(
    dataset: &[LabeledSentence],
    regimes: &[Regime],
    config: &ExperimentConfig,
) -> Result<ComparisonReport> {
    if regimes.is_empty() {
        return Err(Error::Config("no regimes requested".into()));
    }
    for regime in regimes {
        for task in regime.tasks() {
            if let Some(bad) = dataset.iter().find(|s| task.label_of(s).is_none()) {
                return Err(Error::Data(format!(
                    "row {} is missing the {task} label required by {regime}",
                    bad.id
                )));
            }
        }
    }
    let mut vocab_config = config.encoder.clone();
    let vocab = Vocabulary::build(
        dataset.iter().map(|s| s.text.as_str()),
        config.encoder.vocab_size,
    );
    vocab_config.vocab_size = vocab.len();
    let effective = ExperimentConfig { encoder: vocab_config, ..config.clone() };

    let plan = FoldPlan::build(dataset, effective.k, &effective.run_seeds)?;

    let mut jobs = Vec::new();
    for (run, assignment) in plan.runs.iter().enumerate() {
        for &regime in regimes {
            for fold in 0..effective.k {
                jobs.push((run, assignment, regime, fold));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(effective.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    let results: Vec<JobResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(run, assignment, regime, fold)| {
                run_job(dataset, &vocab, assignment, run, fold, regime, &effective)
            })
            .collect()
    });

    Ok(report::assemble(
        results
            .into_iter()
            .map(|r| report::RawCell {
                run: r.run,
                fold: r.fold,
                regime: r.regime,
                outcome: r.outcome,
            })
            .collect(),
        regimes,
        effective.k,
        plan.run_seeds.len(),
        effective.variant,
    ))
}

/// Re-run the experiment once per λ value; the shared-encoder regime is the
/// only one that reads λ, but full reports make the sweep comparable.
pub fn lambda_sweep(
    dataset: &[LabeledSentence],
    regimes: &[Regime],
    config: &ExperimentConfig,
    lambdas: &[f64],
) -> Result<Vec<(f64, ComparisonReport)>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let mut swept = config.clone();
            swept.optimizer.lambda = lambda;
            Ok((lambda, run_experiment(dataset, regimes, &swept)?))
        })
        .collect()
}
