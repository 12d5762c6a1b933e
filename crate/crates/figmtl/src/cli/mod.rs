//! Command-line surface: a flat key-value run configuration (file plus flag
//! overrides, flags win), the six commands, and manifest emission so every
//! run can be replayed byte-for-byte from its manifest alone.

mod commands;

pub use commands::{cmd_attend, cmd_balance, cmd_compare, cmd_kappa, cmd_stats, cmd_train};

use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::evalharness::TTestVariant;
use crate::model::{EncoderConfig, OptimizerConfig, Regime};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// What the CLI prints on stdout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    Json,
    #[default]
    Text,
}

impl OutputFormat {
    pub fn parse(name: &str) -> Option<OutputFormat> {
        match name.to_lowercase().as_str() {
            "json" => Some(OutputFormat::Json),
            "text" => Some(OutputFormat::Text),
            _ => None,
        }
    }
}

/// Every setting a command can consume. Defaults are desk-scale; presets
/// and key-value assignments layer on top.
#[derive(Debug, Clone)]
pub struct RunConfig {
    // Data selection: a dataset path, or "synth" for the generator.
    pub data: Option<String>,
    pub data_format: Option<String>,
    pub synth_size: usize,
    pub synth_rho: f64,
    pub synth_seed: u64,
    /// Expected corpus hash; replays verify it before trusting a run.
    pub corpus_hash: Option<String>,

    pub encoder: EncoderConfig,
    pub optimizer: OptimizerConfig,
    lambda_explicit: bool,

    pub regime: Option<Regime>,
    pub regimes: Vec<Regime>,
    pub lambda_sweep: Vec<f64>,

    pub k: usize,
    pub run_seeds: Option<Vec<u64>>,
    pub variant: TTestVariant,

    pub balance_label: Option<Task>,
    pub balance_ratio: Option<f64>,

    pub sentence: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub compare_checkpoint: Option<PathBuf>,

    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            data_format: None,
            synth_size: 400,
            synth_rho: 0.9,
            synth_seed: 0,
            corpus_hash: None,
            encoder: EncoderConfig::desk(2000),
            optimizer: OptimizerConfig::default(),
            lambda_explicit: false,
            regime: None,
            regimes: Vec::new(),
            lambda_sweep: Vec::new(),
            k: 10,
            run_seeds: None,
            variant: TTestVariant::Paired,
            balance_label: None,
            balance_ratio: None,
            sentence: None,
            checkpoint: None,
            compare_checkpoint: None,
            seed: 0,
            out: PathBuf::from("out"),
            jobs: 1,
            format: OutputFormat::Text,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} value {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

impl RunConfig {
    /// Apply one `key = value` assignment. Unknown keys are configuration
    /// errors, never silently ignored.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "command" => {} // informational, written by manifests
            "preset" => self.apply_preset(value)?,
            "data" => self.data = Some(value.to_string()),
            "data.format" => {
                if !matches!(value, "jsonl" | "csv") {
                    return Err(Error::Config(format!("data.format {value:?} is not jsonl|csv")));
                }
                self.data_format = Some(value.to_string());
            }
            "synth.size" => self.synth_size = parse(key, value)?,
            "synth.rho" => self.synth_rho = parse(key, value)?,
            "synth.seed" => self.synth_seed = parse(key, value)?,
            "corpus.hash" => self.corpus_hash = Some(value.to_string()),
            "encoder.vocab_size" => self.encoder.vocab_size = parse(key, value)?,
            "encoder.d_model" => self.encoder.d_model = parse(key, value)?,
            "encoder.n_heads" => self.encoder.n_heads = parse(key, value)?,
            "encoder.n_layers" => self.encoder.n_layers = parse(key, value)?,
            "encoder.max_len" => self.encoder.max_len = parse(key, value)?,
            "encoder.ffn_dim" => self.encoder.ffn_dim = parse(key, value)?,
            "encoder.dropout" => self.encoder.dropout_rate = parse(key, value)?,
            "train.lr" => self.optimizer.learning_rate = parse(key, value)?,
            "train.epochs" => self.optimizer.epochs = parse(key, value)?,
            "train.batch_size" => self.optimizer.batch_size = parse(key, value)?,
            "train.lambda" => {
                self.optimizer.lambda = parse(key, value)?;
                self.lambda_explicit = true;
            }
            "train.lambda_sweep" => {
                self.lambda_sweep = parse_list(key, value)?;
                self.lambda_explicit = true;
            }
            "train.threshold" => self.optimizer.threshold = parse(key, value)?,
            "train.mean_over_labels" => self.optimizer.mean_over_labels = parse(key, value)?,
            "regime" => {
                self.regime = Some(Regime::parse(value).ok_or_else(|| {
                    Error::Config(format!("unknown regime {value:?}"))
                })?)
            }
            "regimes" => {
                let mut regimes = Vec::new();
                for name in value.split(',') {
                    match name.trim() {
                        // Convenience: plain "stl" means both single-task models.
                        "stl" => {
                            regimes.push(Regime::StlHyperbole);
                            regimes.push(Regime::StlMetaphor);
                        }
                        other => regimes.push(Regime::parse(other).ok_or_else(|| {
                            Error::Config(format!("unknown regime {other:?}"))
                        })?),
                    }
                }
                self.regimes = regimes;
            }
            "eval.k" => self.k = parse(key, value)?,
            "eval.run_seeds" => self.run_seeds = Some(parse_list(key, value)?),
            "eval.variant" => {
                self.variant = TTestVariant::parse(value).ok_or_else(|| {
                    Error::Config(format!("unknown t-test variant {value:?}"))
                })?
            }
            "balance.label" => {
                self.balance_label = Some(match value {
                    "hyperbole" => Task::Hyperbole,
                    "metaphor" => Task::Metaphor,
                    other => {
                        return Err(Error::Config(format!("unknown balance label {other:?}")))
                    }
                })
            }
            "balance.ratio" => self.balance_ratio = Some(parse(key, value)?),
            "balance.preset" => {
                // Published majority/minority ratios of the label-balanced
                // metaphor datasets (1,100/444 and 1,400/634).
                self.balance_ratio = Some(match value {
                    "trofi" => 1100.0 / 444.0,
                    "lcc" => 1400.0 / 634.0,
                    other => {
                        return Err(Error::Config(format!("unknown balance preset {other:?}")))
                    }
                });
                self.balance_label = Some(Task::Hyperbole);
            }
            "attend.sentence" => {
                if value.contains('\n') {
                    return Err(Error::Config("attend.sentence must be a single line".into()));
                }
                self.sentence = Some(value.to_string());
            }
            "attend.checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "attend.compare_checkpoint" => self.compare_checkpoint = Some(PathBuf::from(value)),
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "jobs" => self.jobs = parse::<usize>(key, value)?.max(1),
            "format" => {
                self.format = OutputFormat::parse(value).ok_or_else(|| {
                    Error::Config(format!("unknown output format {value:?} (json|text)"))
                })?
            }
            unknown => return Err(Error::Config(format!("unknown configuration key {unknown:?}"))),
        }
        Ok(())
    }

    /// The named hyperparameter presets for users who slot in a pretrained
    /// encoder later; each also selects its regime.
    fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "hypo-stl" => {
                self.optimizer.learning_rate = 1e-4;
                self.optimizer.epochs = 5;
                self.optimizer.batch_size = 16;
                self.regime = Some(Regime::StlHyperbole);
            }
            "hypo-mtle" => {
                self.optimizer.learning_rate = 1e-5;
                self.optimizer.epochs = 20;
                self.optimizer.batch_size = 32;
                self.optimizer.lambda = 0.5;
                self.regime = Some(Regime::MtlE);
            }
            "hypo-mtlf" => {
                self.optimizer.learning_rate = 1e-5;
                self.optimizer.epochs = 10;
                self.optimizer.batch_size = 16;
                self.regime = Some(Regime::MtlF);
            }
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        }
        Ok(())
    }

    /// Read a flat key-value file: one `key = value` per line, `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let contents = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (idx, line) in contents.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key = value, got {line:?}",
                    path.display(),
                    idx + 1
                ))
            })?;
            self.apply_kv(key, value)?;
        }
        Ok(())
    }

    /// Run seeds for the cross-validation runs: explicit when configured,
    /// otherwise three seeds derived from the master seed.
    pub fn resolved_run_seeds(&self) -> Vec<u64> {
        match &self.run_seeds {
            Some(seeds) => seeds.clone(),
            None => crate::evalharness::derive_run_seeds(self.seed, 3),
        }
    }

    /// λ is only meaningful under the shared-encoder regime; reject
    /// explicit settings anywhere else.
    pub fn validate_lambda_usage(&self) -> Result<()> {
        if !self.lambda_explicit {
            return Ok(());
        }
        let mtle_somewhere = self.regime == Some(Regime::MtlE)
            || self.regimes.contains(&Regime::MtlE);
        if !mtle_somewhere {
            return Err(Error::Config(
                "train.lambda is only legal under the mtl-e regime".into(),
            ));
        }
        Ok(())
    }

    /// Serialize every setting relevant to `command` as a manifest that
    /// replays the run exactly.
    pub fn to_manifest(&self, command: &str, corpus_hash: Option<&str>) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("command", command.to_string());
        if let Some(data) = &self.data {
            kv("data", data.clone());
        }
        if let Some(format) = &self.data_format {
            kv("data.format", format.clone());
        }
        kv("synth.size", self.synth_size.to_string());
        kv("synth.rho", self.synth_rho.to_string());
        kv("synth.seed", self.synth_seed.to_string());
        if let Some(hash) = corpus_hash {
            kv("corpus.hash", hash.to_string());
        }
        kv("encoder.vocab_size", self.encoder.vocab_size.to_string());
        kv("encoder.d_model", self.encoder.d_model.to_string());
        kv("encoder.n_heads", self.encoder.n_heads.to_string());
        kv("encoder.n_layers", self.encoder.n_layers.to_string());
        kv("encoder.max_len", self.encoder.max_len.to_string());
        kv("encoder.ffn_dim", self.encoder.ffn_dim.to_string());
        kv("encoder.dropout", self.encoder.dropout_rate.to_string());
        kv("train.lr", self.optimizer.learning_rate.to_string());
        kv("train.epochs", self.optimizer.epochs.to_string());
        kv("train.batch_size", self.optimizer.batch_size.to_string());
        if self.lambda_explicit {
            kv("train.lambda", self.optimizer.lambda.to_string());
        }
        if !self.lambda_sweep.is_empty() {
            kv(
                "train.lambda_sweep",
                self.lambda_sweep.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            );
        }
        kv("train.threshold", self.optimizer.threshold.to_string());
        kv("train.mean_over_labels", self.optimizer.mean_over_labels.to_string());
        if let Some(regime) = self.regime {
            kv("regime", regime.name().to_string());
        }
        if !self.regimes.is_empty() {
            kv(
                "regimes",
                self.regimes.iter().map(|r| r.name().to_string()).collect::<Vec<_>>().join(","),
            );
        }
        kv("eval.k", self.k.to_string());
        kv(
            "eval.run_seeds",
            self.resolved_run_seeds().iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        kv("eval.variant", self.variant.name().to_string());
        if let Some(label) = self.balance_label {
            kv("balance.label", label.name().to_string());
        }
        if let Some(ratio) = self.balance_ratio {
            kv("balance.ratio", ratio.to_string());
        }
        if let Some(sentence) = &self.sentence {
            kv("attend.sentence", sentence.clone());
        }
        if let Some(path) = &self.checkpoint {
            kv("attend.checkpoint", path.display().to_string());
        }
        if let Some(path) = &self.compare_checkpoint {
            kv("attend.compare_checkpoint", path.display().to_string());
        }
        // `jobs` and `out` are execution details, not run identity: replays
        // may use any thread count or output directory and still reproduce
        // every artifact byte-for-byte.
        kv("seed", self.seed.to_string());
        out
    }
}
