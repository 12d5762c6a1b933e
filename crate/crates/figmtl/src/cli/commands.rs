//! The six commands. Each one loads its inputs, runs the owning module,
//! writes its outputs plus a replayable manifest under the output
//! directory, and prints a summary in the requested format. Input files are
//! never modified.

use super::{OutputFormat, RunConfig};
use crate::agreement::{agreement_report, AgreementTable};
use crate::attnprobe::{cls_salience, compare_salience, SalienceMap};
use crate::corpus::{
    self, balance, corpus_hash, quadrant_stats, synth_corpus, FileFormat, KnownDataset,
    LabeledSentence, SynthSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::evalharness::{lambda_sweep, run_experiment, ComparisonReport, ExperimentConfig};
use crate::model::{
    load_checkpoint, save_checkpoint, train, Checkpoint, ModelParams,
};
use std::path::{Path, PathBuf};

fn ensure_out(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out)?;
    Ok(())
}

fn write_out(config: &RunConfig, name: &str, contents: &str) -> Result<PathBuf> {
    let path = config.out.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn data_format(config: &RunConfig, path: &Path) -> FileFormat {
    match config.data_format.as_deref() {
        Some("csv") => FileFormat::Csv,
        Some("jsonl") => FileFormat::Jsonl,
        _ => FileFormat::from_path(path),
    }
}

/// Load the configured dataset (file or synthetic), report rejected rows on
/// stderr, and verify the corpus hash against a manifest's expectation.
fn load_dataset(config: &RunConfig) -> Result<(Vec<LabeledSentence>, String)> {
    let spec = config
        .data
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset: pass --data PATH or --data synth".into()))?;
    let sentences = if spec == "synth" {
        synth_corpus(&SynthSpec::default(), config.synth_rho, config.synth_size, config.synth_seed)?
    } else {
        let path = Path::new(spec);
        let report = corpus::load(path, data_format(config, path))?;
        for err in &report.row_errors {
            eprintln!("warning: {}:{}: {}", path.display(), err.line, err.message);
        }
        report.sentences
    };
    let hash = corpus_hash(&sentences)?;
    if let Some(expected) = &config.corpus_hash {
        if expected != &hash {
            return Err(Error::Data(format!(
                "corpus hash {hash} does not match the manifest's {expected}; the input changed"
            )));
        }
    }
    Ok((sentences, hash))
}

fn build_vocab(config: &RunConfig, dataset: &[LabeledSentence]) -> (Vocabulary, crate::model::EncoderConfig) {
    let vocab = Vocabulary::build(dataset.iter().map(|s| s.text.as_str()), config.encoder.vocab_size);
    let mut encoder = config.encoder.clone();
    encoder.vocab_size = vocab.len();
    (vocab, encoder)
}

/// Train one model and write checkpoint, loss trace, and manifest.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let regime = config
        .regime
        .ok_or_else(|| Error::Config("no regime: pass --regime or a preset".into()))?;
    config.validate_lambda_usage()?;
    ensure_out(config)?;
    let (dataset, hash) = load_dataset(config)?;
    let (vocab, encoder) = build_vocab(config, &dataset);

    let params = ModelParams::init(encoder, regime, config.seed)?;
    let mut optimizer = config.optimizer.clone();
    optimizer.seed = config.seed;
    let (trained, trace) = train(params, &dataset, &vocab, &optimizer)?;

    let checkpoint = Checkpoint::new(trained, vocab);
    let checkpoint_path = config.out.join("checkpoint.json");
    save_checkpoint(&checkpoint_path, &checkpoint)?;
    write_out(config, "loss_trace.json", &serde_json::to_string_pretty(&trace)?)?;
    write_out(config, "manifest.cfg", &config.to_manifest("train", Some(&hash)))?;

    let final_loss = trace.per_epoch.last().copied().unwrap_or(f64::NAN);
    match config.format {
        OutputFormat::Text => {
            println!(
                "trained {regime} on {} sentences for {} epochs; final loss {final_loss:.6}",
                dataset.len(),
                optimizer.epochs
            );
            println!("checkpoint: {}", checkpoint_path.display());
        }
        OutputFormat::Json => {
            println!(
                "{}",
                serde_json::json!({
                    "regime": regime.name(),
                    "sentences": dataset.len(),
                    "epochs": optimizer.epochs,
                    "final_loss": final_loss,
                    "checkpoint": checkpoint_path.display().to_string(),
                    "corpus_hash": hash,
                })
            );
        }
    }
    Ok(())
}

fn write_report(config: &RunConfig, report: &ComparisonReport, stem: &str) -> Result<()> {
    write_out(config, &format!("{stem}.json"), &report.to_json()?)?;
    write_out(config, &format!("{stem}.txt"), &report.render_text())?;
    write_out(config, &format!("{stem}_folds.csv"), &report.per_fold_csv())?;
    Ok(())
}

fn print_report(config: &RunConfig, report: &ComparisonReport) -> Result<()> {
    match config.format {
        OutputFormat::Text => print!("{}", report.render_text()),
        OutputFormat::Json => println!("{}", report.to_json()?),
    }
    Ok(())
}

/// Cross-validated regime comparison; one report, or one per λ when a sweep
/// is configured.
pub fn cmd_compare(config: &RunConfig) -> Result<()> {
    if config.regimes.is_empty() {
        return Err(Error::Config("no regimes: pass --regimes, e.g. stl,mtl-f".into()));
    }
    config.validate_lambda_usage()?;
    ensure_out(config)?;
    let (dataset, hash) = load_dataset(config)?;
    let (_, encoder) = build_vocab(config, &dataset);

    let mut experiment = ExperimentConfig::new(encoder);
    experiment.k = config.k;
    experiment.run_seeds = config.resolved_run_seeds();
    experiment.optimizer = config.optimizer.clone();
    experiment.variant = config.variant;
    experiment.jobs = config.jobs;

    if config.lambda_sweep.is_empty() {
        let report = run_experiment(&dataset, &config.regimes, &experiment)?;
        write_report(config, &report, "report")?;
        print_report(config, &report)?;
    } else {
        let sweep = lambda_sweep(&dataset, &config.regimes, &experiment, &config.lambda_sweep)?;
        for (lambda, report) in &sweep {
            write_report(config, report, &format!("report_lambda{lambda}"))?;
            if config.format == OutputFormat::Text {
                println!("lambda = {lambda}");
            }
            print_report(config, report)?;
        }
    }
    write_out(config, "manifest.cfg", &config.to_manifest("compare", Some(&hash)))?;
    Ok(())
}

/// Downsample the majority class and write the balanced JSONL.
pub fn cmd_balance(config: &RunConfig) -> Result<()> {
    let label = config
        .balance_label
        .ok_or_else(|| Error::Config("no label: pass --label hyperbole|metaphor".into()))?;
    let ratio = config
        .balance_ratio
        .ok_or_else(|| Error::Config("no ratio: pass --ratio or --preset trofi|lcc".into()))?;
    ensure_out(config)?;
    let (dataset, hash) = load_dataset(config)?;
    let balanced = balance(&dataset, label, ratio, config.seed)?;

    let out_path = config.out.join("balanced.jsonl");
    corpus::save(&out_path, &balanced)?;
    write_out(config, "manifest.cfg", &config.to_manifest("balance", Some(&hash)))?;

    let count = |rows: &[LabeledSentence], want: u8| {
        rows.iter().filter(|s| label.label_of(s) == Some(want)).count()
    };
    match config.format {
        OutputFormat::Text => {
            println!(
                "balanced on {label}: {} positive / {} negative -> {} positive / {} negative",
                count(&dataset, 1),
                count(&dataset, 0),
                count(&balanced, 1),
                count(&balanced, 0)
            );
            println!("wrote {}", out_path.display());
        }
        OutputFormat::Json => println!(
            "{}",
            serde_json::json!({
                "label": label.name(),
                "ratio": ratio,
                "before": {"positive": count(&dataset, 1), "negative": count(&dataset, 0)},
                "after": {"positive": count(&balanced, 1), "negative": count(&balanced, 0)},
                "output": out_path.display().to_string(),
            })
        ),
    }
    Ok(())
}

/// Inter-annotator agreement from an `item_id,annotator_id,label` CSV.
pub fn cmd_kappa(config: &RunConfig) -> Result<()> {
    let spec = config
        .data
        .as_deref()
        .ok_or_else(|| Error::Config("no annotations: pass --data FILE.csv".into()))?;
    ensure_out(config)?;
    let file = std::fs::File::open(spec)
        .map_err(|e| Error::Data(format!("cannot open {spec}: {e}")))?;
    let table = AgreementTable::from_csv(file)?;
    let report = agreement_report(&table)?;

    write_out(config, "agreement.json", &serde_json::to_string_pretty(&report)?)?;
    write_out(config, "manifest.cfg", &config.to_manifest("kappa", None))?;

    match config.format {
        OutputFormat::Text => {
            println!("pairwise Cohen's kappa:");
            for entry in &report.pairwise {
                match entry.kappa {
                    Some(k) => println!(
                        "  {} vs {}: {k:.3} ({}) over {} items",
                        entry.annotator_a,
                        entry.annotator_b,
                        entry.band.as_deref().unwrap_or("-"),
                        entry.overlap
                    ),
                    None => println!(
                        "  {} vs {}: no overlapping items",
                        entry.annotator_a, entry.annotator_b
                    ),
                }
            }
            if let Some(fleiss) = &report.fleiss {
                println!(
                    "Fleiss' kappa: {:.3} ({}) over {} items ({} dropped)",
                    fleiss.kappa,
                    report.fleiss_band.as_deref().unwrap_or("-"),
                    fleiss.items_used,
                    fleiss.items_dropped
                );
            }
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
        }
        OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

/// CLS salience for one sentence from a trained checkpoint, optionally
/// compared against a second checkpoint.
pub fn cmd_attend(config: &RunConfig) -> Result<()> {
    let checkpoint_path = config
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("no checkpoint: pass --checkpoint FILE".into()))?;
    let sentence = config
        .sentence
        .as_deref()
        .ok_or_else(|| Error::Config("no sentence: pass --sentence TEXT".into()))?;
    ensure_out(config)?;

    let probe = |path: &Path| -> Result<SalienceMap> {
        let checkpoint = load_checkpoint(path)?;
        let tokens = corpus::tokenize(
            &checkpoint.vocabulary,
            sentence,
            checkpoint.params.config.max_len,
        );
        cls_salience(&checkpoint.params, &tokens, checkpoint.params.regime.name(), "sentence")
    };

    let map = probe(checkpoint_path)?;
    if let Some(other) = config.compare_checkpoint.as_deref() {
        let other_map = probe(other)?;
        let comparison = compare_salience(&map, &other_map)?;
        write_out(config, "salience.json", &comparison.to_json()?)?;
        write_out(config, "salience.html", &comparison.render_html())?;
        match config.format {
            OutputFormat::Text => print!("{}", comparison.render_text()),
            OutputFormat::Json => println!("{}", comparison.to_json()?),
        }
    } else {
        write_out(config, "salience.json", &map.to_json()?)?;
        write_out(config, "salience.html", &map.render_html())?;
        match config.format {
            OutputFormat::Text => print!("{}", map.render_text()),
            OutputFormat::Json => println!("{}", map.to_json()?),
        }
    }
    write_out(config, "manifest.cfg", &config.to_manifest("attend", None))?;
    Ok(())
}

/// Joint-label quadrant counts, checked against the published tables when
/// the rows come from a known dataset.
pub fn cmd_stats(config: &RunConfig) -> Result<()> {
    ensure_out(config)?;
    let (dataset, hash) = load_dataset(config)?;
    let stats = quadrant_stats(&dataset)?;

    let known = dataset
        .first()
        .and_then(|s| KnownDataset::parse(&s.source))
        .filter(|_| {
            dataset.iter().all(|s| s.source == dataset[0].source)
        });
    let reference_check = known.map(|ds| corpus::check_reference(&stats, ds));

    let payload = serde_json::json!({
        "quadrants": stats,
        "corpus_hash": hash,
        "reference": reference_check,
    });
    write_out(config, "stats.json", &serde_json::to_string_pretty(&payload)?)?;
    write_out(config, "manifest.cfg", &config.to_manifest("stats", Some(&hash)))?;

    match config.format {
        OutputFormat::Text => {
            println!(
                "hyperbole+metaphor: {}\nhyperbole only:     {}\nmetaphor only:      {}\nneither:            {}\ntotal:              {}",
                stats.both, stats.hyperbole_only, stats.metaphor_only, stats.neither, stats.total
            );
            if let Some(check) = &reference_check {
                println!(
                    "reference {}: {}",
                    check.dataset,
                    if check.matches { "counts match the published table" } else { "counts DIFFER from the published table" }
                );
                for warning in &check.warnings {
                    eprintln!("warning: {warning}");
                }
            }
        }
        OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&payload)?),
    }
    Ok(())
}
