use clap::{Args, Parser, Subcommand};
use figmtl::cli::{self, RunConfig};
use figmtl::error::Result;
use std::path::PathBuf;

/// Single-task and multi-task detection of hyperbole and metaphor at
/// sentence level: training, cross-validated comparison, label balancing,
/// annotator agreement, attention probing, and dataset statistics.
#[derive(Parser)]
#[command(name = "figmtl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key-value config file; flags override its settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for initialization, batch order, dropout, and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for fold-level training jobs; results are identical
    /// for any value.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Stdout format: text or json.
    #[arg(long, global = true)]
    format: Option<String>,

    /// Extra key=value assignments applied after the config file and flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Default)]
struct DataArgs {
    /// Dataset path (.jsonl or .csv), or "synth" for the generator.
    #[arg(long)]
    data: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write a checkpoint, loss trace, and manifest.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// stl-hyperbole | stl-metaphor | mtl-e | mtl-f.
        #[arg(long)]
        regime: Option<String>,
        /// Hyperparameter preset: hypo-stl | hypo-mtle | hypo-mtlf.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Cross-validated comparison of regimes with significance testing.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated regimes; "stl" expands to both single-task models.
        #[arg(long)]
        regimes: Option<String>,
        /// Fold count.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Downsample the majority class of one label.
    Balance {
        #[command(flatten)]
        data: DataArgs,
        /// hyperbole | metaphor.
        #[arg(long)]
        label: Option<String>,
        /// Majority/minority ceiling (≥ 1).
        #[arg(long)]
        ratio: Option<f64>,
        /// Published ratio preset: trofi | lcc.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Pairwise Cohen's kappa and Fleiss' kappa from an annotation CSV.
    Kappa {
        #[command(flatten)]
        data: DataArgs,
    },
    /// CLS attention salience for a sentence under a trained checkpoint.
    Attend {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        sentence: Option<String>,
        /// Second checkpoint to diff against (same sentence).
        #[arg(long)]
        compare_with: Option<PathBuf>,
    },
    /// Joint-label quadrant statistics, checked against published tables.
    Stats {
        #[command(flatten)]
        data: DataArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Compare { .. } => "compare",
            Command::Balance { .. } => "balance",
            Command::Kappa { .. } => "kappa",
            Command::Attend { .. } => "attend",
            Command::Stats { .. } => "stats",
        }
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
    }

    // Command flags override the file.
    let mut kv = Vec::new();
    match &cli.command {
        Command::Train { data, regime, preset } => {
            if let Some(p) = preset {
                kv.push(("preset", p.clone()));
            }
            if let Some(d) = &data.data {
                kv.push(("data", d.clone()));
            }
            if let Some(r) = regime {
                kv.push(("regime", r.clone()));
            }
        }
        Command::Compare { data, regimes, k } => {
            if let Some(d) = &data.data {
                kv.push(("data", d.clone()));
            }
            if let Some(r) = regimes {
                kv.push(("regimes", r.clone()));
            }
            if let Some(k) = k {
                kv.push(("eval.k", k.to_string()));
            }
        }
        Command::Balance { data, label, ratio, preset } => {
            if let Some(p) = preset {
                kv.push(("balance.preset", p.clone()));
            }
            if let Some(d) = &data.data {
                kv.push(("data", d.clone()));
            }
            if let Some(l) = label {
                kv.push(("balance.label", l.clone()));
            }
            if let Some(r) = ratio {
                kv.push(("balance.ratio", r.to_string()));
            }
        }
        Command::Kappa { data } | Command::Stats { data } => {
            if let Some(d) = &data.data {
                kv.push(("data", d.clone()));
            }
        }
        Command::Attend { checkpoint, sentence, compare_with } => {
            if let Some(c) = checkpoint {
                kv.push(("attend.checkpoint", c.display().to_string()));
            }
            if let Some(s) = sentence {
                kv.push(("attend.sentence", s.clone()));
            }
            if let Some(c) = compare_with {
                kv.push(("attend.compare_checkpoint", c.display().to_string()));
            }
        }
    }
    for (key, value) in kv {
        config.apply_kv(key, &value)?;
    }

    // Globals and --set assignments win last.
    if let Some(seed) = cli.seed {
        config.apply_kv("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        config.apply_kv("out", &out.display().to_string())?;
    }
    if let Some(jobs) = cli.jobs {
        config.apply_kv("jobs", &jobs.to_string())?;
    }
    if let Some(format) = &cli.format {
        config.apply_kv("format", format)?;
    }
    for assignment in &cli.set {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            figmtl::Error::Config(format!("--set expects KEY=VALUE, got {assignment:?}"))
        })?;
        config.apply_kv(key, value)?;
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    let config = build_config(cli)?;
    match cli.command.name() {
        "train" => cli::cmd_train(&config),
        "compare" => cli::cmd_compare(&config),
        "balance" => cli::cmd_balance(&config),
        "kappa" => cli::cmd_kappa(&config),
        "attend" => cli::cmd_attend(&config),
        "stats" => cli::cmd_stats(&config),
        _ => unreachable!(),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.class().exit_code());
        }
    }
}
