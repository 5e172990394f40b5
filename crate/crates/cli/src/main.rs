use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use dst_joint::commands::{self, Command, CommandError, DstOptions, ExperimentManifest};
use dst_joint::experiment::{BenchmarkConfig, Variant};
use dst_joint::inference::HistorySource;
use dst_joint::par::ExecMode;

const DEFAULT_GRID: [f64; 10] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

/// Joint speech-text training for spoken dialogue state tracking.
#[derive(Parser)]
#[command(name = "dst", version)]
struct Cli {
    /// Benchmark configuration (JSON). Defaults to the built-in desk setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Output directory; defaults to `$DST_OUTPUT_ROOT/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "DST_OUTPUT_ROOT", default_value = "runs", global = true)]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    /// Feed target text to the LM directly instead of through a text encoder.
    NoTextEncoder,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the effective configuration as JSON.
    PrintConfig,
    /// Generate the synthetic corpora, ontology and LM text.
    GenData,
    /// Pretrain the language model stand-in, then the ASR phase.
    PretrainAsr {
        #[arg(long)]
        data: PathBuf,
    },
    /// Finetune for state tracking from a phase-1 checkpoint.
    TrainDst {
        #[arg(long)]
        data: PathBuf,
        /// Phase-1 checkpoint directory.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Allow training without a phase-1 checkpoint.
        #[arg(long)]
        from_scratch: bool,
        /// Weight of the text losses.
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Speech only; same as `--lambda 0`.
        #[arg(long, conflicts_with_all = ["lambda", "ablation"])]
        no_text: bool,
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
    },
    /// Free-running evaluation of a checkpoint on a spoken corpus.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ontology: PathBuf,
        /// Use reference transcripts for earlier user turns.
        #[arg(long)]
        gold_history: bool,
    },
    /// Track the state of every dialogue in a file; prints JSON lines.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        gold_history: bool,
    },
    /// Train and evaluate once per text-loss weight.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        from_scratch: bool,
        /// Comma-separated weights.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID)]
        grid: Vec<f64>,
    },
    /// Run a manifest's command again with its recorded configuration.
    Rerun { manifest: PathBuf },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::PrintConfig => "print-config",
            Cmd::GenData => "gen-data",
            Cmd::PretrainAsr { .. } => "pretrain-asr",
            Cmd::TrainDst { .. } => "train-dst",
            Cmd::Evaluate { .. } => "evaluate",
            Cmd::Infer { .. } => "infer",
            Cmd::Sweep { .. } => "sweep",
            Cmd::Rerun { .. } => "rerun",
        }
    }
}

fn history(gold: bool) -> HistorySource {
    if gold {
        HistorySource::Gold
    } else {
        HistorySource::Hypothesized
    }
}

fn config(cli: &Cli) -> Result<BenchmarkConfig, CommandError> {
    let mut cfg = match &cli.config {
        Some(p) => commands::load_config(p)?,
        None => BenchmarkConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if cli.sequential {
        for t in [&mut cfg.lm, &mut cfg.asr, &mut cfg.dst] {
            t.exec = ExecMode::Sequential;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(manifest: &ExperimentManifest) -> anyhow::Result<()> {
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    let out = manifest.command.out();
    match &manifest.command {
        Command::Evaluate { .. } => {
            let table = fs::read_to_string(out.join("report.txt")).context("reading the report table")?;
            print!("{table}");
        }
        Command::Infer { .. } => {
            print!("{}", fs::read_to_string(out.join("predictions.jsonl")).context("reading predictions")?);
        }
        Command::Sweep { .. } => {
            print!("{}", fs::read_to_string(out.join("sweep.csv")).context("reading the sweep table")?);
        }
        _ => {}
    }
    eprintln!("wrote {}", out.join(commands::MANIFEST_FILE).display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| cli.output_root.join(cli.command.name()));
    if let Cmd::Rerun { manifest } = &cli.command {
        let m = commands::rerun(manifest, cli.out.clone())?;
        return report(&m);
    }
    let cfg = config(&cli)?;
    let command = match cli.command {
        Cmd::PrintConfig => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            return Ok(());
        }
        Cmd::GenData => Command::GenData { out },
        Cmd::PretrainAsr { data } => Command::PretrainAsr { data, out },
        Cmd::TrainDst {
            data,
            init,
            from_scratch,
            lambda,
            no_text,
            ablation,
        } => {
            let variant = match (no_text, ablation) {
                (true, _) => Variant::NO_TEXT,
                (false, Some(Ablation::NoTextEncoder)) => Variant::no_text_encoder(lambda),
                (false, None) => Variant::joint(lambda),
            };
            Command::TrainDst {
                data,
                init,
                options: DstOptions { variant, from_scratch },
                out,
            }
        }
        Cmd::Evaluate {
            checkpoint,
            corpus,
            ontology,
            gold_history,
        } => Command::Evaluate {
            checkpoint,
            corpus,
            ontology,
            history: history(gold_history),
            out,
        },
        Cmd::Infer {
            checkpoint,
            dialogues,
            ontology,
            gold_history,
        } => Command::Infer {
            checkpoint,
            dialogues,
            ontology,
            history: history(gold_history),
            out,
        },
        Cmd::Sweep {
            data,
            init,
            from_scratch,
            grid,
        } => Command::Sweep {
            data,
            init,
            from_scratch,
            grid,
            out,
        },
        Cmd::Rerun { .. } => unreachable!("handled above"),
    };
    let manifest = commands::run(&command, &cfg)?;
    report(&manifest)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<CommandError>() {
        Some(c) => c.exit_code() as u8,
        None => CommandError::Runtime(String::new()).exit_code() as u8,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
