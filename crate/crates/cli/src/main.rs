use std::path::PathBuf;
use std::process::ExitCode;

use catrag_cli::commands::{self, EvalModes, QaArgs, TrainArgs};
use catrag_cli::config::EngineConfig;
use catrag_cli::{exit, CliError, CliResult};
use catrag_core::eval::{threshold_grid, ThresholdCoupling};
use catrag_core::router::TrainConfig;
use catrag_core::RetrievalMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "catrag", version, about = "Category-guided hybrid retrieval over regulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk a corpus into JSONL.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Take chunking, dictionary, and stopwords from this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the category router on labelled text.
    TrainRouter {
        #[command(flatten)]
        train: TrainOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the vector store and regulation graph.
    Construct {
        #[arg(long, default_value = "engine.cfg")]
        config: PathBuf,
    },
    /// Answer one question.
    Query {
        #[arg(long, default_value = "engine.cfg")]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        k_vec: Option<usize>,
        #[arg(long)]
        k_graph: Option<usize>,
        #[arg(long)]
        sim_threshold: Option<f64>,
        /// Print the full result as JSON.
        #[arg(long)]
        json: bool,
        question: String,
    },
    /// Evaluation harnesses.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value = "engine.cfg")]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Threshold-swept QA metrics, optionally paired CatRAG | RAG.
    Qa {
        #[arg(long, default_value = "engine.cfg")]
        config: PathBuf,
        #[arg(long)]
        items: PathBuf,
        /// Comma-separated judge thresholds.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.6, 0.7, 0.8])]
        thresholds: Vec<f64>,
        /// Grid `lo:hi:step`; replaces --thresholds.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long, value_enum, default_value_t = EvalMode::Both)]
        mode: EvalMode,
        /// Also apply each threshold to graph retrieval.
        #[arg(long)]
        couple_graph_threshold: bool,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// Latency runs per question (10 mirrors the usual protocol).
        #[arg(long, default_value_t = 0)]
        repeat: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Router accuracy, macro precision/recall/F1, and timings.
    Router {
        #[command(flatten)]
        train: TrainOpts,
        /// Score an existing model on the whole file instead of training.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 3)]
    ngram_order: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f32,
}

impl TrainOpts {
    fn args(&self, out: PathBuf) -> TrainArgs {
        TrainArgs {
            data: self.data.clone(),
            split: self.split,
            seed: self.seed,
            out,
            train: TrainConfig {
                epochs: self.epochs,
                ngram_order: self.ngram_order,
                dim: self.dim,
                lr_start: self.lr,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Catrag,
    Rag,
}

impl From<Mode> for RetrievalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Catrag => RetrievalMode::CatRag,
            Mode::Rag => RetrievalMode::Rag,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Catrag,
    Rag,
    Both,
}

fn parse_sweep(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| catrag_core::Error::InvalidConfig(format!("bad --sweep {s:?}, expected lo:hi:step")))?;
    match parts[..] {
        [lo, hi, step] => Ok(threshold_grid(lo, hi, step)?),
        _ => Err(catrag_core::Error::InvalidConfig(format!("bad --sweep {s:?}, expected lo:hi:step")).into()),
    }
}

fn run(cli: Cli) -> CliResult {
    let stdout = &mut std::io::stdout();
    match cli.command {
        Command::Ingest { corpus, out, config } => {
            let cfg = config.map(|p| EngineConfig::from_file(&p)).transpose()?;
            commands::ingest(&corpus, &out, cfg.as_ref(), stdout)
        }
        Command::TrainRouter { train, out } => commands::train_router(&train.args(out), stdout),
        Command::Construct { config } => commands::run_construct(&EngineConfig::from_file(&config)?, stdout),
        Command::Query {
            config,
            mode,
            k_vec,
            k_graph,
            sim_threshold,
            json,
            question,
        } => {
            let cfg = EngineConfig::from_file(&config)?;
            let engine = commands::open_engine(&cfg)?;
            let mut q = cfg.query;
            if let Some(m) = mode {
                q.mode = m.into();
            }
            q.k_vec = k_vec.unwrap_or(q.k_vec);
            q.k_graph = k_graph.unwrap_or(q.k_graph);
            q.sim_threshold = sim_threshold.unwrap_or(q.sim_threshold);
            commands::run_query(&engine, &question, &q, json, stdout)
        }
        Command::Eval(EvalCommand::Qa {
            config,
            items,
            thresholds,
            sweep,
            mode,
            couple_graph_threshold,
            parallelism,
            repeat,
            csv,
        }) => {
            let cfg = EngineConfig::from_file(&config)?;
            let engine = commands::open_engine(&cfg)?;
            let args = QaArgs {
                items,
                thresholds: match sweep {
                    Some(s) => parse_sweep(&s)?,
                    None => thresholds,
                },
                modes: match mode {
                    EvalMode::Catrag => EvalModes::One(RetrievalMode::CatRag),
                    EvalMode::Rag => EvalModes::One(RetrievalMode::Rag),
                    EvalMode::Both => EvalModes::Both,
                },
                coupling: if couple_graph_threshold {
                    ThresholdCoupling::Both
                } else {
                    ThresholdCoupling::JudgeOnly
                },
                parallelism,
                repeat,
                csv,
            };
            commands::eval_qa(&engine, &args, stdout)
        }
        Command::Eval(EvalCommand::Router { train, model }) => {
            commands::eval_router(&train.args(PathBuf::new()), model.as_deref(), stdout)
        }
        Command::Serve { config } => commands::run_serve(&EngineConfig::from_file(&config)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(inner) = &e {
                let mut src = std::error::Error::source(inner);
                while let Some(s) = src {
                    eprintln!("  caused by: {s}");
                    src = s.source();
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
