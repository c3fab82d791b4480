//! One function per subcommand. Each writes its report to `out`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use catrag_core::eval::{
    latency_summary, load_qa_items, run_qa_eval, EmbeddingJudge, EvalTable, PairedTable, QaEvalConfig,
    ThresholdCoupling,
};
use catrag_core::ingest::{chunk_corpus, load_corpus, ChunkConfig, Normalizer};
use catrag_core::par::Execution;
use catrag_core::router::{evaluate_router, load_examples, split_examples, train, RouterModel, TrainConfig};
use catrag_core::{construct, Engine, QueryConfig, RetrievalMode};

use crate::config::{EngineConfig, Needs};
use crate::server::{self, AppState};
use crate::{CliError, CliResult};

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents).map_err(io(format!("writing {}", path.display())))
}

/// Chunks a corpus into JSONL, normalizing with the config's dictionary and
/// stopwords when a config is given.
pub fn ingest(corpus: &Path, out_path: &Path, cfg: Option<&EngineConfig>, out: &mut dyn Write) -> CliResult {
    let (chunking, normalizer) = match cfg {
        Some(c) => (c.chunk, c.components()?.normalizer),
        None => (ChunkConfig::default(), Normalizer::default()),
    };
    let docs = load_corpus(corpus)?;
    let chunks = chunk_corpus(&docs, &chunking, &normalizer, Execution::Parallel)?;
    let mut body = String::new();
    for c in &chunks {
        body.push_str(&serde_json::to_string(c).expect("chunk serializes"));
        body.push('\n');
    }
    write_file(out_path, &body)?;
    writeln!(out, "{} documents, {} chunks -> {}", docs.len(), chunks.len(), out_path.display()).map_err(io("stdout"))
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub split: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub train: TrainConfig,
}

pub fn train_router(args: &TrainArgs, out: &mut dyn Write) -> CliResult {
    if !(args.split > 0.0 && args.split < 1.0) {
        return Err(CliError::SplitInvalid(args.split));
    }
    let examples = load_examples(&args.data)?;
    let (train_set, test_set) = split_examples(&examples, args.split, args.seed)?;
    let cfg = TrainConfig {
        seed: args.seed,
        ..args.train.clone()
    };
    let started = Instant::now();
    let model = train(&train_set, &cfg)?;
    let train_time = started.elapsed();
    model.save(&args.out)?;
    writeln!(
        out,
        "trained on {} examples ({} labels) in {:.2}s -> {}",
        train_set.len(),
        model.labels().len(),
        train_time.as_secs_f64(),
        args.out.display()
    )
    .map_err(io("stdout"))?;
    if !test_set.is_empty() {
        let mut eval = evaluate_router(&model, &test_set)?;
        eval.train_time = Some(train_time);
        write!(out, "held-out {} examples\n{}", test_set.len(), eval.report.render()).map_err(io("stdout"))?;
    }
    Ok(())
}

/// One summary row plus the per-class table: train on the split, score on
/// the held-out part.
/// With `model` set, scores that model on the whole file instead.
pub fn eval_router(args: &TrainArgs, model: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let examples = load_examples(&args.data)?;
    let (report, train_time, test_time) = match model {
        Some(p) => {
            let m = RouterModel::load(p)?;
            let e = evaluate_router(&m, &examples)?;
            (e.report, None, e.test_time)
        }
        None => {
            if !(args.split > 0.0 && args.split < 1.0) {
                return Err(CliError::SplitInvalid(args.split));
            }
            let (train_set, test_set) = split_examples(&examples, args.split, args.seed)?;
            let cfg = TrainConfig {
                seed: args.seed,
                ..args.train.clone()
            };
            let started = Instant::now();
            let m = train(&train_set, &cfg)?;
            let tt = started.elapsed();
            let e = evaluate_router(&m, &test_set)?;
            (e.report, Some(tt), e.test_time)
        }
    };
    writeln!(
        out,
        "{:>9} {:>9} {:>9} {:>9} {:>12} {:>12}",
        "accuracy", "precision", "recall", "f1", "train_s", "test_s"
    )
    .map_err(io("stdout"))?;
    writeln!(
        out,
        "{:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>12} {:>12.4}",
        report.accuracy,
        report.macro_precision,
        report.macro_recall,
        report.macro_f1,
        train_time.map_or("-".into(), |t| format!("{:.4}", t.as_secs_f64())),
        test_time.as_secs_f64()
    )
    .map_err(io("stdout"))?;
    write!(out, "\n{}", report.render()).map_err(io("stdout"))
}

pub fn run_construct(cfg: &EngineConfig, out: &mut dyn Write) -> CliResult {
    cfg.require_files(Needs::Construct)?;
    let corpus = cfg.corpus.as_ref().expect("checked by require_files");
    let (_, _, report) = construct(corpus, &cfg.construct_config())?;
    writeln!(out, "{report}\nwritten to {}", cfg.data_dir.display()).map_err(io("stdout"))
}

pub fn open_engine(cfg: &EngineConfig) -> CliResult<Engine> {
    cfg.require_files(Needs::Query)?;
    Ok(Engine::open(&cfg.data_dir, cfg.components()?, cfg.query)?)
}

pub fn run_query(engine: &Engine, question: &str, qcfg: &QueryConfig, as_json: bool, out: &mut dyn Write) -> CliResult {
    let r = match engine.query(question, qcfg) {
        Ok(r) => r,
        Err(catrag_core::Error::GenerationUnavailable { message, evidence }) => {
            if let Some(ev) = &evidence {
                let _ = writeln!(out, "generation unavailable; retrieved evidence follows");
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(ev).expect("result serializes"));
            }
            return Err(catrag_core::Error::GenerationUnavailable { message, evidence }.into());
        }
        Err(e) => return Err(e.into()),
    };
    if as_json {
        return writeln!(out, "{}", serde_json::to_string_pretty(&r).expect("result serializes")).map_err(io("stdout"));
    }
    let w = &mut *out;
    let mut lines = vec![format!("{}\n", r.answer)];
    if let Some(l) = &r.label {
        lines.push(format!("category: {} ({:.3})", l.name, l.confidence));
    }
    lines.push(format!("vector hits ({}):", r.vec_hits.len()));
    lines.extend(r.vec_hits.iter().map(|h| format!("  {} {:.4}", h.chunk_id, h.score)));
    if r.mode == RetrievalMode::CatRag {
        lines.push(format!("graph hits ({}):", r.graph_hits.len()));
        lines.extend(r.graph_hits.iter().map(|h| format!("  {} {:.4}", h.chunk_id, h.score)));
        lines.push(format!("entities: {}", r.entities.iter().cloned().collect::<Vec<_>>().join(", ")));
        lines.push(format!("relations ({}):", r.relations.len()));
        lines.extend(r.relations.iter().map(|t| format!("  {}", t.render())));
    }
    let t = r.timings;
    lines.push(format!(
        "timings ms: embed {:.2} route {:.2} vector {:.2} graph {:.2} expand {:.2} assemble {:.2} generate {:.2} total {:.2}",
        t.embed_ms, t.route_ms, t.vector_ms, t.graph_ms, t.expand_ms, t.assemble_ms, t.generate_ms, t.total_ms
    ));
    writeln!(w, "{}", lines.join("\n")).map_err(io("stdout"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalModes {
    One(RetrievalMode),
    Both,
}

#[derive(Debug, Clone)]
pub struct QaArgs {
    pub items: PathBuf,
    pub thresholds: Vec<f64>,
    pub modes: EvalModes,
    pub coupling: ThresholdCoupling,
    pub parallelism: usize,
    /// Latency runs per question; 0 skips the latency summary.
    pub repeat: usize,
    pub csv: Option<PathBuf>,
}

/// Runs the QA evaluation. Fails with [`CliError::EvalFailures`] after
/// printing when any item failed.
pub fn eval_qa(engine: &Engine, args: &QaArgs, out: &mut dyn Write) -> CliResult {
    let items = load_qa_items(&args.items)?;
    let judge = EmbeddingJudge {
        embedder: engine.embedder.as_ref(),
    };
    let table = |mode| -> CliResult<EvalTable> {
        let cfg = QaEvalConfig {
            thresholds: args.thresholds.clone(),
            mode,
            coupling: args.coupling,
            parallelism: args.parallelism,
        };
        Ok(run_qa_eval(&items, engine, &judge, &cfg)?)
    };
    let (text, csv, failures, modes) = match args.modes {
        EvalModes::One(mode) => {
            let t = table(mode)?;
            (t.render_text(), t.to_csv(), t.failures(), vec![mode])
        }
        EvalModes::Both => {
            let cr = table(RetrievalMode::CatRag)?;
            let r = table(RetrievalMode::Rag)?;
            let failures = cr.failures() + r.failures();
            let detail = format!("{}\n{}", cr.render_text(), r.render_text());
            let paired = PairedTable::new(cr, r)?;
            (
                format!("{}\n{}", paired.render_text(), detail),
                paired.to_csv(),
                failures,
                vec![RetrievalMode::CatRag, RetrievalMode::Rag],
            )
        }
    };
    write!(out, "{text}").map_err(io("stdout"))?;
    if let Some(p) = &args.csv {
        write_file(p, &csv)?;
    }
    if args.repeat > 0 {
        let questions: Vec<&str> = items.iter().map(|i| i.question.as_str()).collect();
        for mode in modes {
            let s = latency_summary(engine, &questions, mode, args.repeat)?;
            writeln!(
                out,
                "latency {}: mean {:.2} ms over {} runs x {} questions (stages: embed {:.2} route {:.2} vector {:.2} graph {:.2} expand {:.2} assemble {:.2} generate {:.2})",
                mode.as_str(),
                s.mean_ms,
                s.runs,
                s.queries,
                s.stages.embed_ms,
                s.stages.route_ms,
                s.stages.vector_ms,
                s.stages.graph_ms,
                s.stages.expand_ms,
                s.stages.assemble_ms,
                s.stages.generate_ms
            )
            .map_err(io("stdout"))?;
        }
    }
    if failures > 0 {
        return Err(CliError::EvalFailures(failures));
    }
    Ok(())
}

pub fn run_serve(cfg: &EngineConfig) -> CliResult {
    let engine = Arc::new(open_engine(cfg)?);
    let state = AppState::new(engine, cfg.server.max_concurrent_queries);
    let rt = tokio::runtime::Runtime::new().map_err(io("starting runtime"))?;
    rt.block_on(server::serve(state, &cfg.server.bind, cfg.server.port, cfg.server.cors_origin.as_deref()))
        .map_err(io(format!("serving on {}:{}", cfg.server.bind, cfg.server.port)))
}
