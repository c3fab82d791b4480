//! Evaluation harnesses: binary Q&A metrics over a threshold grid, router
//! classification reports, and latency summaries.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, embed_texts, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::fsutil::read_to_string;
use crate::par;
use crate::pipeline::{QueryResult, RetrievalMode, StageTimings};

// ---------------------------------------------------------------------------
// Classification

/// Anything that maps text to one of a fixed set of label names.
pub trait Classifier {
    fn label_names(&self) -> Vec<String>;
    fn classify(&self, text: &str) -> String;
}

/// Always predicts the most frequent training label (ties to the smallest
/// name). Useful as a floor when reading router reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MajorityBaseline {
    labels: Vec<String>,
    majority: String,
}

impl MajorityBaseline {
    pub fn fit<'a, I>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts = std::collections::BTreeMap::<&str, usize>::new();
        for l in labels {
            *counts.entry(l).or_default() += 1;
        }
        let majority = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(l, _)| l.to_string())
            .ok_or(Error::EmptyTraining)?;
        Ok(Self {
            labels: counts.keys().map(|s| s.to_string()).collect(),
            majority,
        })
    }
}

impl Classifier for MajorityBaseline {
    fn label_names(&self) -> Vec<String> {
        self.labels.clone()
    }

    fn classify(&self, _text: &str) -> String {
        self.majority.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Accuracy plus macro-averaged precision, recall, and F1 over every label
/// that is known to the model or appears in gold or predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub total: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl ClassificationReport {
    pub fn from_pairs(label_names: &[String], gold: &[&str], predicted: &[String]) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::EmptyEval);
        }
        if gold.len() != predicted.len() {
            return Err(Error::InvalidConfig(format!(
                "{} gold labels but {} predictions",
                gold.len(),
                predicted.len()
            )));
        }
        let mut labels: BTreeSet<&str> = label_names.iter().map(String::as_str).collect();
        labels.extend(gold.iter().copied());
        labels.extend(predicted.iter().map(String::as_str));

        let correct = gold.iter().zip(predicted).filter(|(g, p)| **g == p.as_str()).count();
        let per_class: Vec<ClassMetrics> = labels
            .iter()
            .map(|&label| {
                let mut c = ConfusionCounts::default();
                for (g, p) in gold.iter().zip(predicted) {
                    match (*g == label, p == label) {
                        (true, true) => c.tp += 1,
                        (false, true) => c.fp += 1,
                        (true, false) => c.fn_ += 1,
                        (false, false) => c.tn += 1,
                    }
                }
                let (precision, _) = ratio(c.tp, c.tp + c.fp);
                let (recall, _) = ratio(c.tp, c.tp + c.fn_);
                ClassMetrics {
                    label: label.to_string(),
                    precision,
                    recall,
                    f1: f1_from(precision, recall),
                    support: c.tp + c.fn_,
                }
            })
            .collect();
        let n = per_class.len() as f64;
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            total: gold.len(),
            accuracy: correct as f64 / gold.len() as f64,
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            per_class,
        })
    }

    /// Single summary row plus the per-class table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>9} {:>9} {:>9} {:>7}",
            "label", "accuracy", "precision", "recall", "f1", "n"
        );
        let _ = writeln!(
            out,
            "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>7}",
            "(macro)", self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1, self.total
        );
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<16} {:>9} {:>9.4} {:>9.4} {:>9.4} {:>7}",
                c.label, "", c.precision, c.recall, c.f1, c.support
            );
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Binary metrics

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// tp + fp was zero, so precision was defined as 0.
    pub precision_degenerate: bool,
    /// tp + fn was zero, so recall was defined as 0.
    pub recall_degenerate: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn metrics_from_counts(c: &ConfusionCounts) -> Result<EvalMetrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::EmptyEval);
    }
    let (precision, precision_degenerate) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_degenerate) = ratio(c.tp, c.tp + c.fn_);
    Ok(EvalMetrics {
        accuracy: (c.tp + c.tn) as f64 / total as f64,
        precision,
        recall,
        f1: f1_from(precision, recall),
        precision_degenerate,
        recall_degenerate,
    })
}

// ---------------------------------------------------------------------------
// Judging

/// Decides whether a generated answer matches a reference answer.
pub trait Judge: Sync {
    /// A similarity in [0, 1], or `None` when either side is empty (which
    /// never matches).
    fn similarity(&self, generated: &str, reference: &str) -> Result<Option<f64>>;

    fn judge(&self, generated: &str, reference: &str, threshold: f64) -> Result<bool> {
        Ok(self.similarity(generated, reference)?.is_some_and(|s| s >= threshold))
    }
}

/// Cosine similarity of the two answers under an embedding provider.
pub struct EmbeddingJudge<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
}

impl Judge for EmbeddingJudge<'_> {
    fn similarity(&self, generated: &str, reference: &str) -> Result<Option<f64>> {
        if generated.trim().is_empty() || reference.trim().is_empty() {
            return Ok(None);
        }
        let v = embed_texts(self.embedder, &[generated, reference])?;
        Ok(Some(cosine(&v[0], &v[1])?))
    }
}

// ---------------------------------------------------------------------------
// Q&A evaluation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoldLabel {
    Truth,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub question: String,
    pub reference_answer: String,
    #[serde(rename = "label")]
    pub gold_label: GoldLabel,
}

/// Reads `{"question", "reference_answer", "label": "Truth"|"Other"}` lines.
pub fn load_qa_items(path: &Path) -> Result<Vec<QAItem>> {
    let raw = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::MalformedRecord { line: i + 1, message };
        let item: QAItem = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if item.question.trim().is_empty() {
            return Err(bad("question is empty".into()));
        }
        if item.gold_label == GoldLabel::Truth && item.reference_answer.trim().is_empty() {
            return Err(bad("Truth item has an empty reference_answer".into()));
        }
        out.push(item);
    }
    Ok(out)
}

/// A query-capable engine.
pub trait QaSystem: Sync {
    /// `graph_threshold` overrides the engine's default graph similarity
    /// threshold when set.
    fn answer(&self, question: &str, mode: RetrievalMode, graph_threshold: Option<f64>) -> Result<QueryResult>;
}

/// How a row's threshold is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdCoupling {
    /// Judge threshold only; each item is queried once per mode with the
    /// engine's own graph threshold.
    #[default]
    JudgeOnly,
    /// The row threshold also replaces the graph similarity threshold, so
    /// every row re-queries.
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaEvalConfig {
    pub thresholds: Vec<f64>,
    pub mode: RetrievalMode,
    pub coupling: ThresholdCoupling,
    /// Concurrent queries. Above 1 latency columns are left empty.
    pub parallelism: usize,
}

impl Default for QaEvalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.6, 0.7, 0.8],
            mode: RetrievalMode::CatRag,
            coupling: ThresholdCoupling::JudgeOnly,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub mode: RetrievalMode,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    /// `None` when every item failed.
    pub metrics: Option<EvalMetrics>,
    pub failures: usize,
    pub total_ms: f64,
    pub mean_latency_ms: Option<f64>,
    /// Graph hits, entities, and relations summed over answered items.
    pub graph_evidence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

struct Answered {
    answer: String,
    graph_evidence: usize,
    latency_ms: f64,
}

fn ask(system: &dyn QaSystem, item: &QAItem, mode: RetrievalMode, thr: Option<f64>) -> Result<Answered> {
    let started = Instant::now();
    let r = system.answer(&item.question, mode, thr)?;
    Ok(Answered {
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
        graph_evidence: r.graph_hits.len() + r.entities.len() + r.relations.len(),
        answer: r.answer,
    })
}

fn score_row(
    items: &[QAItem],
    answers: &[Result<Answered>],
    judge: &dyn Judge,
    threshold: f64,
    mode: RetrievalMode,
    total_ms: f64,
    timed: bool,
) -> EvalRow {
    let mut counts = ConfusionCounts::default();
    let mut failures = 0;
    let mut latency = Vec::new();
    let mut graph_evidence = 0;
    for (item, ans) in items.iter().zip(answers) {
        let verdict = ans
            .as_ref()
            .map_err(|e| e.to_string())
            .and_then(|a| judge.judge(&a.answer, &item.reference_answer, threshold).map_err(|e| e.to_string()));
        match verdict {
            Err(msg) => {
                log::warn!("evaluation item {:?} failed: {msg}", item.question);
                failures += 1;
                continue;
            }
            Ok(ok) => match (item.gold_label, ok) {
                (GoldLabel::Truth, true) => counts.tp += 1,
                (GoldLabel::Truth, false) => counts.fn_ += 1,
                (GoldLabel::Other, true) => counts.fp += 1,
                (GoldLabel::Other, false) => counts.tn += 1,
            },
        }
        if let Ok(a) = ans {
            latency.push(a.latency_ms);
            graph_evidence += a.graph_evidence;
        }
    }
    EvalRow {
        mode,
        threshold,
        counts,
        metrics: metrics_from_counts(&counts).ok(),
        failures,
        total_ms,
        mean_latency_ms: (timed && !latency.is_empty()).then(|| latency.iter().sum::<f64>() / latency.len() as f64),
        graph_evidence,
    }
}

/// Runs every item through `system` and judges it at each threshold.
/// Truth items judged correct count as tp, otherwise fn; Other items judged
/// correct count as fp, otherwise tn. A failing item is excluded from the
/// counts and tallied under `failures`.
pub fn run_qa_eval(items: &[QAItem], system: &dyn QaSystem, judge: &dyn Judge, cfg: &QaEvalConfig) -> Result<EvalTable> {
    if items.is_empty() || cfg.thresholds.is_empty() {
        return Err(Error::EmptyEval);
    }
    if let Some(t) = cfg.thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidConfig(format!("threshold {t} outside [0, 1]")));
    }
    let threads = cfg.parallelism.max(1);
    let timed = threads == 1;
    let run_all = |thr: Option<f64>| {
        let started = Instant::now();
        let answers = par::map_range_bounded(threads, items.len(), |i| ask(system, &items[i], cfg.mode, thr));
        (answers, started.elapsed().as_secs_f64() * 1e3)
    };
    let rows = match cfg.coupling {
        ThresholdCoupling::JudgeOnly => {
            let (answers, total_ms) = run_all(None);
            cfg.thresholds
                .iter()
                .map(|&t| score_row(items, &answers, judge, t, cfg.mode, total_ms, timed))
                .collect()
        }
        ThresholdCoupling::Both => cfg
            .thresholds
            .iter()
            .map(|&t| {
                let (answers, total_ms) = run_all(Some(t));
                score_row(items, &answers, judge, t, cfg.mode, total_ms, timed)
            })
            .collect(),
    };
    Ok(EvalTable { rows })
}

/// Arithmetic grid lo, lo+step, … up to hi inclusive (1e-9 slack).
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(Error::InvalidConfig(format!("bad grid lo={lo} hi={hi} step={step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|i| {
            let t = lo + i as f64 * step;
            (t * 1e9).round() / 1e9
        })
        .collect())
}

/// Grid search over judge thresholds; see [`EvalTable::best`].
pub fn sweep_thresholds(
    lo: f64,
    hi: f64,
    step: f64,
    items: &[QAItem],
    system: &dyn QaSystem,
    judge: &dyn Judge,
    base: &QaEvalConfig,
) -> Result<EvalTable> {
    let cfg = QaEvalConfig {
        thresholds: threshold_grid(lo, hi, step)?,
        ..base.clone()
    };
    run_qa_eval(items, system, judge, &cfg)
}

impl EvalTable {
    /// Row with the highest F1; ties go to the lowest threshold.
    pub fn best(&self) -> Option<&EvalRow> {
        self.rows
            .iter()
            .filter(|r| r.metrics.is_some())
            .fold(None, |best: Option<&EvalRow>, r| match best {
                Some(b) if f1_of(b) > f1_of(r) || (f1_of(b) == f1_of(r) && b.threshold <= r.threshold) => Some(b),
                _ => Some(r),
            })
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>9} {:>4} {:>4} {:>4} {:>4} {:>8} {:>9} {:>8} {:>8} {:>8} {:>10} {:>10} {:>8}",
            "mode", "threshold", "tp", "fp", "fn", "tn", "accuracy", "precision", "recall", "f1", "failures",
            "total_ms", "mean_ms", "graph_ev"
        );
        for r in &self.rows {
            let m = fmt_metrics(r.metrics.as_ref());
            let _ = writeln!(
                out,
                "{:<6} {:>9.2} {:>4} {:>4} {:>4} {:>4} {:>8} {:>9} {:>8} {:>8} {:>8} {:>10.2} {:>10} {:>8}",
                r.mode.as_str(),
                r.threshold,
                r.counts.tp,
                r.counts.fp,
                r.counts.fn_,
                r.counts.tn,
                m[0],
                m[1],
                m[2],
                m[3],
                r.failures,
                r.total_ms,
                r.mean_latency_ms.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into()),
                r.graph_evidence
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "mode,threshold,tp,fp,fn,tn,accuracy,precision,recall,f1,failures,total_ms,mean_latency_ms,graph_evidence\n",
        );
        for r in &self.rows {
            let m = r.metrics.as_ref();
            let num = |f: fn(&EvalMetrics) -> f64| m.map(|m| format!("{:.6}", f(m))).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{:.3},{},{}",
                r.mode.as_str(),
                r.threshold,
                r.counts.tp,
                r.counts.fp,
                r.counts.fn_,
                r.counts.tn,
                num(|m| m.accuracy),
                num(|m| m.precision),
                num(|m| m.recall),
                num(|m| m.f1),
                r.failures,
                r.total_ms,
                r.mean_latency_ms.map(|x| format!("{x:.3}")).unwrap_or_default(),
                r.graph_evidence
            );
        }
        out
    }
}

fn f1_of(r: &EvalRow) -> f64 {
    r.metrics.map_or(0.0, |m| m.f1)
}

fn fmt_metrics(m: Option<&EvalMetrics>) -> [String; 4] {
    match m {
        Some(m) => [m.accuracy, m.precision, m.recall, m.f1].map(|x| format!("{x:.4}")),
        None => std::array::from_fn(|_| "-".to_string()),
    }
}

/// Side-by-side hybrid (CR) and vector-only (R) rows, matched by threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedTable {
    pub catrag: EvalTable,
    pub rag: EvalTable,
}

impl PairedTable {
    pub fn new(catrag: EvalTable, rag: EvalTable) -> Result<Self> {
        let ts = |t: &EvalTable| t.rows.iter().map(|r| r.threshold).collect::<Vec<_>>();
        if ts(&catrag) != ts(&rag) {
            return Err(Error::InvalidConfig("paired tables need identical thresholds".into()));
        }
        Ok(Self { catrag, rag })
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>9} | {:>15} | {:>15} | {:>15} | {:>15} | {:>15} | {:>11}",
            "threshold", "accuracy CR|R", "precision CR|R", "recall CR|R", "f1 CR|R", "mean_ms CR|R", "graph CR|R"
        );
        for (c, r) in self.catrag.rows.iter().zip(&self.rag.rows) {
            let (mc, mr) = (fmt_metrics(c.metrics.as_ref()), fmt_metrics(r.metrics.as_ref()));
            let ms = |x: Option<f64>| x.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into());
            let _ = write!(out, "{:>9.2}", c.threshold);
            for i in 0..4 {
                let _ = write!(out, " | {:>15}", format!("{}|{}", mc[i], mr[i]));
            }
            let _ = writeln!(
                out,
                " | {:>15} | {:>11}",
                format!("{}|{}", ms(c.mean_latency_ms), ms(r.mean_latency_ms)),
                format!("{}|{}", c.graph_evidence, r.graph_evidence)
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,f1_cr,f1_r,precision_cr,precision_r,recall_cr,recall_r,graph_evidence_cr,graph_evidence_r\n");
        for (c, r) in self.catrag.rows.iter().zip(&self.rag.rows) {
            let v = |row: &EvalRow, f: fn(&EvalMetrics) -> f64| row.metrics.as_ref().map(|m| format!("{:.6}", f(m))).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.threshold,
                v(c, |m| m.f1),
                v(r, |m| m.f1),
                v(c, |m| m.precision),
                v(r, |m| m.precision),
                v(c, |m| m.recall),
                v(r, |m| m.recall),
                c.graph_evidence,
                r.graph_evidence
            );
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Latency

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencySummary {
    pub mode: RetrievalMode,
    pub queries: usize,
    pub runs: usize,
    /// Wall clock per query, averaged over every run.
    pub mean_ms: f64,
    /// Engine-reported per-stage means.
    pub stages: StageTimings,
}

/// Runs each question `repeat` times sequentially and averages.
pub fn latency_summary(system: &dyn QaSystem, questions: &[&str], mode: RetrievalMode, repeat: usize) -> Result<LatencySummary> {
    if questions.is_empty() || repeat == 0 {
        return Err(Error::EmptyEval);
    }
    let mut wall = 0.0;
    let mut stages = StageTimings::default();
    let mut n = 0usize;
    for _ in 0..repeat {
        for q in questions {
            let started = Instant::now();
            let r = system.answer(q, mode, None)?;
            wall += started.elapsed().as_secs_f64() * 1e3;
            stages.accumulate(&r.timings);
            n += 1;
        }
    }
    Ok(LatencySummary {
        mode,
        queries: questions.len(),
        runs: repeat,
        mean_ms: wall / n as f64,
        stages: stages.scaled(1.0 / n as f64),
    })
}
