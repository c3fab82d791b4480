//! Offline construction of the vector index and regulation graph, and the
//! hybrid query path over both.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::embed::{embed_one, embed_texts, EmbeddingProvider, EmbeddingProviderConfig};
use crate::error::{Error, Result};
use crate::eval::QaSystem;
use crate::ingest::{
    chunk_corpus, load_corpus, load_stopwords, AbbreviationDictionary, ChunkConfig, Document, Normalizer,
};
use crate::kgraph::{ChunkNode, RegulationGraph};
use crate::llm::{AssembledContext, ContextChunk, GenProvider, GenProviderConfig, RelationTriplet};
use crate::ner::{EntityExtractor, Gazetteer, HeuristicExtractor, HttpEntityExtractor};
use crate::par::{self, Execution};
use crate::router::RouterModel;
use crate::vstore::{ScoredHit, VectorRecord, VectorStore};

pub const GRAPH_FILE: &str = "graph.jsonl";
pub const VSTORE_FILE: &str = "vstore.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructConfig {
    pub chunk: ChunkConfig,
    pub embedding: EmbeddingProviderConfig,
    pub generation: GenProviderConfig,
    pub router_model: PathBuf,
    pub dictionary: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    /// Remote NER endpoint; the heuristic extractor is used when unset and
    /// as the fallback when the endpoint is down.
    pub ner_url: Option<String>,
    pub ner_timeout_ms: u64,
    pub ner_max_retries: usize,
    /// Where graph.jsonl and vstore.jsonl are written, if anywhere.
    pub out_dir: Option<PathBuf>,
    #[serde(skip)]
    pub exec: Execution,
}

impl ConstructConfig {
    pub fn new(router_model: impl Into<PathBuf>) -> Self {
        Self {
            chunk: ChunkConfig::default(),
            embedding: EmbeddingProviderConfig::default(),
            generation: GenProviderConfig::default(),
            router_model: router_model.into(),
            dictionary: None,
            stopwords: None,
            gazetteer: None,
            ner_url: None,
            ner_timeout_ms: 10_000,
            ner_max_retries: 2,
            out_dir: None,
            exec: Execution::default(),
        }
    }
}

/// Providers and models shared by construction and querying.
pub struct Components {
    pub embedder: Box<dyn EmbeddingProvider>,
    pub generator: Box<dyn GenProvider>,
    pub extractor: Box<dyn EntityExtractor>,
    pub router: RouterModel,
    pub normalizer: Normalizer,
}

impl Components {
    pub fn from_config(cfg: &ConstructConfig) -> Result<Self> {
        let dict = match &cfg.dictionary {
            Some(p) => AbbreviationDictionary::from_json_file(p)?,
            None => AbbreviationDictionary::empty(),
        };
        let stopwords = match &cfg.stopwords {
            Some(p) => load_stopwords(p)?,
            None => BTreeSet::new(),
        };
        let gazetteer = match &cfg.gazetteer {
            Some(p) => Gazetteer::from_file(p)?,
            None => Gazetteer::default(),
        }
        .with_dictionary(&dict);
        let heuristic = HeuristicExtractor { gazetteer };
        let extractor: Box<dyn EntityExtractor> = match &cfg.ner_url {
            Some(url) => Box::new(HttpEntityExtractor::new(
                url,
                Duration::from_millis(cfg.ner_timeout_ms),
                cfg.ner_max_retries,
                heuristic,
            )),
            None => Box::new(heuristic),
        };
        Ok(Self {
            embedder: cfg.embedding.build()?,
            generator: cfg.generation.build()?,
            extractor,
            router: RouterModel::load(&cfg.router_model)?,
            normalizer: Normalizer::new(dict, stopwords),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub docs: usize,
    pub chunks: usize,
    pub chunks_per_category: BTreeMap<String, usize>,
    pub entities: usize,
    pub mentions: usize,
    pub relations: usize,
    /// Triplets dropped by the provider's validation or by the graph.
    pub rejected: usize,
    /// NER calls served by the heuristic fallback.
    pub fallbacks: usize,
    /// Chunks whose relation extraction failed outright.
    pub relation_failures: usize,
}

impl std::fmt::Display for BuildReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "docs:              {}", self.docs)?;
        writeln!(f, "chunks:            {}", self.chunks)?;
        for (label, n) in &self.chunks_per_category {
            writeln!(f, "  {label}: {n}")?;
        }
        writeln!(f, "entities:          {}", self.entities)?;
        writeln!(f, "mentions:          {}", self.mentions)?;
        writeln!(f, "relations:         {}", self.relations)?;
        writeln!(f, "rejected:          {}", self.rejected)?;
        writeln!(f, "fallbacks:         {}", self.fallbacks)?;
        write!(f, "relation failures: {}", self.relation_failures)
    }
}

/// Builds the index and graph from loaded documents. Per-chunk stages run
/// under `exec`; graph insertion is sequential in chunk order, so the
/// result does not depend on scheduling.
pub fn build(
    docs: &[Document],
    chunking: &ChunkConfig,
    parts: &Components,
    exec: Execution,
) -> Result<(RegulationGraph, VectorStore, BuildReport)> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let chunks = chunk_corpus(docs, chunking, &parts.normalizer, exec)?;
    let norm: Vec<&str> = chunks.iter().map(|c| embeddable(&c.norm_text, &c.text)).collect();

    let vectors = embed_texts(parts.embedder.as_ref(), &norm)?;
    let labels = par::map(exec, &norm, |t| parts.router.predict(t).label.name);
    let entities = par::try_map(exec, &chunks, |c| parts.extractor.extract(&c.text, &c.chunk_id))?;
    let relations = par::map_range(exec, chunks.len(), |i| {
        parts
            .generator
            .extract_relations(&chunks[i].chunk_id, &chunks[i].text, &entities[i])
    });

    let mut store = VectorStore::new(parts.embedder.dim());
    let mut graph = RegulationGraph::new();
    for l in parts.router.labels() {
        graph.add_category(&l.name);
    }
    let mut report = BuildReport {
        docs: docs.len(),
        chunks: chunks.len(),
        ..Default::default()
    };
    for (i, chunk) in chunks.iter().enumerate() {
        store.upsert(VectorRecord {
            chunk_id: chunk.chunk_id.clone(),
            text: chunk.text.clone(),
            vector: vectors[i].clone(),
        })?;
        graph.attach_chunk(
            ChunkNode {
                chunk_id: chunk.chunk_id.clone(),
                doc_id: chunk.doc_id.clone(),
                text: chunk.text.clone(),
            },
            &labels[i],
        )?;
        for e in &entities[i] {
            graph.add_mention(&chunk.chunk_id, e)?;
        }
        match &relations[i] {
            Ok(triplets) => {
                for t in triplets {
                    if let Err(e) = graph.add_relation(t.clone()) {
                        log::debug!("dropping relation {}: {e}", t.render());
                        report.rejected += 1;
                    }
                }
            }
            Err(e) => {
                log::warn!("relation extraction failed for chunk {}: {e}", chunk.chunk_id);
                report.relation_failures += 1;
            }
        }
    }
    let stats = graph.stats();
    report.chunks_per_category = graph.categories().into_iter().collect();
    report.entities = stats.entities;
    report.mentions = stats.mentions;
    report.relations = stats.related_to;
    report.rejected += parts.generator.rejected_relations();
    report.fallbacks = parts.extractor.fallbacks();
    Ok((graph, store, report))
}

/// Loads the corpus, builds, and persists to `cfg.out_dir` when set. Nothing
/// is written unless the whole build succeeds.
pub fn construct(corpus: &Path, cfg: &ConstructConfig) -> Result<(RegulationGraph, VectorStore, BuildReport)> {
    cfg.embedding.validate()?;
    cfg.generation.validate()?;
    let docs = load_corpus(corpus)?;
    let parts = Components::from_config(cfg)?;
    let (graph, store, report) = build(&docs, &cfg.chunk, &parts, cfg.exec)?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        store.save(&dir.join(VSTORE_FILE))?;
        graph.save(&dir.join(GRAPH_FILE))?;
    }
    Ok((graph, store, report))
}

/// Normalization can strip a text down to nothing (all stopwords); fall
/// back to the raw text so it still has a direction.
fn embeddable<'a>(norm: &'a str, raw: &'a str) -> &'a str {
    if norm.trim().is_empty() {
        raw.trim()
    } else {
        norm
    }
}

// ---------------------------------------------------------------------------
// Query

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    /// Vector top-k plus routed category-subgraph retrieval.
    #[default]
    CatRag,
    /// Vector top-k only.
    Rag,
}

impl RetrievalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMode::CatRag => "catrag",
            RetrievalMode::Rag => "rag",
        }
    }
}

impl std::str::FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "catrag" | "cr" => Ok(RetrievalMode::CatRag),
            "rag" | "r" => Ok(RetrievalMode::Rag),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?} (expected catrag or rag)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    pub k_vec: usize,
    pub k_graph: usize,
    /// Minimum cosine for graph candidates. Values above 1 switch graph
    /// retrieval off.
    pub sim_threshold: f64,
    pub max_context_chars: usize,
    pub mode: RetrievalMode,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            k_vec: 5,
            k_graph: 5,
            sim_threshold: 0.7,
            max_context_chars: 24_000,
            mode: RetrievalMode::CatRag,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_vec == 0 {
            return Err(Error::InvalidConfig("k_vec must be at least 1".into()));
        }
        if self.k_graph == 0 {
            return Err(Error::InvalidConfig("k_graph must be at least 1".into()));
        }
        if !self.sim_threshold.is_finite() || self.sim_threshold < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "sim_threshold {} must be a non-negative number",
                self.sim_threshold
            )));
        }
        if self.max_context_chars == 0 {
            return Err(Error::InvalidConfig("max_context_chars must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedLabel {
    pub name: String,
    pub confidence: f64,
    pub low_signal: bool,
}

/// Wall-clock milliseconds per query stage. Stages are measured between
/// consecutive checkpoints, so they sum to `total_ms`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub embed_ms: f64,
    pub route_ms: f64,
    pub vector_ms: f64,
    pub graph_ms: f64,
    pub expand_ms: f64,
    pub assemble_ms: f64,
    pub generate_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.embed_ms + self.route_ms + self.vector_ms + self.graph_ms + self.expand_ms + self.assemble_ms + self.generate_ms
    }

    pub fn accumulate(&mut self, o: &StageTimings) {
        self.embed_ms += o.embed_ms;
        self.route_ms += o.route_ms;
        self.vector_ms += o.vector_ms;
        self.graph_ms += o.graph_ms;
        self.expand_ms += o.expand_ms;
        self.assemble_ms += o.assemble_ms;
        self.generate_ms += o.generate_ms;
        self.total_ms += o.total_ms;
    }

    pub fn scaled(&self, f: f64) -> StageTimings {
        StageTimings {
            embed_ms: self.embed_ms * f,
            route_ms: self.route_ms * f,
            vector_ms: self.vector_ms * f,
            graph_ms: self.graph_ms * f,
            expand_ms: self.expand_ms * f,
            assemble_ms: self.assemble_ms * f,
            generate_ms: self.generate_ms * f,
            total_ms: self.total_ms * f,
        }
    }
}

struct Clock {
    start: Instant,
    last: Instant,
}

impl Clock {
    fn start() -> Self {
        let now = Instant::now();
        Self { start: now, last: now }
    }

    fn lap(&mut self) -> f64 {
        let now = Instant::now();
        let ms = (now - self.last).as_secs_f64() * 1e3;
        self.last = now;
        ms
    }

    fn total(&self) -> f64 {
        (self.last - self.start).as_secs_f64() * 1e3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub mode: RetrievalMode,
    /// Empty when generation failed.
    pub answer: String,
    pub label: Option<RoutedLabel>,
    pub vec_hits: Vec<ScoredHit>,
    pub graph_hits: Vec<ScoredHit>,
    pub entities: IndexSet<String>,
    pub relations: Vec<RelationTriplet>,
    pub merged_context_ids: Vec<String>,
    pub timings: StageTimings,
}

/// Frozen stores plus providers; `query` takes `&self` and is safe to call
/// from many threads.
pub struct Engine {
    pub vstore: VectorStore,
    pub graph: RegulationGraph,
    pub router: RouterModel,
    pub embedder: Box<dyn EmbeddingProvider>,
    pub generator: Box<dyn GenProvider>,
    pub normalizer: Normalizer,
    pub defaults: QueryConfig,
}

impl Engine {
    pub fn new(vstore: VectorStore, graph: RegulationGraph, parts: Components, defaults: QueryConfig) -> Result<Self> {
        defaults.validate()?;
        if !vstore.is_empty() && vstore.dim() != parts.embedder.dim() {
            return Err(Error::DimMismatch {
                expected: vstore.dim(),
                found: parts.embedder.dim(),
            });
        }
        Ok(Self {
            vstore,
            graph,
            router: parts.router,
            embedder: parts.embedder,
            generator: parts.generator,
            normalizer: parts.normalizer,
            defaults,
        })
    }

    /// Loads graph.jsonl and vstore.jsonl from `dir`.
    pub fn open(dir: &Path, parts: Components, defaults: QueryConfig) -> Result<Self> {
        let vstore = VectorStore::load(&dir.join(VSTORE_FILE))?;
        let graph = RegulationGraph::load(&dir.join(GRAPH_FILE))?;
        Self::new(vstore, graph, parts, defaults)
    }

    pub fn query(&self, q: &str, cfg: &QueryConfig) -> Result<QueryResult> {
        cfg.validate()?;
        let q = q.trim();
        if q.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let mut clock = Clock::start();
        let mut t = StageTimings::default();

        let normalized = self.normalizer.normalize(q);
        let text = embeddable(&normalized, q);
        let v_q = embed_one(self.embedder.as_ref(), text)?;
        t.embed_ms = clock.lap();

        let label = (cfg.mode == RetrievalMode::CatRag).then(|| {
            let p = self.router.predict(text);
            RoutedLabel {
                name: p.label.name,
                confidence: p.confidence,
                low_signal: p.low_signal,
            }
        });
        t.route_ms = clock.lap();

        let vec_hits = self.vstore.top_k(&v_q, cfg.k_vec)?;
        t.vector_ms = clock.lap();

        let graph_hits = match &label {
            Some(l) => self.graph.top_k_chunks(&l.name, &v_q, cfg.k_graph, cfg.sim_threshold, &self.vstore),
            None => Vec::new(),
        };
        t.graph_ms = clock.lap();

        let mut entities = IndexSet::new();
        for h in &graph_hits {
            entities.extend(self.graph.entities_of(&h.chunk_id));
        }
        let relations = match &label {
            Some(l) => self
                .graph
                .relations_among(&entities.iter().cloned().collect(), &l.name),
            None => Vec::new(),
        };
        t.expand_ms = clock.lap();

        let mut seen = BTreeSet::new();
        let merged: Vec<&ScoredHit> = vec_hits
            .iter()
            .chain(&graph_hits)
            .filter(|h| seen.insert(h.chunk_id.as_str()))
            .collect();
        let context = AssembledContext {
            chunks: merged
                .iter()
                .map(|h| ContextChunk {
                    chunk_id: h.chunk_id.clone(),
                    score: h.score,
                    category: self.graph.category_of(&h.chunk_id).map(str::to_string),
                    text: h.text.clone(),
                })
                .collect(),
            entities: entities.iter().cloned().collect(),
            relations: relations.clone(),
        }
        .truncated(cfg.max_context_chars);
        let merged_context_ids = merged.iter().map(|h| h.chunk_id.clone()).collect();
        t.assemble_ms = clock.lap();

        let generated = self.generator.generate(q, &context);
        t.generate_ms = clock.lap();
        t.total_ms = clock.total();

        let mut result = QueryResult {
            query: q.to_string(),
            mode: cfg.mode,
            answer: String::new(),
            label,
            vec_hits,
            graph_hits,
            entities,
            relations,
            merged_context_ids,
            timings: t,
        };
        match generated {
            Ok(answer) => {
                result.answer = answer;
                Ok(result)
            }
            Err(e) => Err(Error::GenerationUnavailable {
                message: e.to_string(),
                evidence: Some(Box::new(result)),
            }),
        }
    }
}

impl QaSystem for Engine {
    fn answer(&self, question: &str, mode: RetrievalMode, graph_threshold: Option<f64>) -> Result<QueryResult> {
        let mut cfg = self.defaults;
        cfg.mode = mode;
        if let Some(t) = graph_threshold {
            cfg.sim_threshold = t;
        }
        self.query(question, &cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::StubEmbedder;
    use crate::llm::StubGenerator;
    use crate::router::{train, TrainConfig, TrainingExample};

    fn router() -> RouterModel {
        let ex = |t: &str, l: &str| TrainingExample {
            text: t.into(),
            label: l.into(),
        };
        let data = vec![
            ex("semester weeks exam schedule", "Academic"),
            ex("course credit semester registration", "Academic"),
            ex("tuition fee payment refund", "Finance"),
            ex("scholarship fee deadline payment", "Finance"),
            ex("dormitory housing room", "Housing"),
        ];
        train(
            &data,
            &TrainConfig {
                epochs: 50,
                dim: 16,
                bucket_count: 1 << 12,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn parts() -> Components {
        Components {
            embedder: Box::new(StubEmbedder::new(3, 64)),
            generator: Box::new(StubGenerator::default()),
            extractor: Box::new(HeuristicExtractor {
                gazetteer: Gazetteer::new(["tuition fee", "semester"]),
            }),
            router: router(),
            normalizer: Normalizer::default(),
        }
    }

    fn docs() -> Vec<Document> {
        vec![
            Document {
                doc_id: "acad".into(),
                source: "acad".into(),
                text: "The semester lasts 15 weeks. Each semester ends with the Final Exam week.".into(),
            },
            Document {
                doc_id: "fin".into(),
                source: "fin".into(),
                text: "The tuition fee is due before the semester starts. Late payment of the tuition fee adds a penalty."
                    .into(),
            },
        ]
    }

    fn engine() -> Engine {
        let p = parts();
        let chunking = ChunkConfig {
            size: 60,
            overlap: 10,
            snap_to_whitespace: true,
        };
        let (g, v, _) = build(&docs(), &chunking, &p, Execution::Sequential).unwrap();
        Engine::new(v, g, p, QueryConfig::default()).unwrap()
    }

    #[test]
    fn build_invariants() {
        let p = parts();
        let (g, v, report) = build(&docs(), &ChunkConfig::default(), &p, Execution::Parallel).unwrap();
        assert_eq!(v.len(), report.chunks);
        assert_eq!(g.stats().has_chunk, report.chunks);
        assert!(g.violations().is_empty());
        assert_eq!(report.docs, 2);
        assert!(matches!(build(&[], &ChunkConfig::default(), &p, Execution::Parallel), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn sequential_and_parallel_builds_match() {
        let p = parts();
        let a = build(&docs(), &ChunkConfig::default(), &p, Execution::Sequential).unwrap();
        let b = build(&docs(), &ChunkConfig::default(), &p, Execution::Parallel).unwrap();
        assert_eq!(a.0.to_jsonl(), b.0.to_jsonl());
        assert_eq!(a.1.to_jsonl(), b.1.to_jsonl());
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn query_semester_hits_semester_chunk() {
        let e = engine();
        let r = e.query("how long is a semester", &QueryConfig::default()).unwrap();
        assert!(r.vec_hits[0].text.contains("semester lasts 15 weeks"));
        assert_eq!(r.merged_context_ids[0], r.vec_hits[0].chunk_id);
        assert!(r.answer.contains(&r.vec_hits[0].text));
    }

    #[test]
    fn query_contracts() {
        let e = engine();
        assert!(matches!(e.query("   ", &QueryConfig::default()), Err(Error::EmptyQuery)));

        let off = QueryConfig {
            sim_threshold: 1.1,
            ..Default::default()
        };
        let r = e.query("tuition fee payment", &off).unwrap();
        assert!(r.graph_hits.is_empty() && r.entities.is_empty() && r.relations.is_empty());
        assert!(!r.answer.is_empty());

        let rag = QueryConfig {
            mode: RetrievalMode::Rag,
            sim_threshold: 0.0,
            ..Default::default()
        };
        let r = e.query("tuition fee payment", &rag).unwrap();
        assert!(r.label.is_none() && r.graph_hits.is_empty());
        assert_eq!(r.merged_context_ids, r.vec_hits.iter().map(|h| h.chunk_id.clone()).collect::<Vec<_>>());

        let bad = QueryConfig {
            k_vec: 0,
            ..Default::default()
        };
        assert!(matches!(e.query("x", &bad), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn result_invariants() {
        let e = engine();
        let cfg = QueryConfig {
            sim_threshold: 0.0,
            k_vec: 2,
            k_graph: 3,
            ..Default::default()
        };
        let r = e.query("late tuition fee penalty", &cfg).unwrap();
        let label = &r.label.as_ref().unwrap().name;
        let view = e.graph.subgraph(label);
        assert!(r.graph_hits.iter().all(|h| view.chunk_ids.contains(&h.chunk_id)));
        assert!(r.merged_context_ids.len() <= cfg.k_vec + cfg.k_graph);
        let uniq: BTreeSet<_> = r.merged_context_ids.iter().collect();
        assert_eq!(uniq.len(), r.merged_context_ids.len());
        for rel in &r.relations {
            assert!(r.entities.contains(&rel.subject) && r.entities.contains(&rel.object));
        }
        let t = r.timings;
        assert!((t.stage_sum() - t.total_ms).abs() <= 1e-6 + t.total_ms * 1e-9);
    }

    #[test]
    fn empty_category_gives_empty_graph_sets() {
        let e = engine();
        // Housing has training examples but no chunks in this corpus.
        assert!(e.graph.subgraph("Housing").chunk_ids.is_empty());
        let r = e.query("dormitory housing room", &QueryConfig::default()).unwrap();
        if r.label.as_ref().unwrap().name == "Housing" {
            assert!(r.graph_hits.is_empty() && r.entities.is_empty());
        }
    }

    struct Failing;
    impl GenProvider for Failing {
        fn extract_relations(&self, _: &str, _: &str, _: &[crate::ner::Entity]) -> Result<Vec<RelationTriplet>> {
            Err(Error::RelationParse("down".into()))
        }
        fn generate(&self, _: &str, _: &AssembledContext) -> Result<String> {
            Err(Error::ProviderUnavailable("down".into()))
        }
    }

    #[test]
    fn generation_failure_keeps_evidence() {
        let mut p = parts();
        p.generator = Box::new(Failing);
        let (g, v, report) = build(&docs(), &ChunkConfig::default(), &p, Execution::Parallel).unwrap();
        assert_eq!(report.relations, 0);
        assert_eq!(report.relation_failures, report.chunks);
        let e = Engine::new(v, g, p, QueryConfig::default()).unwrap();
        match e.query("semester", &QueryConfig::default()) {
            Err(Error::GenerationUnavailable { evidence: Some(ev), .. }) => {
                assert!(!ev.vec_hits.is_empty());
                assert!(ev.answer.is_empty());
            }
            other => panic!("expected GenerationUnavailable, got {other:?}"),
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("RAG".parse::<RetrievalMode>().unwrap(), RetrievalMode::Rag);
        assert_eq!("catrag".parse::<RetrievalMode>().unwrap(), RetrievalMode::CatRag);
        assert!("hybrid".parse::<RetrievalMode>().is_err());
    }
}
