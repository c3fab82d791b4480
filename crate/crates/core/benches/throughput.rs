//! Sequential vs parallel throughput of the batch paths.

use std::path::Path;

use catrag_core::embed::{embed_texts, Embedding, StubEmbedder};
use catrag_core::ingest::{load_corpus, AbbreviationDictionary, ChunkConfig, Normalizer};
use catrag_core::llm::StubGenerator;
use catrag_core::ner::{Gazetteer, HeuristicExtractor};
use catrag_core::par::{self, Execution};
use catrag_core::pipeline::{build, Components};
use catrag_core::router::{load_examples, train, TrainConfig};
use catrag_core::vstore::{VectorRecord, VectorStore};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn toy() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

fn random_store(n: usize, dim: usize) -> (VectorStore, Embedding) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = VectorStore::new(dim);
    let vec = |rng: &mut ChaCha8Rng| {
        let mut v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        v[0] += 0.5;
        Embedding::new(v).unwrap()
    };
    for i in 0..n {
        s.upsert(VectorRecord {
            chunk_id: format!("c{i:06}"),
            text: String::new(),
            vector: vec(&mut rng),
        })
        .unwrap();
    }
    let q = vec(&mut rng);
    (s, q)
}

fn top_k(c: &mut Criterion) {
    let mut g = c.benchmark_group("vstore_top_k");
    for n in [1_000, 20_000] {
        let (store, q) = random_store(n, 256);
        for exec in MODES {
            g.bench_with_input(BenchmarkId::new(format!("{exec:?}"), n), &n, |b, _| {
                b.iter(|| store.top_k_with(&q, 5, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn stub_embedding(c: &mut Criterion) {
    let docs = load_corpus(&toy().join("corpus")).unwrap();
    let texts: Vec<String> = docs
        .iter()
        .flat_map(|d| d.text.split("\n\n").map(str::to_string))
        .filter(|t| !t.trim().is_empty())
        .collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut g = c.benchmark_group("stub_embed_batch");
    for exec in MODES {
        let e = StubEmbedder {
            exec,
            ..StubEmbedder::new(7, 768)
        };
        g.bench_function(format!("{exec:?}/{}", refs.len()), |b| b.iter(|| embed_texts(&e, &refs).unwrap()));
    }
    g.finish();
}

fn router_predict(c: &mut Criterion) {
    let examples = load_examples(&toy().join("labels.jsonl")).unwrap();
    let model = train(&examples, &TrainConfig::default()).unwrap();
    let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
    let mut g = c.benchmark_group("router_predict_batch");
    for exec in MODES {
        g.bench_function(format!("{exec:?}/{}", texts.len()), |b| {
            b.iter(|| par::map(exec, &texts, |t| model.predict(t).label.id))
        });
    }
    g.finish();
}

fn construct_toy(c: &mut Criterion) {
    let d = toy();
    let docs = load_corpus(&d.join("corpus")).unwrap();
    let dict = AbbreviationDictionary::from_json_file(&d.join("dict.json")).unwrap();
    let router = train(&load_examples(&d.join("labels.jsonl")).unwrap(), &TrainConfig::default()).unwrap();
    let parts = |exec| Components {
        embedder: Box::new(StubEmbedder {
            exec,
            ..StubEmbedder::new(42, 768)
        }),
        generator: Box::new(StubGenerator::default()),
        extractor: Box::new(HeuristicExtractor {
            gazetteer: Gazetteer::from_file(&d.join("gazetteer.txt")).unwrap().with_dictionary(&dict),
        }),
        router: router.clone(),
        normalizer: Normalizer::new(dict.clone(), Default::default()),
    };
    let chunking = ChunkConfig {
        size: 300,
        overlap: 60,
        snap_to_whitespace: true,
    };
    let mut g = c.benchmark_group("construct_toy");
    g.sample_size(20);
    for exec in MODES {
        let parts = parts(exec);
        g.bench_function(format!("{exec:?}"), |b| b.iter(|| build(&docs, &chunking, &parts, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, top_k, stub_embedding, router_predict, construct_toy);
criterion_main!(benches);
