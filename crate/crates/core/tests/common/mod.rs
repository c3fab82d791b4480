//! Shared fixtures over the bundled toy dataset.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use catrag_core::embed::{EmbeddingProviderConfig, ProviderKind};
use catrag_core::llm::GenProviderConfig;
use catrag_core::pipeline::Components;
use catrag_core::router::{load_examples, train, RouterModel, TrainConfig};
use catrag_core::{construct, BuildReport, ConstructConfig, Engine, QueryConfig};

pub const SEED: u64 = 42;

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

pub fn toy_router(seed: u64) -> RouterModel {
    let examples = load_examples(&toy_dir().join("labels.jsonl")).unwrap();
    train(
        &examples,
        &TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    )
    .unwrap()
}

/// Stub providers, toy dictionary, stopwords, and gazetteer.
pub fn toy_config(router_model: &Path, out_dir: Option<&Path>) -> ConstructConfig {
    let d = toy_dir();
    let mut cfg = ConstructConfig::new(router_model);
    cfg.embedding = EmbeddingProviderConfig {
        kind: ProviderKind::Stub,
        seed: SEED,
        ..Default::default()
    };
    cfg.generation = GenProviderConfig::default();
    cfg.dictionary = Some(d.join("dict.json"));
    cfg.stopwords = Some(d.join("stopwords.txt"));
    cfg.gazetteer = Some(d.join("gazetteer.txt"));
    cfg.out_dir = out_dir.map(Path::to_path_buf);
    cfg
}

pub struct Toy {
    pub engine: Engine,
    pub report: BuildReport,
    pub dir: tempfile::TempDir,
}

/// Trains the router, builds the toy index into a temp dir, and opens it.
pub fn toy_engine() -> Toy {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("router.json");
    toy_router(SEED).save(&model).unwrap();
    let cfg = toy_config(&model, Some(dir.path()));
    let (_, _, report) = construct(&toy_dir().join("corpus"), &cfg).unwrap();
    let parts = Components::from_config(&cfg).unwrap();
    let engine = Engine::open(dir.path(), parts, QueryConfig::default()).unwrap();
    Toy { engine, report, dir }
}
