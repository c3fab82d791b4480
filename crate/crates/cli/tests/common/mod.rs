//! Fixtures shared by the CLI and service tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use catrag_cli::config::EngineConfig;
use catrag_core::embed::embed_texts;
use catrag_core::kgraph::{ChunkNode, RegulationGraph};
use catrag_core::llm::RelationTriplet;
use catrag_core::ner::Entity;
use catrag_core::pipeline::Components;
use catrag_core::router::{load_examples, train, TrainConfig};
use catrag_core::vstore::{VectorRecord, VectorStore};
use catrag_core::{Engine, QueryConfig};

pub const SEED: u64 = 42;

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

/// Loads the bundled toy config with the index and router redirected to `dir`.
pub fn toy_config(dir: &Path) -> EngineConfig {
    let cfg_path = toy_dir().join("engine.cfg");
    let raw = std::fs::read_to_string(&cfg_path).unwrap();
    let data_dir = dir.display().to_string();
    let router = dir.join("router.json").display().to_string();
    EngineConfig::parse(&raw, &toy_dir(), |k| match k {
        "CATRAG_DATA_DIR" => Some(data_dir.clone()),
        "CATRAG_ROUTER_MODEL" => Some(router.clone()),
        _ => None,
    })
    .unwrap()
}

/// Trains the toy router into `dir/router.json` and returns the config.
pub fn toy_setup(dir: &Path) -> EngineConfig {
    let examples = load_examples(&toy_dir().join("labels.jsonl")).unwrap();
    let model = train(
        &examples,
        &TrainConfig {
            seed: SEED,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    model.save(&dir.join("router.json")).unwrap();
    toy_config(dir)
}

pub const TUITION: &str = "Tuition is due before the semester starts. Late tuition incurs a fee.";
pub const DORM: &str = "The dormitory closes at midnight. Guests must leave the dormitory by then.";

fn mention(chunk: &str, canonical: &str) -> Entity {
    Entity {
        surface: canonical.to_string(),
        canonical: canonical.to_string(),
        source_chunk: chunk.to_string(),
    }
}

fn triplet(chunk: &str, s: &str, p: &str, o: &str) -> RelationTriplet {
    RelationTriplet {
        chunk_id: chunk.into(),
        subject: s.into(),
        predicate: p.into(),
        object: o.into(),
    }
}

/// The three relations of the two-chunk graph, in stored (undirected) form.
pub fn tiny_relations() -> Vec<RelationTriplet> {
    vec![
        triplet("c-fin", "semester", "due_before", "tuition"),
        triplet("c-fin", "fee", "charged_for_late", "tuition"),
        triplet("c-dorm", "dormitory", "closes_at", "midnight"),
    ]
}

/// Two chunks in two categories with hand-written relations, stub providers.
pub fn tiny_engine(dir: &Path) -> Engine {
    let cfg = toy_setup(dir);
    let parts: Components = cfg.components().unwrap();
    let mut g = RegulationGraph::new();
    let mut v = VectorStore::new(parts.embedder.dim());
    for (id, label, text, ents) in [
        ("c-fin", "Finance", TUITION, &["tuition", "semester", "fee"][..]),
        ("c-dorm", "StudentAffairs", DORM, &["dormitory", "midnight"][..]),
    ] {
        g.add_category(label);
        g.attach_chunk(
            ChunkNode {
                chunk_id: id.into(),
                doc_id: format!("{id}.md"),
                text: text.into(),
            },
            label,
        )
        .unwrap();
        for e in ents {
            g.add_mention(id, &mention(id, e)).unwrap();
        }
        let vector = embed_texts(parts.embedder.as_ref(), &[text]).unwrap().remove(0);
        v.upsert(VectorRecord {
            chunk_id: id.into(),
            text: text.into(),
            vector,
        })
        .unwrap();
    }
    for t in tiny_relations() {
        g.add_relation(t).unwrap();
    }
    Engine::new(v, g, parts, QueryConfig::default()).unwrap()
}
