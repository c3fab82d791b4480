//! Category-guided hybrid retrieval over a dense vector index and a
//! category-partitioned regulation knowledge graph.
//!
//! The construct pipeline chunks a corpus, embeds every chunk into a
//! [`vstore::VectorStore`], routes each chunk to a category with the
//! [`router::RouterModel`], and links extracted entities and relations into a
//! [`kgraph::RegulationGraph`]. The query pipeline combines global vector
//! top-k with top-k retrieval inside the predicted category subgraph, expands
//! entities and relations, and hands the assembled context to a generation
//! provider.
//!
//! Batch stages run on rayon when the `parallel` feature is enabled (the
//! default); see [`par::Execution`].

pub mod embed;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod kgraph;
pub mod llm;
pub mod ner;
pub mod par;
pub mod pipeline;
pub mod router;
pub mod vstore;

mod fsutil;
mod http;

pub use error::{Error, Result};
pub use pipeline::{construct, BuildReport, ConstructConfig, Engine, QueryConfig, QueryResult, RetrievalMode};
