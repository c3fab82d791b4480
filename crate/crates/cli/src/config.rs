//! Flat `key = value` engine configuration.
//!
//! Lines starting with `#` are comments. Every key can be overridden by an
//! environment variable named `CATRAG_` plus the key upper-cased with dots
//! turned into underscores (`query.k_vec` → `CATRAG_QUERY_K_VEC`). Relative
//! paths resolve against the directory holding the config file. API keys are
//! never read from the file; `generation.api_key_env` names the variable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use catrag_core::embed::{EmbeddingProviderConfig, ProviderKind};
use catrag_core::ingest::ChunkConfig;
use catrag_core::llm::GenProviderConfig;
use catrag_core::pipeline::{Components, GRAPH_FILE, VSTORE_FILE};
use catrag_core::{ConstructConfig, QueryConfig, RetrievalMode};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("config key {key}: invalid value {value:?} ({reason})")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("config key {key} is required")]
    MissingKey { key: String },
    #[error("config key {key}: file {path} does not exist")]
    MissingFile { key: String, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
    pub max_concurrent_queries: usize,
    /// Allowed CORS origin; `*` or unset allows any.
    pub cors_origin: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            max_concurrent_queries: 8,
            cors_origin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub corpus: Option<PathBuf>,
    /// Holds graph.jsonl and vstore.jsonl.
    pub data_dir: PathBuf,
    pub router_model: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub chunk: ChunkConfig,
    pub embedding: EmbeddingProviderConfig,
    pub generation: GenProviderConfig,
    pub ner_url: Option<String>,
    pub ner_timeout_ms: u64,
    pub ner_max_retries: usize,
    pub query: QueryConfig,
    pub server: ServerConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            data_dir: PathBuf::from("."),
            router_model: None,
            dictionary: None,
            gazetteer: None,
            stopwords: None,
            chunk: ChunkConfig::default(),
            embedding: EmbeddingProviderConfig::default(),
            generation: GenProviderConfig::default(),
            ner_url: None,
            ner_timeout_ms: 10_000,
            ner_max_retries: 2,
            query: QueryConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

/// Every recognised key, in documentation order.
pub const KEYS: &[&str] = &[
    "corpus",
    "data_dir",
    "router_model",
    "dictionary",
    "gazetteer",
    "stopwords",
    "chunk.size",
    "chunk.overlap",
    "chunk.snap_to_whitespace",
    "embedding.kind",
    "embedding.dim",
    "embedding.seed",
    "embedding.base_url",
    "embedding.timeout_ms",
    "embedding.batch_size",
    "embedding.max_in_flight",
    "embedding.max_retries",
    "generation.kind",
    "generation.base_url",
    "generation.model_name",
    "generation.api_key_env",
    "generation.temperature",
    "generation.timeout_ms",
    "generation.max_retries",
    "generation.max_context_chars",
    "generation.relation_cap",
    "generation.relation_rps",
    "generation.max_in_flight",
    "ner.url",
    "ner.timeout_ms",
    "ner.max_retries",
    "query.k_vec",
    "query.k_graph",
    "query.sim_threshold",
    "query.mode",
    "server.bind",
    "server.port",
    "server.max_concurrent_queries",
    "server.cors_origin",
];

pub fn env_var_name(key: &str) -> String {
    format!("CATRAG_{}", key.to_ascii_uppercase().replace('.', "_"))
}

/// What a command needs on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Construct,
    Query,
}

impl EngineConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&raw, base, |k| std::env::var(k).ok())
    }

    /// Parses file contents; `env` looks up override variables.
    pub fn parse(raw: &str, base: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey { key: k.to_string() });
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        for key in KEYS {
            if let Some(v) = env(&env_var_name(key)) {
                values.insert(key.to_string(), v.trim().to_string());
            }
        }
        let mut cfg = EngineConfig {
            data_dir: base.to_path_buf(),
            ..Default::default()
        };
        for (k, v) in &values {
            cfg.set(k, v, base)?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), ConfigError> {
        let path = || Some(resolve(base, value));
        let opt = || (!value.is_empty()).then(|| value.to_string());
        match key {
            "corpus" => self.corpus = path(),
            "data_dir" => self.data_dir = resolve(base, value),
            "router_model" => self.router_model = path(),
            "dictionary" => self.dictionary = path(),
            "gazetteer" => self.gazetteer = path(),
            "stopwords" => self.stopwords = path(),
            "chunk.size" => self.chunk.size = num(key, value)?,
            "chunk.overlap" => self.chunk.overlap = num(key, value)?,
            "chunk.snap_to_whitespace" => self.chunk.snap_to_whitespace = num(key, value)?,
            "embedding.kind" => self.embedding.kind = kind(key, value)?,
            "embedding.dim" => self.embedding.dim = num(key, value)?,
            "embedding.seed" => self.embedding.seed = num(key, value)?,
            "embedding.base_url" => self.embedding.base_url = opt(),
            "embedding.timeout_ms" => self.embedding.timeout_ms = num(key, value)?,
            "embedding.batch_size" => self.embedding.batch_size = num(key, value)?,
            "embedding.max_in_flight" => self.embedding.max_in_flight = num(key, value)?,
            "embedding.max_retries" => self.embedding.max_retries = num(key, value)?,
            "generation.kind" => self.generation.kind = kind(key, value)?,
            "generation.base_url" => self.generation.base_url = opt(),
            "generation.model_name" => self.generation.model_name = value.to_string(),
            "generation.api_key_env" => self.generation.api_key_env = value.to_string(),
            "generation.temperature" => self.generation.temperature = num(key, value)?,
            "generation.timeout_ms" => self.generation.timeout_ms = num(key, value)?,
            "generation.max_retries" => self.generation.max_retries = num(key, value)?,
            "generation.max_context_chars" => {
                self.generation.max_context_chars = num(key, value)?;
                self.query.max_context_chars = self.generation.max_context_chars;
            }
            "generation.relation_cap" => self.generation.relation_cap = num(key, value)?,
            "generation.relation_rps" => self.generation.relation_rps = num(key, value)?,
            "generation.max_in_flight" => self.generation.max_in_flight = num(key, value)?,
            "ner.url" => self.ner_url = opt(),
            "ner.timeout_ms" => self.ner_timeout_ms = num(key, value)?,
            "ner.max_retries" => self.ner_max_retries = num(key, value)?,
            "query.k_vec" => self.query.k_vec = num(key, value)?,
            "query.k_graph" => self.query.k_graph = num(key, value)?,
            "query.sim_threshold" => self.query.sim_threshold = num(key, value)?,
            "query.mode" => self.query.mode = num::<RetrievalMode>(key, value)?,
            "server.bind" => self.server.bind = value.to_string(),
            "server.port" => self.server.port = num(key, value)?,
            "server.max_concurrent_queries" => self.server.max_concurrent_queries = num(key, value)?,
            "server.cors_origin" => self.server.cors_origin = opt(),
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// Value-level checks that need no filesystem access.
    fn check(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, value: String, reason: &str| ConfigError::InvalidValue {
            key: key.into(),
            value,
            reason: reason.into(),
        };
        if self.chunk.size == 0 {
            return Err(bad("chunk.size", "0".into(), "must be positive"));
        }
        if self.chunk.overlap >= self.chunk.size {
            return Err(bad("chunk.overlap", self.chunk.overlap.to_string(), "must be smaller than chunk.size"));
        }
        if self.embedding.dim < 2 {
            return Err(bad("embedding.dim", self.embedding.dim.to_string(), "must be at least 2"));
        }
        if self.embedding.kind == ProviderKind::Http && self.embedding.base_url.is_none() {
            return Err(ConfigError::MissingKey {
                key: "embedding.base_url".into(),
            });
        }
        if self.generation.kind == ProviderKind::Http && self.generation.base_url.is_none() {
            return Err(ConfigError::MissingKey {
                key: "generation.base_url".into(),
            });
        }
        if self.query.k_vec == 0 {
            return Err(bad("query.k_vec", "0".into(), "must be at least 1"));
        }
        if self.query.k_graph == 0 {
            return Err(bad("query.k_graph", "0".into(), "must be at least 1"));
        }
        let t = self.query.sim_threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(bad("query.sim_threshold", t.to_string(), "must lie in [0, 1]"));
        }
        if self.server.max_concurrent_queries == 0 {
            return Err(bad("server.max_concurrent_queries", "0".into(), "must be at least 1"));
        }
        Ok(())
    }

    /// Fails fast on the first missing file a command depends on.
    pub fn require_files(&self, needs: Needs) -> Result<(), ConfigError> {
        let must = |key: &str, p: &Option<PathBuf>| -> Result<(), ConfigError> {
            let p = p.as_ref().ok_or_else(|| ConfigError::MissingKey { key: key.into() })?;
            exists(key, p)
        };
        let may = |key: &str, p: &Option<PathBuf>| p.as_ref().map_or(Ok(()), |p| exists(key, p));
        if needs == Needs::Construct {
            must("corpus", &self.corpus)?;
        }
        must("router_model", &self.router_model)?;
        may("dictionary", &self.dictionary)?;
        may("gazetteer", &self.gazetteer)?;
        may("stopwords", &self.stopwords)?;
        if needs == Needs::Query {
            exists("data_dir", &self.data_dir.join(GRAPH_FILE))?;
            exists("data_dir", &self.data_dir.join(VSTORE_FILE))?;
        }
        Ok(())
    }

    pub fn construct_config(&self) -> ConstructConfig {
        let mut c = ConstructConfig::new(self.router_model.clone().unwrap_or_default());
        c.chunk = self.chunk;
        c.embedding = self.embedding.clone();
        c.generation = self.generation.clone();
        c.dictionary = self.dictionary.clone();
        c.stopwords = self.stopwords.clone();
        c.gazetteer = self.gazetteer.clone();
        c.ner_url = self.ner_url.clone();
        c.ner_timeout_ms = self.ner_timeout_ms;
        c.ner_max_retries = self.ner_max_retries;
        c.out_dir = Some(self.data_dir.clone());
        c
    }

    pub fn components(&self) -> catrag_core::Result<Components> {
        Components::from_config(&self.construct_config())
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn exists(key: &str, p: &Path) -> Result<(), ConfigError> {
    if p.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingFile {
            key: key.into(),
            path: p.to_path_buf(),
        })
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn kind(key: &str, value: &str) -> Result<ProviderKind, ConfigError> {
    match value {
        "stub" => Ok(ProviderKind::Stub),
        "http" => Ok(ProviderKind::Http),
        _ => Err(ConfigError::InvalidValue {
            key: key.into(),
            value: value.into(),
            reason: "expected stub or http".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(raw: &str) -> Result<EngineConfig, ConfigError> {
        EngineConfig::parse(raw, Path::new("/base"), |_| None)
    }

    #[test]
    fn defaults_and_relative_paths() {
        let c = parse("# comment\ncorpus = docs\nrouter_model=/abs/model.json\nquery.k_vec = 3\n").unwrap();
        assert_eq!(c.corpus.unwrap(), Path::new("/base/docs"));
        assert_eq!(c.router_model.unwrap(), Path::new("/abs/model.json"));
        assert_eq!(c.data_dir, Path::new("/base"));
        assert_eq!(c.query.k_vec, 3);
        assert_eq!(c.query.k_graph, 5);
        assert_eq!(c.server.max_concurrent_queries, 8);
    }

    #[test]
    fn errors_name_the_key() {
        let e = parse("query.k_vec = many").unwrap_err();
        assert!(e.to_string().contains("query.k_vec"), "{e}");
        let e = parse("query.bogus = 1").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey { ref key } if key == "query.bogus"));
        let e = parse("query.sim_threshold = 1.5").unwrap_err();
        assert!(e.to_string().contains("query.sim_threshold"));
        assert!(matches!(parse("just words"), Err(ConfigError::Syntax { line: 1 })));
        let e = parse("generation.kind = http").unwrap_err();
        assert!(e.to_string().contains("generation.base_url"));
        let e = parse("chunk.size = 100\nchunk.overlap = 100").unwrap_err();
        assert!(e.to_string().contains("chunk.overlap"));
    }

    #[test]
    fn env_overrides_file() {
        let c = EngineConfig::parse("query.k_vec = 3", Path::new("/b"), |k| {
            (k == "CATRAG_QUERY_K_VEC").then(|| "9".to_string())
        })
        .unwrap();
        assert_eq!(c.query.k_vec, 9);
        assert_eq!(env_var_name("server.max_concurrent_queries"), "CATRAG_SERVER_MAX_CONCURRENT_QUERIES");
    }

    #[test]
    fn missing_files_fail_fast() {
        let c = parse("corpus = nowhere\nrouter_model = nothing").unwrap();
        let e = c.require_files(Needs::Construct).unwrap_err();
        assert!(matches!(e, ConfigError::MissingFile { ref key, .. } if key == "corpus"));
        let e = parse("").unwrap().require_files(Needs::Query).unwrap_err();
        assert!(matches!(e, ConfigError::MissingKey { ref key } if key == "router_model"));
    }
}
