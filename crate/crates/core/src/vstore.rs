//! Exact dense index over chunk embeddings with JSONL persistence.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, Embedding};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub chunk_id: String,
    pub text: String,
    pub vector: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub chunk_id: String,
    pub score: f64,
    pub text: String,
}

/// Score descending, then chunk id ascending.
pub fn hit_order(a: &ScoredHit, b: &ScoredHit) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.chunk_id.cmp(&b.chunk_id))
}

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    count: usize,
}

/// Exact top-k index. A store created with dim 0 adopts the dim of its first
/// record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorStore {
    dim: usize,
    records: Vec<VectorRecord>,
    index: HashMap<String, usize>,
}

impl VectorStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, chunk_id: &str) -> Option<&VectorRecord> {
        self.index.get(chunk_id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[VectorRecord] {
        &self.records
    }

    /// Inserts or replaces by chunk id. The vector is stored unit-length.
    pub fn upsert(&mut self, mut record: VectorRecord) -> Result<()> {
        if self.dim == 0 && self.records.is_empty() {
            self.dim = record.vector.dim();
        }
        if record.vector.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: record.vector.dim(),
            });
        }
        if !record.vector.is_unit(1e-6) {
            record.vector = record.vector.normalized()?;
        }
        match self.index.get(&record.chunk_id) {
            Some(&i) => self.records[i] = record,
            None => {
                self.index.insert(record.chunk_id.clone(), self.records.len());
                self.records.push(record);
            }
        }
        Ok(())
    }

    pub fn top_k(&self, query: &Embedding, k: usize) -> Result<Vec<ScoredHit>> {
        self.top_k_with(query, k, Execution::Parallel)
    }

    /// Exact linear scan; `exec` only changes how scores are computed.
    pub fn top_k_with(&self, query: &Embedding, k: usize, exec: Execution) -> Result<Vec<ScoredHit>> {
        if self.records.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        if query.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let scores = par::try_map(exec, &self.records, |r| cosine(query, &r.vector))?;
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        let cmp = |&a: &usize, &b: &usize| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.records[a].chunk_id.cmp(&self.records[b].chunk_id))
        };
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(order
            .into_iter()
            .map(|i| ScoredHit {
                chunk_id: self.records[i].chunk_id.clone(),
                score: scores[i],
                text: self.records[i].text.clone(),
            })
            .collect())
    }

    /// JSONL body: header line, then records sorted by chunk id.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = Header {
            dim: self.dim,
            count: self.records.len(),
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"));
        let mut sorted: Vec<&VectorRecord> = self.records.iter().collect();
        sorted.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
        for r in sorted {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"));
        }
        out
    }

    pub fn from_jsonl(raw: &str) -> Result<Self> {
        let mut lines = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((hline, first)) = lines.next() else {
            return Ok(Self::default());
        };
        let header: Header = serde_json::from_str(first).map_err(|e| Error::Persistence {
            line: hline + 1,
            message: format!("bad header: {e}"),
        })?;
        let mut store = Self::new(header.dim);
        for (i, line) in lines {
            let line_no = i + 1;
            let persist = |message: String| Error::Persistence {
                line: line_no,
                message,
            };
            let rec: VectorRecord = serde_json::from_str(line).map_err(|e| persist(e.to_string()))?;
            if store.index.contains_key(&rec.chunk_id) {
                return Err(persist(format!("duplicate chunk_id {:?}", rec.chunk_id)));
            }
            store.upsert(rec).map_err(|e| persist(e.to_string()))?;
        }
        if store.len() != header.count {
            return Err(Error::Persistence {
                line: hline + 1,
                message: format!("header count {} but {} records", header.count, store.len()),
            });
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&read_to_string(path)?)
    }
}
