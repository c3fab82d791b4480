//! Regulation graph: category, chunk, and entity layers joined by
//! `has_chunk`, `mentions`, and `related_to` edges.
//!
//! Each chunk belongs to exactly one category, which partitions the graph
//! into category subgraphs. A subgraph holds its chunks, the entities those
//! chunks mention, and the relations whose provenance chunk it holds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, Embedding};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::llm::RelationTriplet;
use crate::ner::Entity;
use crate::vstore::{hit_order, ScoredHit, VectorStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkNode {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub canonical: String,
    /// Surface form of the first mention.
    pub surface: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CategorySubgraphView {
    pub label: String,
    pub chunk_ids: BTreeSet<String>,
    pub entities: BTreeSet<String>,
    pub relations: BTreeSet<RelationTriplet>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct CategoryState {
    chunk_ids: BTreeSet<String>,
    // canonical -> number of member chunks mentioning it
    entity_refs: BTreeMap<String, usize>,
    relations: BTreeSet<RelationTriplet>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub categories: usize,
    pub chunks: usize,
    pub entities: usize,
    pub has_chunk: usize,
    pub mentions: usize,
    pub related_to: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegulationGraph {
    categories: BTreeMap<String, CategoryState>,
    chunks: BTreeMap<String, ChunkNode>,
    chunk_category: BTreeMap<String, String>,
    entities: BTreeMap<String, EntityNode>,
    mentions: BTreeMap<String, BTreeSet<String>>,
    related: BTreeSet<RelationTriplet>,
}

impl RegulationGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_category(&mut self, label: &str) {
        self.categories.entry(label.to_string()).or_default();
    }

    /// Adds the chunk node (if new) and its single `has_chunk` edge.
    pub fn attach_chunk(&mut self, chunk: ChunkNode, label: &str) -> Result<()> {
        if let Some(existing) = self.chunk_category.get(&chunk.chunk_id) {
            if existing == label {
                return Ok(());
            }
            return Err(Error::ChunkReattachment {
                chunk_id: chunk.chunk_id,
                existing: existing.clone(),
                requested: label.to_string(),
            });
        }
        let id = chunk.chunk_id.clone();
        self.categories.entry(label.to_string()).or_default().chunk_ids.insert(id.clone());
        self.chunk_category.insert(id.clone(), label.to_string());
        self.chunks.insert(id, chunk);
        Ok(())
    }

    pub fn add_mention(&mut self, chunk_id: &str, entity: &Entity) -> Result<()> {
        let label = self
            .chunk_category
            .get(chunk_id)
            .ok_or_else(|| Error::UnknownChunk(chunk_id.to_string()))?
            .clone();
        if entity.canonical.is_empty() {
            return Err(Error::InvalidRelation("entity canonical form is empty".into()));
        }
        self.entities
            .entry(entity.canonical.clone())
            .or_insert_with(|| EntityNode {
                canonical: entity.canonical.clone(),
                surface: entity.surface.clone(),
            });
        if self.mentions.entry(chunk_id.to_string()).or_default().insert(entity.canonical.clone()) {
            let cat = self.categories.get_mut(&label).expect("attached chunk has a category");
            *cat.entity_refs.entry(entity.canonical.clone()).or_default() += 1;
        }
        Ok(())
    }

    /// Stores the relation with endpoints in lexicographic order.
    pub fn add_relation(&mut self, triplet: RelationTriplet) -> Result<()> {
        let label = self
            .chunk_category
            .get(&triplet.chunk_id)
            .ok_or_else(|| Error::UnknownChunk(triplet.chunk_id.clone()))?
            .clone();
        if triplet.subject == triplet.object {
            return Err(Error::InvalidRelation(format!("self-relation on {:?}", triplet.subject)));
        }
        if triplet.predicate.is_empty() {
            return Err(Error::InvalidRelation("empty predicate".into()));
        }
        let mentioned = self.mentions.get(&triplet.chunk_id);
        let ok = |e: &str| mentioned.is_some_and(|m| m.contains(e));
        if !ok(&triplet.subject) || !ok(&triplet.object) {
            return Err(Error::ProvenanceViolation {
                subject: triplet.subject,
                object: triplet.object,
                chunk_id: triplet.chunk_id,
            });
        }
        let t = triplet.undirected();
        if self.related.insert(t.clone()) {
            self.categories.get_mut(&label).expect("attached chunk has a category").relations.insert(t);
        }
        Ok(())
    }

    pub fn category_of(&self, chunk_id: &str) -> Option<&str> {
        self.chunk_category.get(chunk_id).map(String::as_str)
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&ChunkNode> {
        self.chunks.get(chunk_id)
    }

    pub fn entity(&self, canonical: &str) -> Option<&EntityNode> {
        self.entities.get(canonical)
    }

    pub fn chunks(&self) -> impl Iterator<Item = &ChunkNode> {
        self.chunks.values()
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationTriplet> {
        self.related.iter()
    }

    /// Category names with their chunk counts.
    pub fn categories(&self) -> Vec<(String, usize)> {
        self.categories.iter().map(|(k, v)| (k.clone(), v.chunk_ids.len())).collect()
    }

    /// Sorted canonical forms mentioned by `chunk_id`.
    pub fn entities_of(&self, chunk_id: &str) -> Vec<String> {
        self.mentions
            .get(chunk_id)
            .map(|m| m.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// Relations inside `label` whose endpoints both lie in `entity_set`,
    /// ordered by (chunk_id, subject, predicate, object).
    pub fn relations_among(&self, entity_set: &BTreeSet<String>, label: &str) -> Vec<RelationTriplet> {
        if entity_set.len() < 2 {
            return Vec::new();
        }
        self.categories
            .get(label)
            .map(|cat| {
                cat.relations
                    .iter()
                    .filter(|r| entity_set.contains(&r.subject) && entity_set.contains(&r.object))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }

    /// One-hop relations touching `canonical`, in storage order.
    pub fn neighbors(&self, canonical: &str, limit: usize) -> Vec<RelationTriplet> {
        self.related
            .iter()
            .filter(|r| r.subject == canonical || r.object == canonical)
            .take(limit)
            .cloned()
            .collect()
    }

    /// Top-k chunks of `label` by cosine against `query`, keeping scores at
    /// or above `threshold`. Unknown labels yield nothing.
    pub fn top_k_chunks(
        &self,
        label: &str,
        query: &Embedding,
        k: usize,
        threshold: f64,
        vstore: &VectorStore,
    ) -> Vec<ScoredHit> {
        let Some(cat) = self.categories.get(label) else {
            return Vec::new();
        };
        let mut hits: Vec<ScoredHit> = cat
            .chunk_ids
            .iter()
            .filter_map(|id| {
                let rec = vstore.get(id)?;
                let score = cosine(query, &rec.vector).ok()?;
                (score >= threshold).then(|| ScoredHit {
                    chunk_id: id.clone(),
                    score,
                    text: rec.text.clone(),
                })
            })
            .collect();
        hits.sort_by(hit_order);
        hits.truncate(k);
        hits
    }

    /// Incrementally maintained view of one category.
    pub fn subgraph(&self, label: &str) -> CategorySubgraphView {
        let Some(cat) = self.categories.get(label) else {
            return CategorySubgraphView {
                label: label.to_string(),
                ..Default::default()
            };
        };
        CategorySubgraphView {
            label: label.to_string(),
            chunk_ids: cat.chunk_ids.clone(),
            entities: cat.entity_refs.keys().cloned().collect(),
            relations: cat.relations.clone(),
        }
    }

    /// The same view computed by a full scan.
    pub fn subgraph_from_scratch(&self, label: &str) -> CategorySubgraphView {
        let chunk_ids: BTreeSet<String> = self
            .chunk_category
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(c, _)| c.clone())
            .collect();
        let entities = chunk_ids
            .iter()
            .filter_map(|c| self.mentions.get(c))
            .flatten()
            .cloned()
            .collect();
        let relations = self
            .related
            .iter()
            .filter(|r| chunk_ids.contains(&r.chunk_id))
            .cloned()
            .collect();
        CategorySubgraphView {
            label: label.to_string(),
            chunk_ids,
            entities,
            relations,
        }
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            categories: self.categories.len(),
            chunks: self.chunks.len(),
            entities: self.entities.len(),
            has_chunk: self.chunk_category.len(),
            mentions: self.mentions.values().map(BTreeSet::len).sum(),
            related_to: self.related.len(),
        }
    }

    /// Full integrity scan; returns one message per violation.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for id in self.chunks.keys() {
            let edges = self.categories.values().filter(|c| c.chunk_ids.contains(id)).count();
            if edges != 1 {
                out.push(format!("chunk {id} has {edges} category edges"));
            }
        }
        for (chunk, ents) in &self.mentions {
            if !self.chunks.contains_key(chunk) {
                out.push(format!("mention from missing chunk {chunk}"));
            }
            for e in ents {
                if !self.entities.contains_key(e) {
                    out.push(format!("mention of missing entity {e}"));
                }
            }
        }
        for r in &self.related {
            if !self.chunks.contains_key(&r.chunk_id) {
                out.push(format!("relation with missing provenance chunk {}", r.chunk_id));
            }
            for e in [&r.subject, &r.object] {
                if !self.entities.contains_key(e) {
                    out.push(format!("relation endpoint {e} missing"));
                }
                if !self.mentions.get(&r.chunk_id).is_some_and(|m| m.contains(e)) {
                    out.push(format!("relation endpoint {e} not mentioned by {}", r.chunk_id));
                }
            }
        }
        for label in self.categories.keys() {
            if self.subgraph(label) != self.subgraph_from_scratch(label) {
                out.push(format!("view of {label} diverges from a full scan"));
            }
        }
        out
    }

    /// JSONL with records grouped by kind, each group sorted.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |rec: GraphRecord| {
            let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes"));
        };
        for name in self.categories.keys() {
            push(GraphRecord::Category { name: name.clone() });
        }
        for c in self.chunks.values() {
            push(GraphRecord::Chunk(c.clone()));
        }
        for e in self.entities.values() {
            push(GraphRecord::Entity(e.clone()));
        }
        for (chunk_id, category) in &self.chunk_category {
            push(GraphRecord::HasChunk {
                category: category.clone(),
                chunk_id: chunk_id.clone(),
            });
        }
        for (chunk_id, ents) in &self.mentions {
            for e in ents {
                push(GraphRecord::Mentions {
                    chunk_id: chunk_id.clone(),
                    entity: e.clone(),
                });
            }
        }
        for r in &self.related {
            push(GraphRecord::RelatedTo(r.clone()));
        }
        out
    }

    pub fn from_jsonl(raw: &str) -> Result<Self> {
        let mut g = Self::new();
        let mut pending_chunks: BTreeMap<String, (usize, ChunkNode)> = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = i + 1;
            let integrity = |message: String| Error::GraphIntegrity {
                line: line_no,
                message,
            };
            let rec: GraphRecord = serde_json::from_str(line).map_err(|e| integrity(e.to_string()))?;
            match rec {
                GraphRecord::Category { name } => g.add_category(&name),
                GraphRecord::Chunk(c) => {
                    if g.chunks.contains_key(&c.chunk_id) || pending_chunks.contains_key(&c.chunk_id) {
                        return Err(integrity(format!("duplicate chunk {}", c.chunk_id)));
                    }
                    pending_chunks.insert(c.chunk_id.clone(), (line_no, c));
                }
                GraphRecord::Entity(e) => {
                    if g.entities.insert(e.canonical.clone(), e).is_some() {
                        return Err(integrity("duplicate entity".into()));
                    }
                }
                GraphRecord::HasChunk { category, chunk_id } => {
                    let (_, node) = pending_chunks
                        .remove(&chunk_id)
                        .ok_or_else(|| integrity(format!("has_chunk for unknown or re-attached chunk {chunk_id}")))?;
                    if !g.categories.contains_key(&category) {
                        return Err(integrity(format!("has_chunk from unknown category {category}")));
                    }
                    g.attach_chunk(node, &category).map_err(|e| integrity(e.to_string()))?;
                }
                GraphRecord::Mentions { chunk_id, entity } => {
                    let node = g
                        .entities
                        .get(&entity)
                        .ok_or_else(|| integrity(format!("mention of unknown entity {entity}")))?;
                    let e = Entity {
                        surface: node.surface.clone(),
                        canonical: entity,
                        source_chunk: chunk_id.clone(),
                    };
                    g.add_mention(&chunk_id, &e).map_err(|e| integrity(e.to_string()))?;
                }
                GraphRecord::RelatedTo(r) => {
                    for e in [&r.subject, &r.object] {
                        if !g.entities.contains_key(e) {
                            return Err(integrity(format!("relation endpoint {e} is not an entity")));
                        }
                    }
                    g.add_relation(r).map_err(|e| integrity(e.to_string()))?;
                }
            }
        }
        if let Some((id, (line, _))) = pending_chunks.into_iter().next() {
            return Err(Error::GraphIntegrity {
                line,
                message: format!("chunk {id} has no category"),
            });
        }
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum GraphRecord {
    Category { name: String },
    Chunk(ChunkNode),
    Entity(EntityNode),
    HasChunk { category: String, chunk_id: String },
    Mentions { chunk_id: String, entity: String },
    RelatedTo(RelationTriplet),
}
