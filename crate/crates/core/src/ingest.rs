//! Corpus loading, text normalization, and deterministic chunking.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsutil::read_to_string;
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub seq: usize,
    /// Character offset of the window start within the document.
    pub start_char: usize,
    /// Verbatim slice of the source document.
    pub text: String,
    /// Lowercased, dictionary-expanded, stopword-free form used for
    /// classification and embedding.
    pub norm_text: String,
}

/// Hex digest of `(doc_id, seq)`, truncated to 16 characters.
pub fn chunk_id(doc_id: &str, seq: usize) -> String {
    let mut h = Sha256::new();
    h.update(doc_id.as_bytes());
    h.update([0u8]);
    h.update(seq.to_string().as_bytes());
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Deserialize)]
struct CorpusRecord {
    doc_id: String,
    text: String,
}

/// Loads a directory of `.txt`/`.md` files, a single text file, or a
/// `.jsonl` file of `{"doc_id", "text"}` records. Output is sorted by id.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    if meta.is_dir() {
        let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
            if p.is_file() && matches!(ext, "txt" | "md") {
                files.push(p);
            }
        }
        files.sort();
        for p in files {
            docs.push(load_text_file(&p)?);
        }
    } else if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        let raw = read_to_string(path)?;
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
            docs.push(Document {
                doc_id: rec.doc_id,
                source: format!("{}:{}", path.display(), i + 1),
                text: rec.text,
            });
        }
    } else {
        docs.push(load_text_file(path)?);
    }

    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    for d in &docs {
        if d.doc_id.is_empty() {
            return Err(Error::MalformedRecord {
                line: 0,
                message: format!("empty doc_id in {}", d.source),
            });
        }
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::DuplicateDocument(d.doc_id.clone()));
        }
        if d.text.trim().is_empty() {
            return Err(Error::EmptyDocument(d.doc_id.clone()));
        }
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(docs)
}

fn load_text_file(p: &Path) -> Result<Document> {
    let text = read_to_string(p)?;
    let doc_id = p
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    Ok(Document {
        doc_id,
        source: p.display().to_string(),
        text,
    })
}

/// Abbreviation to expansion map. Keys are lowercase; matching is
/// longest-first at word boundaries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AbbreviationDictionary {
    entries: BTreeMap<String, String>,
    // keys as char vectors, longest first
    by_len: Vec<(Vec<char>, String)>,
}

impl AbbreviationDictionary {
    /// Builds a dictionary, lowercasing keys and expansions.
    ///
    /// Rejects empty keys, keys equal to their expansion, and expansions that
    /// contain any key as a whole word (these would make normalization
    /// non-idempotent).
    pub fn new<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut entries = BTreeMap::new();
        for (k, v) in pairs {
            let key = collapse_ws(&k.as_ref().to_lowercase());
            let val = collapse_ws(&v.as_ref().to_lowercase());
            if key.is_empty() {
                return Err(Error::InvalidDictionary("empty abbreviation".into()));
            }
            if key == val {
                return Err(Error::InvalidDictionary(format!("{key:?} expands to itself")));
            }
            if entries.insert(key.clone(), val).is_some() {
                return Err(Error::InvalidDictionary(format!("duplicate abbreviation {key:?}")));
            }
        }
        let mut by_len: Vec<(Vec<char>, String)> = entries
            .iter()
            .map(|(k, v)| (k.chars().collect(), v.clone()))
            .collect();
        by_len.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        let dict = Self { entries, by_len };
        for (key, val) in &dict.entries {
            let chars: Vec<char> = val.chars().collect();
            if (0..chars.len()).any(|i| is_word_start(&chars, i) && dict.match_at(&chars, i).is_some()) {
                return Err(Error::InvalidDictionary(format!(
                    "expansion of {key:?} contains another abbreviation"
                )));
            }
        }
        Ok(dict)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Reads `{"abbrev": "expansion", ...}`.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw = read_to_string(path)?;
        let map: BTreeMap<String, String> =
            serde_json::from_str(&raw).map_err(|e| Error::InvalidDictionary(e.to_string()))?;
        Self::new(map)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, abbrev: &str) -> Option<&str> {
        self.entries.get(abbrev).map(String::as_str)
    }

    pub fn expansions(&self) -> impl Iterator<Item = &str> {
        self.entries.values().map(String::as_str)
    }

    /// Longest key matching at `i` and ending on a word boundary.
    fn match_at(&self, chars: &[char], i: usize) -> Option<(usize, &str)> {
        self.by_len.iter().find_map(|(key, val)| {
            let end = i + key.len();
            (end <= chars.len()
                && chars[i..end] == key[..]
                && (end == chars.len() || !chars[end].is_alphanumeric()))
            .then_some((key.len(), val.as_str()))
        })
    }

    /// Single left-to-right pass replacing whole-word keys; `text` must
    /// already be lowercase.
    fn expand(&self, text: &str) -> String {
        if self.by_len.is_empty() {
            return text.to_string();
        }
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        while i < chars.len() {
            if is_word_start(&chars, i) {
                if let Some((len, val)) = self.match_at(&chars, i) {
                    out.push_str(val);
                    i += len;
                    continue;
                }
            }
            out.push(chars[i]);
            i += 1;
        }
        out
    }
}

fn is_word_start(chars: &[char], i: usize) -> bool {
    i == 0 || !chars[i - 1].is_alphanumeric()
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reads a stopword list, one token per line.
pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    Ok(read_to_string(path)?
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Lowercase, expand abbreviations, drop stopwords, collapse whitespace.
pub fn normalize(text: &str, dict: &AbbreviationDictionary, stopwords: &BTreeSet<String>) -> String {
    let expanded = dict.expand(&collapse_ws(&text.to_lowercase()));
    expanded
        .split_whitespace()
        .filter(|tok| !stopwords.contains(*tok))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Dictionary and stopwords bundled for repeated use.
#[derive(Debug, Clone, Default)]
pub struct Normalizer {
    pub dict: AbbreviationDictionary,
    pub stopwords: BTreeSet<String>,
}

impl Normalizer {
    pub fn new(dict: AbbreviationDictionary, stopwords: BTreeSet<String>) -> Self {
        let stopwords = stopwords.into_iter().map(|s| s.to_lowercase()).collect();
        Self { dict, stopwords }
    }

    pub fn normalize(&self, text: &str) -> String {
        normalize(text, &self.dict, &self.stopwords)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    /// Window length in characters.
    pub size: usize,
    /// Characters shared by consecutive windows.
    pub overlap: usize,
    /// Pull window ends back to whitespace found in the trailing 15%.
    pub snap_to_whitespace: bool,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            size: 1000,
            overlap: 200,
            snap_to_whitespace: true,
        }
    }
}

/// Splits a document into overlapping character windows.
pub fn chunk_document(doc: &Document, cfg: &ChunkConfig, normalizer: &Normalizer) -> Result<Vec<Chunk>> {
    if cfg.size == 0 || cfg.overlap >= cfg.size {
        return Err(Error::InvalidChunking {
            size: cfg.size,
            overlap: cfg.overlap,
        });
    }
    if doc.text.is_empty() {
        return Err(Error::EmptyDocument(doc.doc_id.clone()));
    }
    let chars: Vec<char> = doc.text.chars().collect();
    // byte offset of every char position, plus the end
    let mut offsets: Vec<usize> = doc.text.char_indices().map(|(b, _)| b).collect();
    offsets.push(doc.text.len());

    let n = chars.len();
    let snap_span = cfg.size * 15 / 100;
    let mut chunks = Vec::new();
    let mut start = 0usize;
    loop {
        let mut end = (start + cfg.size).min(n);
        if cfg.snap_to_whitespace && end < n && snap_span > 0 {
            let floor = end - snap_span;
            if let Some(ws) = (floor..end).rev().find(|&i| chars[i].is_whitespace()) {
                if ws > start {
                    end = ws;
                }
            }
        }
        let text = &doc.text[offsets[start]..offsets[end]];
        let seq = chunks.len();
        chunks.push(Chunk {
            chunk_id: chunk_id(&doc.doc_id, seq),
            doc_id: doc.doc_id.clone(),
            seq,
            start_char: start,
            text: text.to_string(),
            norm_text: normalizer.normalize(text),
        });
        if end >= n {
            break;
        }
        start = end.saturating_sub(cfg.overlap).max(start + 1);
    }
    Ok(chunks)
}

/// Chunks every document, preserving corpus order.
pub fn chunk_corpus(
    docs: &[Document],
    cfg: &ChunkConfig,
    normalizer: &Normalizer,
    exec: Execution,
) -> Result<Vec<Chunk>> {
    let per_doc = par::try_map(exec, docs, |d| chunk_document(d, cfg, normalizer))?;
    Ok(per_doc.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(text: &str) -> Document {
        Document {
            doc_id: "d".into(),
            source: "mem".into(),
            text: text.into(),
        }
    }

    fn no_snap(size: usize, overlap: usize) -> ChunkConfig {
        ChunkConfig {
            size,
            overlap,
            snap_to_whitespace: false,
        }
    }

    #[test]
    fn normalize_expands_then_lowercases() {
        let dict = AbbreviationDictionary::new([("gpa", "grade point average"), ("sv", "sinh viên")]).unwrap();
        let out = normalize("SV đạt GPA 2.0", &dict, &BTreeSet::new());
        assert_eq!(out, "sinh viên đạt grade point average 2.0");
        assert_eq!(normalize("", &dict, &BTreeSet::new()), "");
        assert_eq!(normalize("Hello World", &AbbreviationDictionary::empty(), &BTreeSet::new()), "hello world");
    }

    #[test]
    fn expansion_respects_word_boundaries_and_longest_match() {
        let dict = AbbreviationDictionary::new([("hp", "học phần"), ("hp tc", "học phần tự chọn")]).unwrap();
        let none = BTreeSet::new();
        assert_eq!(normalize("HP TC và HPx", &dict, &none), "học phần tự chọn và hpx");
        assert_eq!(normalize("(HP)", &dict, &none), "(học phần)");
    }

    #[test]
    fn stopwords_removed_after_expansion() {
        let dict = AbbreviationDictionary::new([("cf", "the credit fee")]).unwrap();
        let stop: BTreeSet<String> = ["the".to_string()].into();
        assert_eq!(normalize("pay  THE cf\tnow", &dict, &stop), "pay credit fee now");
    }

    #[test]
    fn dictionary_validation() {
        assert!(matches!(AbbreviationDictionary::new([("a", "A")]), Err(Error::InvalidDictionary(_))));
        assert!(matches!(
            AbbreviationDictionary::new([("gpa", "gpa score")]),
            Err(Error::InvalidDictionary(_))
        ));
        assert!(AbbreviationDictionary::new([("gpa", "grade")]).unwrap().get("gpa").is_some());
    }

    #[test]
    fn short_document_is_one_chunk() {
        let d = doc(&"x".repeat(500));
        let chunks = chunk_document(&d, &ChunkConfig::default(), &Normalizer::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text.len(), 500);
    }

    #[test]
    fn stride_arithmetic() {
        let d = doc(&"y".repeat(2500));
        let chunks = chunk_document(&d, &ChunkConfig::default(), &Normalizer::default()).unwrap();
        let starts: Vec<usize> = chunks.iter().map(|c| c.start_char).collect();
        assert_eq!(starts, vec![0, 800, 1600]);
        assert_eq!(chunks.iter().map(|c| c.text.len()).collect::<Vec<_>>(), vec![1000, 1000, 900]);
    }

    #[test]
    fn chunking_errors() {
        let d = doc("abc");
        assert!(matches!(
            chunk_document(&d, &no_snap(1000, 1000), &Normalizer::default()),
            Err(Error::InvalidChunking { .. })
        ));
        assert!(matches!(
            chunk_document(&doc(""), &no_snap(10, 2), &Normalizer::default()),
            Err(Error::EmptyDocument(_))
        ));
    }

    #[test]
    fn snapping_keeps_words_whole() {
        // no word exceeds the 6-char snap span of a 40-char window
        let text = "one two three four five six seven eight nine ten one two three four five six seven eight";
        let cfg = ChunkConfig {
            size: 40,
            overlap: 8,
            snap_to_whitespace: true,
        };
        let chunks = chunk_document(&doc(text), &cfg, &Normalizer::default()).unwrap();
        assert!(chunks.len() > 1);
        for c in &chunks[..chunks.len() - 1] {
            let next = text.chars().nth(c.start_char + c.text.chars().count());
            assert!(next.is_none_or(char::is_whitespace), "chunk {:?} splits a word", c.text);
        }
    }

    #[test]
    fn chunk_ids_are_deterministic_and_distinct() {
        assert_eq!(chunk_id("a", 0), chunk_id("a", 0));
        assert_ne!(chunk_id("a", 0), chunk_id("a", 1));
        assert_ne!(chunk_id("a1", 0), chunk_id("a", 10));
        assert_eq!(chunk_id("a", 0).len(), 16);
    }

    fn reconstruct(text: &str, chunks: &[Chunk], overlap: usize) -> String {
        let mut out = String::new();
        for (i, c) in chunks.iter().enumerate() {
            let skip = if i == 0 { 0 } else { overlap };
            out.extend(c.text.chars().skip(skip));
        }
        let _ = text;
        out
    }

    proptest! {
        #[test]
        fn chunks_reconstruct_document(text in "[a-zé ]{1,400}", size in 2usize..80, frac in 0.0f64..1.0) {
            let overlap = ((size as f64) * frac) as usize % size;
            let chunks = chunk_document(&doc(&text), &no_snap(size, overlap), &Normalizer::default()).unwrap();
            prop_assert_eq!(reconstruct(&text, &chunks, overlap), text.clone());
            for (i, c) in chunks.iter().enumerate() {
                prop_assert_eq!(c.seq, i);
            }
        }

        #[test]
        fn snapped_chunks_cover_every_char(text in "[a-z ]{1,300}", size in 4usize..60) {
            let cfg = ChunkConfig { size, overlap: size / 4, snap_to_whitespace: true };
            let chunks = chunk_document(&doc(&text), &cfg, &Normalizer::default()).unwrap();
            let n = text.chars().count();
            let mut covered = vec![false; n];
            let chars: Vec<char> = text.chars().collect();
            for c in &chunks {
                let len = c.text.chars().count();
                prop_assert_eq!(&chars[c.start_char..c.start_char + len].iter().collect::<String>(), &c.text);
                covered[c.start_char..c.start_char + len].fill(true);
            }
            prop_assert!(covered.into_iter().all(|x| x));
        }

        #[test]
        fn normalize_is_idempotent(text in "[a-zA-Z ,.đươ]{0,80}") {
            let dict = AbbreviationDictionary::new([("sv", "sinh viên"), ("gpa", "grade point average"), ("hk", "học kỳ")]).unwrap();
            let stop: BTreeSet<String> = ["và".to_string(), "the".to_string(), "a".to_string()].into();
            let once = normalize(&text, &dict, &stop);
            prop_assert_eq!(normalize(&once, &dict, &stop), once.clone());
        }
    }
}
