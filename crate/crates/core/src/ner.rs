//! Tokenization and entity extraction.
//!
//! The built-in extractor combines longest-match gazetteer lookup with
//! capitalized-run detection. [`HttpEntityExtractor`] delegates to a remote
//! service and falls back to the heuristic path when the service is down.

use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::read_to_string;
use crate::http::{CallError, JsonClient};
use crate::ingest::AbbreviationDictionary;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Char offset of the first character.
    pub start: usize,
    /// Char offset one past the last character.
    pub end: usize,
    pub pos_tag: Option<String>,
}

impl Token {
    fn is_word(&self) -> bool {
        self.text.chars().any(char::is_alphanumeric)
    }

    fn is_capitalized(&self) -> bool {
        self.text.chars().next().is_some_and(char::is_uppercase)
    }

    fn ends_sentence(&self) -> bool {
        matches!(self.text.as_str(), "." | "!" | "?" | ";")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub surface: String,
    pub canonical: String,
    pub source_chunk: String,
}

/// Lowercase and collapse whitespace; the dedup key for entities.
pub fn canonicalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Whitespace split with leading and trailing punctuation peeled off as
/// single-character tokens. Offsets are char offsets into `text`.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let end = i;
        let mut core_start = start;
        while core_start < end && is_punct(chars[core_start]) {
            core_start += 1;
        }
        let mut core_end = end;
        while core_end > core_start && is_punct(chars[core_end - 1]) {
            core_end -= 1;
        }
        let tok = |s: usize, e: usize| Token {
            text: chars[s..e].iter().collect(),
            start: s,
            end: e,
            pos_tag: None,
        };
        out.extend((start..core_start).map(|p| tok(p, p + 1)));
        if core_start < core_end {
            out.push(tok(core_start, core_end));
        }
        out.extend((core_end.max(core_start)..end).map(|p| tok(p, p + 1)));
    }
    out
}

/// Known domain phrases, matched case-insensitively on token boundaries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    // lowercase word sequences, longest first
    phrases: Vec<Vec<String>>,
}

impl Gazetteer {
    pub fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set: Vec<Vec<String>> = phrases
            .into_iter()
            .map(|p| tokenize(&p.as_ref().to_lowercase()).into_iter().map(|t| t.text).collect::<Vec<_>>())
            .filter(|p: &Vec<String>| !p.is_empty())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        set.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        Self { phrases: set }
    }

    /// One phrase per line; blank lines and `#` comments skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = read_to_string(path)?;
        Ok(Self::new(
            raw.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')),
        ))
    }

    /// Adds every dictionary expansion as a phrase.
    pub fn with_dictionary(self, dict: &AbbreviationDictionary) -> Self {
        let mut all: Vec<String> = self.phrases.iter().map(|p| p.join(" ")).collect();
        all.extend(dict.expansions().map(str::to_string));
        Self::new(all)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    fn longest_at(&self, lower: &[String], i: usize) -> Option<usize> {
        self.phrases
            .iter()
            .find(|p| i + p.len() <= lower.len() && lower[i..i + p.len()] == p[..])
            .map(Vec::len)
    }
}

/// Heuristic extractor over a token list.
///
/// Gazetteer phrases win over capitalized runs; a capitalized run counts only
/// if some token in it is capitalized somewhere other than a sentence start.
/// When any token carries a POS tag, capitalized runs must contain a noun tag
/// (one starting with `N`).
pub fn extract_entities(text: &str, tokens: &[Token], gazetteer: &Gazetteer, chunk_id: &str) -> Vec<Entity> {
    let chars: Vec<char> = text.chars().collect();
    let surface = |s: usize, e: usize| -> String { chars[s..e].iter().collect() };
    let lower: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
    let tagged = tokens.iter().any(|t| t.pos_tag.is_some());

    // (start char, surface)
    let mut found: Vec<(usize, String)> = Vec::new();
    let mut covered = vec![false; tokens.len()];
    let mut i = 0;
    while i < tokens.len() {
        match gazetteer.longest_at(&lower, i) {
            Some(len) => {
                let (s, e) = (tokens[i].start, tokens[i + len - 1].end);
                found.push((s, surface(s, e)));
                covered[i..i + len].iter_mut().for_each(|c| *c = true);
                i += len;
            }
            None => i += 1,
        }
    }

    let mut sentence_start = true;
    let mut run: Vec<usize> = Vec::new();
    let mut mid_cap = false;
    let flush = |run: &mut Vec<usize>, mid_cap: &mut bool, found: &mut Vec<(usize, String)>| {
        if !run.is_empty() && *mid_cap {
            let has_noun = run
                .iter()
                .any(|&k| tokens[k].pos_tag.as_deref().is_some_and(|t| t.starts_with('N')));
            if !tagged || has_noun {
                let (s, e) = (tokens[run[0]].start, tokens[*run.last().unwrap()].end);
                found.push((s, surface(s, e)));
            }
        }
        run.clear();
        *mid_cap = false;
    };
    for (k, tok) in tokens.iter().enumerate() {
        let capital_word = tok.is_word() && tok.is_capitalized() && !covered[k];
        if capital_word {
            if !sentence_start {
                mid_cap = true;
            }
            run.push(k);
        } else {
            flush(&mut run, &mut mid_cap, &mut found);
        }
        if tok.ends_sentence() {
            sentence_start = true;
        } else if tok.is_word() {
            sentence_start = false;
        }
    }
    flush(&mut run, &mut mid_cap, &mut found);

    found.sort_by_key(|(s, _)| *s);
    let mut seen = HashSet::new();
    found
        .into_iter()
        .filter_map(|(_, surface)| {
            let canonical = canonicalize(&surface);
            (!canonical.is_empty() && seen.insert(canonical.clone())).then(|| Entity {
                surface,
                canonical,
                source_chunk: chunk_id.to_string(),
            })
        })
        .collect()
}

pub trait EntityExtractor: Send + Sync {
    fn extract(&self, text: &str, chunk_id: &str) -> Result<Vec<Entity>>;

    /// Calls that failed over to the heuristic path.
    fn fallbacks(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicExtractor {
    pub gazetteer: Gazetteer,
}

impl EntityExtractor for HeuristicExtractor {
    fn extract(&self, text: &str, chunk_id: &str) -> Result<Vec<Entity>> {
        Ok(extract_entities(text, &tokenize(text), &self.gazetteer, chunk_id))
    }
}

#[derive(Serialize)]
struct NerRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct NerSpan {
    surface: String,
    start: usize,
    end: usize,
}

#[derive(Deserialize)]
struct NerResponse {
    entities: Vec<NerSpan>,
}

/// Remote NER via `POST {url}` with `{"text"}` returning char-offset spans.
pub struct HttpEntityExtractor {
    url: String,
    client: JsonClient,
    fallback: HeuristicExtractor,
    fallbacks: AtomicUsize,
}

impl HttpEntityExtractor {
    pub fn new(url: &str, timeout: Duration, max_retries: usize, fallback: HeuristicExtractor) -> Self {
        Self {
            url: url.to_string(),
            client: JsonClient::new(timeout, max_retries, 4),
            fallback,
            fallbacks: AtomicUsize::new(0),
        }
    }

    /// Remote call only; no fallback.
    pub fn http_extract(&self, text: &str, chunk_id: &str) -> Result<Vec<Entity>> {
        let resp: NerResponse = self
            .client
            .post(&self.url, None, &NerRequest { text })
            .map_err(|e| match e {
                CallError::Transport(m) => Error::ProviderUnavailable(m),
                CallError::Body(m) => Error::ProviderContract(m),
            })?;
        let n = text.chars().count();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for span in resp.entities {
            if span.start >= span.end || span.end > n {
                return Err(Error::ProviderContract(format!(
                    "span {}..{} out of range for text of {n} chars",
                    span.start, span.end
                )));
            }
            let canonical = canonicalize(&span.surface);
            if !canonical.is_empty() && seen.insert(canonical.clone()) {
                out.push(Entity {
                    surface: span.surface,
                    canonical,
                    source_chunk: chunk_id.to_string(),
                });
            }
        }
        Ok(out)
    }
}

impl EntityExtractor for HttpEntityExtractor {
    fn extract(&self, text: &str, chunk_id: &str) -> Result<Vec<Entity>> {
        match self.http_extract(text, chunk_id) {
            Err(Error::ProviderUnavailable(msg)) => {
                log::warn!("NER provider unavailable for chunk {chunk_id} ({msg}); using heuristic extractor");
                self.fallbacks.fetch_add(1, Ordering::Relaxed);
                self.fallback.extract(text, chunk_id)
            }
            other => other,
        }
    }

    fn fallbacks(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }
}
