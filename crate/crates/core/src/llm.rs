//! Generation providers: relation extraction at construct time and answer
//! synthesis at query time.

use std::collections::{BTreeSet, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embed::ProviderKind;
use crate::error::{Error, Result};
use crate::http::{CallError, JsonClient, RateLimiter};
use crate::ner::{canonicalize, Entity};

pub const REFUSAL: &str = "No relevant regulation found.";
pub const CO_OCCURS: &str = "co_occurs_with";
pub const MAX_PREDICATE_CHARS: usize = 48;
pub const DEFAULT_RELATION_CAP: usize = 20;

const ANSWER_SYSTEM_PROMPT: &str = "You are an academic regulation advisor. Answer only from the provided \
context. If the context does not contain the answer, say that you do not know.";

const RELATION_SYSTEM_PROMPT: &str = "You extract relations between entities from regulation text. \
Reply with a JSON array only, each element {\"subject\": ..., \"predicate\": ..., \"object\": ...}. \
Use only the entity strings supplied, verbatim. Predicates are short lowercase verb phrases.";

/// Ordered by provenance chunk first so sets iterate in storage order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationTriplet {
    pub chunk_id: String,
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl RelationTriplet {
    /// Same relation with endpoints in lexicographic order.
    pub fn undirected(mut self) -> Self {
        if self.object < self.subject {
            std::mem::swap(&mut self.subject, &mut self.object);
        }
        self
    }

    pub fn render(&self) -> String {
        format!("{} —{}→ {}", self.subject, self.predicate, self.object)
    }
}

/// Lowercase with whitespace runs collapsed to `_`; `None` if empty or too long.
pub fn normalize_predicate(p: &str) -> Option<String> {
    let out = p.split_whitespace().collect::<Vec<_>>().join("_").to_lowercase();
    (!out.is_empty() && out.chars().count() <= MAX_PREDICATE_CHARS).then_some(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextChunk {
    pub chunk_id: String,
    pub score: f64,
    pub category: Option<String>,
    pub text: String,
}

/// Evidence handed to the generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssembledContext {
    pub chunks: Vec<ContextChunk>,
    pub entities: Vec<String>,
    pub relations: Vec<RelationTriplet>,
}

impl AssembledContext {
    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::from("CONTEXT CHUNKS\n");
        for c in &self.chunks {
            out.push_str(&format!(
                "[{} | {:.4} | {}] {}\n",
                c.chunk_id,
                c.score,
                c.category.as_deref().unwrap_or("-"),
                c.text
            ));
        }
        out.push_str("\nENTITIES\n");
        out.push_str(&self.entities.join(", "));
        out.push_str("\n\nRELATIONS\n");
        for r in &self.relations {
            out.push_str(&r.render());
            out.push('\n');
        }
        out
    }

    /// Drops trailing chunks until the rendered context fits in `max_chars`.
    pub fn truncated(&self, max_chars: usize) -> AssembledContext {
        let mut ctx = self.clone();
        while !ctx.chunks.is_empty() && ctx.render().chars().count() > max_chars {
            ctx.chunks.pop();
        }
        ctx
    }
}

pub trait GenProvider: Send + Sync {
    fn extract_relations(&self, chunk_id: &str, chunk_text: &str, entities: &[Entity]) -> Result<Vec<RelationTriplet>>;

    /// `context` has already been truncated to the configured budget.
    fn generate(&self, query: &str, context: &AssembledContext) -> Result<String>;

    /// Triplets dropped by endpoint validation so far.
    fn rejected_relations(&self) -> usize {
        0
    }
}

/// Sentences split on `.`, `!`, `?`, `;` when followed by whitespace or end
/// of text, so decimals such as `2.0` stay intact.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut it = text.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        if matches!(c, '.' | '!' | '?' | ';') && it.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            out.push(&text[start..i + c.len_utf8()]);
            start = i + c.len_utf8();
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out.into_iter().filter(|s| !s.trim().is_empty()).collect()
}

fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    let hay: Vec<char> = haystack.chars().collect();
    let needle: Vec<char> = phrase.chars().collect();
    if needle.is_empty() || needle.len() > hay.len() {
        return false;
    }
    (0..=hay.len() - needle.len()).any(|i| {
        hay[i..i + needle.len()] == needle[..]
            && (i == 0 || !hay[i - 1].is_alphanumeric())
            && hay.get(i + needle.len()).is_none_or(|c| !c.is_alphanumeric())
    })
}

/// Deterministic offline provider.
#[derive(Debug, Clone)]
pub struct StubGenerator {
    pub relation_cap: usize,
}

impl Default for StubGenerator {
    fn default() -> Self {
        Self {
            relation_cap: DEFAULT_RELATION_CAP,
        }
    }
}

impl StubGenerator {
    /// One `co_occurs_with` triplet per entity pair sharing a sentence.
    pub fn co_occurrences(&self, chunk_id: &str, text: &str, entities: &[Entity]) -> Vec<RelationTriplet> {
        let canon: BTreeSet<&str> = entities.iter().map(|e| e.canonical.as_str()).collect();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for sentence in sentences(text) {
            let s = canonicalize(sentence);
            let present: Vec<&str> = canon.iter().copied().filter(|e| contains_phrase(&s, e)).collect();
            for (i, a) in present.iter().enumerate() {
                for b in &present[i + 1..] {
                    let t = RelationTriplet {
                        chunk_id: chunk_id.to_string(),
                        subject: a.to_string(),
                        predicate: CO_OCCURS.into(),
                        object: b.to_string(),
                    };
                    if seen.insert(t.clone()) {
                        out.push(t);
                    }
                    if out.len() >= self.relation_cap {
                        return out;
                    }
                }
            }
        }
        out
    }

    pub fn template_answer(context: &AssembledContext) -> String {
        let Some(top) = context.chunks.first() else {
            return REFUSAL.to_string();
        };
        let mut out = format!("Based on {} retrieved passages:\n{}", context.chunks.len(), top.text);
        if !context.relations.is_empty() {
            out.push_str("\nRelated facts:");
            for r in context.relations.iter().take(5) {
                out.push('\n');
                out.push_str(&r.render());
            }
        }
        out
    }
}

impl GenProvider for StubGenerator {
    fn extract_relations(&self, chunk_id: &str, chunk_text: &str, entities: &[Entity]) -> Result<Vec<RelationTriplet>> {
        Ok(self.co_occurrences(chunk_id, chunk_text, entities))
    }

    fn generate(&self, _query: &str, context: &AssembledContext) -> Result<String> {
        Ok(Self::template_answer(context))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenProviderConfig {
    pub kind: ProviderKind,
    pub base_url: Option<String>,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_ms: u64,
    pub max_retries: usize,
    pub max_context_chars: usize,
    pub relation_cap: usize,
    pub relation_rps: f64,
    pub max_in_flight: usize,
}

impl Default for GenProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Stub,
            base_url: None,
            model_name: "gpt-4o-mini".into(),
            api_key_env: "CATRAG_API_KEY".into(),
            temperature: 0.0,
            timeout_ms: 60_000,
            max_retries: 2,
            max_context_chars: 24_000,
            relation_cap: DEFAULT_RELATION_CAP,
            relation_rps: 2.0,
            max_in_flight: 4,
        }
    }
}

impl GenProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::InvalidConfig("temperature must be non-negative".into()));
        }
        if self.kind == ProviderKind::Http && self.base_url.as_deref().is_none_or(str::is_empty) {
            return Err(Error::InvalidConfig("http generation provider requires base_url".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn GenProvider>> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Stub => Box::new(StubGenerator {
                relation_cap: self.relation_cap,
            }),
            ProviderKind::Http => Box::new(HttpGenerator::new(self)),
        })
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
}

#[derive(Deserialize)]
struct ChatContent {
    content: String,
}

#[derive(Deserialize)]
struct RawTriplet {
    subject: String,
    predicate: String,
    object: String,
}

/// Chat-completion client (`POST {base_url}/chat/completions`).
pub struct HttpGenerator {
    url: String,
    model: String,
    api_key_env: String,
    temperature: f64,
    max_retries: usize,
    relation_cap: usize,
    client: JsonClient,
    limiter: RateLimiter,
    rejected: AtomicUsize,
}

impl HttpGenerator {
    pub fn new(cfg: &GenProviderConfig) -> Self {
        let base = cfg.base_url.clone().unwrap_or_default();
        Self {
            url: format!("{}/chat/completions", base.trim_end_matches('/')),
            model: cfg.model_name.clone(),
            api_key_env: cfg.api_key_env.clone(),
            temperature: cfg.temperature,
            max_retries: cfg.max_retries,
            relation_cap: cfg.relation_cap,
            client: JsonClient::new(Duration::from_millis(cfg.timeout_ms), cfg.max_retries, cfg.max_in_flight),
            limiter: RateLimiter::per_second(cfg.relation_rps),
            rejected: AtomicUsize::new(0),
        }
    }

    fn chat(&self, system: &str, user: &str) -> std::result::Result<String, CallError> {
        let key = std::env::var(&self.api_key_env).ok();
        let req = ChatRequest {
            model: &self.model,
            temperature: self.temperature,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: system,
                },
                ChatMessage {
                    role: "user",
                    content: user,
                },
            ],
        };
        let resp: ChatResponse = self.client.post(&self.url, key.as_deref(), &req)?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| CallError::Body("no choices in completion".into()))
    }

    /// Parses a JSON array out of model output and validates every triplet.
    pub fn parse_relations(
        &self,
        chunk_id: &str,
        output: &str,
        entities: &[Entity],
    ) -> std::result::Result<Vec<RelationTriplet>, String> {
        let (start, end) = match (output.find('['), output.rfind(']')) {
            (Some(s), Some(e)) if s < e => (s, e),
            _ => return Err("no JSON array in output".into()),
        };
        let raw: Vec<RawTriplet> = serde_json::from_str(&output[start..=end]).map_err(|e| e.to_string())?;
        let allowed: HashSet<&str> = entities.iter().map(|e| e.canonical.as_str()).collect();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for t in raw {
            let (s, o) = (canonicalize(&t.subject), canonicalize(&t.object));
            let pred = normalize_predicate(&t.predicate);
            match pred {
                Some(predicate) if s != o && allowed.contains(s.as_str()) && allowed.contains(o.as_str()) => {
                    let trip = RelationTriplet {
                        chunk_id: chunk_id.to_string(),
                        subject: s,
                        predicate,
                        object: o,
                    };
                    if seen.insert(trip.clone()) && out.len() < self.relation_cap {
                        out.push(trip);
                    }
                }
                _ => {
                    self.rejected.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        Ok(out)
    }
}

impl GenProvider for HttpGenerator {
    fn extract_relations(&self, chunk_id: &str, chunk_text: &str, entities: &[Entity]) -> Result<Vec<RelationTriplet>> {
        if entities.len() < 2 {
            return Ok(Vec::new());
        }
        let names: Vec<&str> = entities.iter().map(|e| e.canonical.as_str()).collect();
        let user = format!(
            "Entities: {}\n\nText:\n{}",
            serde_json::to_string(&names).expect("strings serialize"),
            chunk_text
        );
        let mut last = String::new();
        for _ in 0..=self.max_retries {
            self.limiter.wait();
            match self.chat(RELATION_SYSTEM_PROMPT, &user) {
                Ok(output) => match self.parse_relations(chunk_id, &output, entities) {
                    Ok(v) => return Ok(v),
                    Err(e) => last = e,
                },
                Err(CallError::Transport(m)) => return Err(Error::ProviderUnavailable(m)),
                Err(CallError::Body(m)) => last = m,
            }
        }
        Err(Error::RelationParse(last))
    }

    fn generate(&self, query: &str, context: &AssembledContext) -> Result<String> {
        if context.is_empty() {
            return Ok(REFUSAL.to_string());
        }
        let user = format!("{}\n\nQUESTION\n{}", context.render(), query);
        self.chat(ANSWER_SYSTEM_PROMPT, &user).map_err(|e| Error::GenerationUnavailable {
            message: match e {
                CallError::Transport(m) | CallError::Body(m) => m,
            },
            evidence: None,
        })
    }

    fn rejected_relations(&self) -> usize {
        self.rejected.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing;

    fn ent(c: &str) -> Entity {
        Entity {
            surface: c.into(),
            canonical: c.into(),
            source_chunk: "c".into(),
        }
    }

    fn chunk(id: &str, text: &str) -> ContextChunk {
        ContextChunk {
            chunk_id: id.into(),
            score: 0.9,
            category: Some("Education".into()),
            text: text.into(),
        }
    }

    #[test]
    fn stub_relations_follow_sentences() {
        let g = StubGenerator::default();
        let text = "Students must meet GPA rules. Dormitory rules differ.";
        let rels = g
            .extract_relations("c", text, &[ent("students"), ent("gpa rules"), ent("dormitory rules")])
            .unwrap();
        assert_eq!(
            rels,
            vec![RelationTriplet {
                chunk_id: "c".into(),
                subject: "gpa rules".into(),
                predicate: CO_OCCURS.into(),
                object: "students".into(),
            }]
        );
        assert!(g.extract_relations("c", text, &[]).unwrap().is_empty());
    }

    #[test]
    fn stub_relation_cap() {
        let g = StubGenerator { relation_cap: 3 };
        let ents: Vec<Entity> = ["a", "b", "c", "d"].iter().map(|s| ent(s)).collect();
        assert_eq!(g.extract_relations("x", "a b c d", &ents).unwrap().len(), 3);
    }

    #[test]
    fn sentence_split_keeps_decimals() {
        assert_eq!(sentences("GPA 2.0 needed. Next; end"), ["GPA 2.0 needed.", " Next;", " end"]);
    }

    #[test]
    fn stub_answer_template() {
        let ctx = AssembledContext {
            chunks: vec![chunk("c1", "Semester lasts 15 weeks.")],
            ..Default::default()
        };
        let g = StubGenerator::default();
        assert_eq!(g.generate("q", &ctx).unwrap(), "Based on 1 retrieved passages:\nSemester lasts 15 weeks.");
        assert_eq!(g.generate("q", &AssembledContext::default()).unwrap(), REFUSAL);

        let rel = |s: &str| RelationTriplet {
            chunk_id: "c1".into(),
            subject: s.into(),
            predicate: "requires".into(),
            object: "z".into(),
        };
        let ctx = AssembledContext {
            relations: (0..7).map(|i| rel(&format!("s{i}"))).collect(),
            ..ctx
        };
        let out = g.generate("q", &ctx).unwrap();
        assert!(out.ends_with("Related facts:\ns0 —requires→ z\ns1 —requires→ z\ns2 —requires→ z\ns3 —requires→ z\ns4 —requires→ z"));
    }

    #[test]
    fn truncation_is_chunk_aligned() {
        let ctx = AssembledContext {
            chunks: vec![chunk("c1", &"a".repeat(100)), chunk("c2", &"b".repeat(100))],
            entities: vec!["x".into()],
            relations: vec![],
        };
        let full = ctx.render().chars().count();
        let cut = ctx.truncated(full - 1);
        assert_eq!(cut.chunks.len(), 1);
        assert_eq!(cut.chunks[0].text, ctx.chunks[0].text);
        assert_eq!(ctx.truncated(full), ctx);
        assert!(ctx.truncated(10).chunks.is_empty());
    }

    #[test]
    fn render_sections() {
        let ctx = AssembledContext {
            chunks: vec![chunk("c1", "text")],
            entities: vec!["a".into(), "b".into()],
            relations: vec![RelationTriplet {
                chunk_id: "c1".into(),
                subject: "a".into(),
                predicate: "p".into(),
                object: "b".into(),
            }],
        };
        assert_eq!(
            ctx.render(),
            "CONTEXT CHUNKS\n[c1 | 0.9000 | Education] text\n\nENTITIES\na, b\n\nRELATIONS\na —p→ b\n"
        );
    }

    #[test]
    fn predicate_normalization() {
        assert_eq!(normalize_predicate("  Is Required   By "), Some("is_required_by".into()));
        assert_eq!(normalize_predicate(""), None);
        assert_eq!(normalize_predicate(&"x".repeat(49)), None);
    }

    fn http(url: &str) -> HttpGenerator {
        HttpGenerator::new(&GenProviderConfig {
            kind: ProviderKind::Http,
            base_url: Some(url.into()),
            timeout_ms: 2_000,
            max_retries: 1,
            relation_rps: 0.0,
            ..Default::default()
        })
    }

    fn completion(content: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    #[test]
    fn http_relations_are_validated() {
        let out = r#"Sure: [{"subject":"Students","predicate":"Must Meet","object":"gpa rules"},
                   {"subject":"students","predicate":"owns","object":"library"},
                   {"subject":"students","predicate":"must meet","object":"gpa rules"}]"#;
        let srv = testing::serve(vec![(200, completion(out))]);
        let g = http(&srv.url);
        let rels = g
            .extract_relations("c9", "Students must meet GPA rules.", &[ent("students"), ent("gpa rules")])
            .unwrap();
        assert_eq!(rels.len(), 1);
        assert_eq!(rels[0].predicate, "must_meet");
        assert_eq!(rels[0].chunk_id, "c9");
        assert_eq!(g.rejected_relations(), 1);
        let sent: serde_json::Value = serde_json::from_str(&srv.bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn http_unparsable_relations_retry_then_fail() {
        let srv = testing::serve(vec![(200, completion("I cannot comply"))]);
        let g = http(&srv.url);
        let r = g.extract_relations("c", "t", &[ent("a"), ent("b")]);
        assert!(matches!(r, Err(Error::RelationParse(_))));
        assert_eq!(srv.bodies.lock().unwrap().len(), 2);
    }

    #[test]
    fn http_generation_failure() {
        let srv = testing::serve(vec![(503, "{}".into())]);
        let g = http(&srv.url);
        let ctx = AssembledContext {
            chunks: vec![chunk("c1", "x")],
            ..Default::default()
        };
        assert!(matches!(g.generate("q", &ctx), Err(Error::GenerationUnavailable { .. })));

        let srv = testing::serve(vec![(200, completion("Fifteen weeks."))]);
        assert_eq!(http(&srv.url).generate("q", &ctx).unwrap(), "Fifteen weeks.");
    }
}
