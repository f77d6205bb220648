//! Completion and embedding providers.
//!
//! Completion providers answer the goal-summarization and augmentation
//! prompts; embedding providers map tokens to `H`-dimensional vectors. Both
//! come in an offline fixture flavour (deterministic, used by tests and the
//! bundled demo corpus) and an OpenAI-compatible HTTP flavour.

mod cache;
mod fixture;
mod http;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_fallback, Document};
use crate::error::{Error, Result};

pub use cache::{CachedEmbedder, EmbeddingCache, CACHE_MAGIC, CACHE_VERSION};
pub(crate) use cache::write_atomic;
pub use fixture::{FixtureCompletions, HashEmbedder, PlantedEmbedder, PLANTED_NOISE};
pub use http::{HttpCompletion, HttpConfig, HttpEmbedder, API_KEY_ENV};

pub const GOAL_SUMMARY_TEMPLATE: &str = include_str!("../../assets/goal_summary_prompt.txt");
pub const AUGMENT_TEMPLATE: &str = include_str!("../../assets/augment_prompt.txt");

/// Completion output marking a document as unrelated to the goal.
pub const IRRELEVANT_TAG: &str = "irrelevant";

pub const MIN_GOALS: usize = 3;
pub const MAX_GOALS: usize = 5;

pub fn render_goal_prompt(goal_text: &str, document: &str) -> String {
    GOAL_SUMMARY_TEMPLATE
        .replace("{goal}", goal_text)
        .replace("{document}", document)
}

pub fn render_augment_prompt(document: &str) -> String {
    AUGMENT_TEMPLATE.replace("{document}", document)
}

pub trait CompletionProvider: Send + Sync {
    /// Raw answer to the goal-summarization prompt for `doc`.
    fn summarize(&self, doc: &Document, goal_text: &str) -> Result<String>;

    /// Two independent meaning-preserving rephrasings of `doc`.
    fn rephrase(&self, doc: &Document) -> Result<(String, String)>;
}

pub trait Embedder: Send + Sync {
    /// Stable identifier, part of every cache key.
    fn id(&self) -> String;

    fn dim(&self) -> usize;

    /// One row per token. Prefer [`embed_tokens`], which validates the result.
    fn embed(&self, tokens: &[String]) -> Result<Array2<f64>>;
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, tokens: &[String]) -> Result<Array2<f64>> {
        (**self).embed(tokens)
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, tokens: &[String]) -> Result<Array2<f64>> {
        (**self).embed(tokens)
    }
}

/// Token-level embeddings, checked to be `N x H` and finite.
pub fn embed_tokens(provider: &dyn Embedder, tokens: &[String]) -> Result<Array2<f64>> {
    if tokens.is_empty() {
        return Err(Error::domain("cannot embed an empty token list"));
    }
    let m = provider.embed(tokens)?;
    if m.dim() != (tokens.len(), provider.dim()) {
        return Err(Error::Protocol(format!(
            "{} returned a {:?} matrix for {} tokens at dimension {}",
            provider.id(),
            m.dim(),
            tokens.len(),
            provider.dim()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Protocol(format!("{} returned non-finite components", provider.id())));
    }
    Ok(m)
}

/// Mean of the token embeddings of `phrase`.
pub fn embed_phrase(provider: &dyn Embedder, phrase: &str) -> Result<Array1<f64>> {
    let tokens = tokenize_fallback(phrase, None);
    if tokens.is_empty() {
        return Err(Error::domain(format!("phrase {phrase:?} has no tokens")));
    }
    let m = embed_tokens(provider, &tokens)?;
    Ok(m.mean_axis(Axis(0)).expect("non-empty"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocGoals {
    pub doc_id: String,
    pub goals: Vec<String>,
    pub relevant: bool,
}

impl DocGoals {
    pub fn irrelevant(doc_id: impl Into<String>) -> Self {
        DocGoals {
            doc_id: doc_id.into(),
            goals: Vec::new(),
            relevant: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = if self.relevant {
            (MIN_GOALS..=MAX_GOALS).contains(&self.goals.len())
        } else {
            self.goals.is_empty()
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "document {:?}: relevant={} with {} goals",
                self.doc_id,
                self.relevant,
                self.goals.len()
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedPair {
    pub doc_id: String,
    pub text_a: String,
    pub text_b: String,
    pub tokens_a: Vec<String>,
    pub tokens_b: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct AugmentedRecord {
    doc_id: String,
    text_a: String,
    text_b: String,
}

impl AugmentedPair {
    pub fn new(doc_id: impl Into<String>, text_a: String, text_b: String) -> Result<Self> {
        let doc_id = doc_id.into();
        if text_a.trim().is_empty() || text_b.trim().is_empty() {
            return Err(Error::Format {
                message: format!("empty augmentation for document {doc_id:?}"),
                raw: format!("{text_a:?} / {text_b:?}"),
            });
        }
        Ok(AugmentedPair {
            tokens_a: tokenize_fallback(&text_a, None),
            tokens_b: tokenize_fallback(&text_b, None),
            doc_id,
            text_a,
            text_b,
        })
    }
}

/// Parses a goal-summarization answer: `None` for the irrelevant tag, else the
/// semicolon- or newline-separated phrases (bullets and numbering stripped).
pub fn parse_goal_output(raw: &str) -> Result<Option<Vec<String>>> {
    let tag = raw
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if tag == IRRELEVANT_TAG {
        return Ok(None);
    }
    let phrases: Vec<String> = raw
        .split([';', '\n'])
        .map(clean_phrase)
        .filter(|p| !p.is_empty())
        .collect();
    if !(MIN_GOALS..=MAX_GOALS).contains(&phrases.len()) {
        return Err(Error::Format {
            message: format!(
                "expected {MIN_GOALS}-{MAX_GOALS} goal phrases, got {}",
                phrases.len()
            ),
            raw: raw.to_owned(),
        });
    }
    Ok(Some(phrases))
}

fn clean_phrase(p: &str) -> String {
    let p = p.trim();
    let p = p.trim_start_matches(|c: char| c == '-' || c == '*' || c == '•' || c.is_whitespace());
    // "1." / "2)" numbering
    let p = match p.find(['.', ')']) {
        Some(i) if i > 0 && p[..i].chars().all(|c| c.is_ascii_digit()) => &p[i + 1..],
        _ => p,
    };
    p.trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.')
        .trim()
        .to_owned()
}

pub fn summarize_goals(
    provider: &dyn CompletionProvider,
    doc: &Document,
    goal_text: &str,
) -> Result<DocGoals> {
    if doc.raw_text.trim().is_empty() {
        return Err(Error::validation(format!("document {:?} has no text", doc.id)));
    }
    let raw = provider.summarize(doc, goal_text)?;
    Ok(match parse_goal_output(&raw)? {
        None => DocGoals::irrelevant(&doc.id),
        Some(goals) => DocGoals {
            doc_id: doc.id.clone(),
            goals,
            relevant: true,
        },
    })
}

pub fn augment_document(provider: &dyn CompletionProvider, doc: &Document) -> Result<AugmentedPair> {
    if doc.raw_text.trim().is_empty() {
        return Err(Error::validation(format!("document {:?} has no text", doc.id)));
    }
    let (a, b) = provider.rephrase(doc)?;
    AugmentedPair::new(&doc.id, a, b)
}

/// Goals JSONL: `{"doc_id", "goals", "relevant"}` per line.
pub fn write_goals_jsonl(goals: &[DocGoals]) -> String {
    goals
        .iter()
        .map(|g| serde_json::to_string(g).expect("serializable") + "\n")
        .collect()
}

pub fn parse_goals_jsonl(text: &str) -> Result<Vec<DocGoals>> {
    parse_jsonl(text, |g: DocGoals| {
        g.validate()?;
        Ok(g)
    })
}

/// Augmented JSONL: `{"doc_id", "text_a", "text_b"}` per line.
pub fn write_augmented_jsonl(pairs: &[AugmentedPair]) -> String {
    pairs
        .iter()
        .map(|p| {
            let r = AugmentedRecord {
                doc_id: p.doc_id.clone(),
                text_a: p.text_a.clone(),
                text_b: p.text_b.clone(),
            };
            serde_json::to_string(&r).expect("serializable") + "\n"
        })
        .collect()
}

pub fn parse_augmented_jsonl(text: &str) -> Result<Vec<AugmentedPair>> {
    parse_jsonl(text, |r: AugmentedRecord| AugmentedPair::new(r.doc_id, r.text_a, r.text_b))
}

fn parse_jsonl<R, T>(text: &str, mut convert: impl FnMut(R) -> Result<T>) -> Result<Vec<T>>
where
    R: serde::de::DeserializeOwned,
{
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: R = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(convert(record)?);
    }
    Ok(out)
}

/// Embedding backend selection inside a provider fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbeddingSpec {
    FixtureHash { dim: usize, seed: u64 },
    Planted { dim: usize, seed: u64 },
}

impl EmbeddingSpec {
    pub fn build(&self) -> Result<Arc<dyn Embedder>> {
        Ok(match *self {
            EmbeddingSpec::FixtureHash { dim, seed } => Arc::new(HashEmbedder::new(dim, seed)?),
            EmbeddingSpec::Planted { dim, seed } => Arc::new(PlantedEmbedder::new(dim, seed)?),
        })
    }
}

/// Contents of a `fixture:<path>` provider file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub completions: FixtureCompletions,
    pub embedding: EmbeddingSpec,
}

impl FixtureFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `fixture:<path>` or `http:<base-url>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Fixture(PathBuf),
    Http(String),
}

impl std::str::FromStr for ProviderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("fixture:") {
            Ok(ProviderSpec::Fixture(PathBuf::from(path)))
        } else if let Some(url) = s.strip_prefix("http:") {
            // Accept both "http:https://host/v1" and "http://host/v1".
            let url = if url.starts_with("//") { format!("http:{url}") } else { url.to_owned() };
            Ok(ProviderSpec::Http(url))
        } else {
            Err(Error::validation(format!(
                "provider must be fixture:<path> or http:<url>, got {s:?}"
            )))
        }
    }
}

/// The pair of providers a pipeline run talks to.
#[derive(Clone)]
pub struct Providers {
    pub completion: Arc<dyn CompletionProvider>,
    pub embedder: Arc<dyn Embedder>,
}

impl Providers {
    pub fn from_fixture(fixture: FixtureFile) -> Result<Self> {
        Ok(Providers {
            embedder: fixture.embedding.build()?,
            completion: Arc::new(fixture.completions),
        })
    }

    pub fn from_spec(spec: &ProviderSpec, http: HttpConfig) -> Result<Self> {
        match spec {
            ProviderSpec::Fixture(path) => Self::from_fixture(FixtureFile::load(path)?),
            ProviderSpec::Http(url) => {
                let cfg = HttpConfig {
                    base_url: url.clone(),
                    ..http
                };
                Ok(Providers {
                    completion: Arc::new(HttpCompletion::new(cfg.clone())),
                    embedder: Arc::new(HttpEmbedder::new(cfg)?),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            raw_text: text.into(),
            tokens: tokenize_fallback(text, None),
            relevant: true,
        }
    }

    fn fixture() -> FixtureCompletions {
        let mut goals = BTreeMap::new();
        goals.insert("d1".to_string(), "breakup struggles; trust issues; loneliness".to_string());
        goals.insert("d2".to_string(), "irrelevant".to_string());
        goals.insert("d3".to_string(), "a; b; c; d; e; f; g".to_string());
        let mut augment = BTreeMap::new();
        augment.insert("d1".to_string(), ("v1".to_string(), "v2".to_string()));
        FixtureCompletions { goals, augment }
    }

    #[test]
    fn summarize_examples() {
        let f = fixture();
        let g = summarize_goals(&f, &doc("d1", "my partner left"), "what bothers you").unwrap();
        assert!(g.relevant);
        assert_eq!(g.goals, vec!["breakup struggles", "trust issues", "loneliness"]);

        let g = summarize_goals(&f, &doc("d2", "nice weather"), "what bothers you").unwrap();
        assert_eq!(g, DocGoals::irrelevant("d2"));

        match summarize_goals(&f, &doc("d3", "long text"), "goal") {
            Err(Error::Format { raw, .. }) => assert!(raw.contains("; g")),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(matches!(
            summarize_goals(&f, &doc("d9", "unknown"), "goal"),
            Err(Error::Transport(_))
        ));
    }

    #[test]
    fn goal_output_parsing_variants() {
        assert_eq!(parse_goal_output("  Irrelevant.\n").unwrap(), None);
        assert_eq!(parse_goal_output("\"irrelevant\"").unwrap(), None);
        let p = parse_goal_output("1. battery range\n2. charging speed\n3) autopilot bugs").unwrap();
        assert_eq!(p.unwrap(), vec!["battery range", "charging speed", "autopilot bugs"]);
        let p = parse_goal_output("- a b; - c d ; \"e f\";").unwrap();
        assert_eq!(p.unwrap(), vec!["a b", "c d", "e f"]);
        assert!(parse_goal_output("one; two").is_err());
    }

    #[test]
    fn augment_examples() {
        let f = fixture();
        let pair = augment_document(&f, &doc("d1", "original words")).unwrap();
        assert_eq!((pair.text_a.as_str(), pair.text_b.as_str()), ("v1", "v2"));

        let pair = augment_document(&f, &doc("d5", "kept as is")).unwrap();
        assert_eq!(pair.text_a, "kept as is");
        assert_eq!(pair.text_b, "kept as is");
        assert_eq!(pair.tokens_a, vec!["kept", "as", "is"]);

        let mut empty = doc("d6", "x");
        empty.raw_text = String::new();
        assert!(matches!(augment_document(&f, &empty), Err(Error::Validation(_))));
    }

    #[test]
    fn goals_and_augmented_jsonl() {
        let goals = vec![
            DocGoals {
                doc_id: "d1".into(),
                goals: vec!["x y".into(), "z w".into(), "q r".into()],
                relevant: true,
            },
            DocGoals::irrelevant("d2"),
        ];
        let text = write_goals_jsonl(&goals);
        assert!(text.starts_with(r#"{"doc_id":"d1","goals":["x y","z w","q r"],"relevant":true}"#));
        assert_eq!(parse_goals_jsonl(&text).unwrap(), goals);
        assert!(parse_goals_jsonl(r#"{"doc_id":"d","goals":["a"],"relevant":true}"#).is_err());

        let pairs = vec![AugmentedPair::new("d1", "aa bb".into(), "cc dd".into()).unwrap()];
        let text = write_augmented_jsonl(&pairs);
        assert_eq!(text, "{\"doc_id\":\"d1\",\"text_a\":\"aa bb\",\"text_b\":\"cc dd\"}\n");
        assert_eq!(parse_augmented_jsonl(&text).unwrap(), pairs);
    }

    #[test]
    fn phrase_is_token_mean() {
        let e = HashEmbedder::new(8, 7).unwrap();
        let one = embed_phrase(&e, "battery").unwrap();
        let tok = embed_tokens(&e, &["battery".to_string()]).unwrap();
        assert_eq!(one, tok.row(0));

        let two = embed_phrase(&e, "battery range").unwrap();
        let rows = embed_tokens(&e, &["battery".to_string(), "range".to_string()]).unwrap();
        for h in 0..8 {
            assert!((two[h] - (rows[[0, h]] + rows[[1, h]]) / 2.0).abs() < 1e-7);
        }
        assert_eq!(embed_phrase(&e, "battery range").unwrap(), two);
        assert!(matches!(embed_phrase(&e, "a ! b"), Err(Error::Domain(_))));
    }

    #[test]
    fn provider_spec_parsing() {
        assert_eq!(
            "fixture:/tmp/p.json".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Fixture("/tmp/p.json".into())
        );
        assert_eq!(
            "http://localhost:8080/v1".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Http("http://localhost:8080/v1".into())
        );
        assert_eq!(
            "http:https://api.example.com/v1".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Http("https://api.example.com/v1".into())
        );
        assert!("ftp:x".parse::<ProviderSpec>().is_err());
    }

    #[test]
    fn templates_carry_placeholders() {
        let p = render_goal_prompt("What bothers you?", "text body");
        assert!(p.contains("What bothers you?") && p.contains("text body"));
        assert!(p.contains("irrelevant"));
        assert!(render_augment_prompt("xyz").ends_with("xyz\n"));
    }
}
