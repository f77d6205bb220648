//! Documents, JSONL ingestion, vocabulary and the per-word occurrence index.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum token length kept by [`tokenize_fallback`], in characters.
const MIN_TOKEN_CHARS: usize = 2;

pub const DEFAULT_MIN_COUNT: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub relevant: bool,
}

/// One line of the corpus JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DocumentRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relevant: Option<bool>,
}

/// Words dropped by the fallback tokenizer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stoplist(HashSet<String>);

impl Stoplist {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Stoplist(
            words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        )
    }

    /// Plain text, one word per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Stoplist::new(text.lines()))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

/// Lowercases, splits on runs of characters that are neither alphanumeric nor
/// `_`, and drops fragments shorter than two characters or in the stoplist.
pub fn tokenize_fallback(text: &str, stoplist: Option<&Stoplist>) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| t.chars().count() >= MIN_TOKEN_CHARS)
        .filter(|t| stoplist.is_none_or(|s| !s.contains(t)))
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    goal_text: String,
    by_id: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.goal_text == other.goal_text && self.documents == other.documents
    }
}

impl Corpus {
    pub fn new(documents: Vec<Document>, goal_text: impl Into<String>) -> Result<Self> {
        let goal_text = goal_text.into();
        if goal_text.trim().is_empty() {
            return Err(Error::validation("goal text must be non-empty"));
        }
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(Error::validation(format!("document #{i} has an empty id")));
            }
            if doc.relevant && doc.tokens.is_empty() {
                return Err(Error::validation(format!(
                    "document {:?} is marked relevant but has no tokens",
                    doc.id
                )));
            }
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate document id {:?}", doc.id)));
            }
        }
        Ok(Corpus {
            documents,
            goal_text,
            by_id,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn goal_text(&self) -> &str {
        &self.goal_text
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    /// Keeps the documents for which `keep` returns true, in order.
    pub fn retain(&self, mut keep: impl FnMut(&Document) -> bool) -> Corpus {
        let documents: Vec<Document> = self.documents.iter().filter(|d| keep(d)).cloned().collect();
        let by_id = documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
        Corpus {
            documents,
            goal_text: self.goal_text.clone(),
            by_id,
        }
    }

    /// Serializes to JSONL, always writing `tokens` and `relevant`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            let record = DocumentRecord {
                id: doc.id.clone(),
                text: doc.raw_text.clone(),
                tokens: Some(doc.tokens.clone()),
                relevant: Some(doc.relevant),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }
}

pub fn load_corpus(path: impl AsRef<Path>, goal_text: &str) -> Result<Corpus> {
    load_corpus_with_stoplist(path, goal_text, None)
}

pub fn load_corpus_with_stoplist(
    path: impl AsRef<Path>,
    goal_text: &str,
    stoplist: Option<&Stoplist>,
) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), goal_text, stoplist).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses corpus JSONL from any reader. Blank lines are skipped.
pub fn parse_corpus(
    reader: impl BufRead,
    goal_text: &str,
    stoplist: Option<&Stoplist>,
) -> Result<Corpus> {
    let mut documents = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let tokens = match record.tokens {
            Some(tokens) => tokens.into_iter().map(|t| t.to_lowercase()).collect(),
            None => tokenize_fallback(&record.text, stoplist),
        };
        documents.push(Document {
            id: record.id,
            raw_text: record.text,
            tokens,
            relevant: record.relevant.unwrap_or(true),
        });
    }
    Corpus::new(documents, goal_text)
}

/// Corpus vocabulary in descending-count order, ties broken by the word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, v: usize) -> &str {
        &self.words[v]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Corpus frequency of `word`, or 0 when it is not in the vocabulary.
    pub fn count(&self, word: &str) -> usize {
        self.index_of(word).map_or(0, |v| self.counts[v])
    }

    pub fn count_at(&self, v: usize) -> usize {
        self.counts[v]
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }
}

pub fn build_vocabulary(corpus: &Corpus, min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::domain("min_count must be at least 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus.documents() {
        for t in &doc.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let words: Vec<String> = kept.iter().map(|(w, _)| (*w).to_owned()).collect();
    let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Ok(Vocabulary {
        counts: kept.iter().map(|&(_, c)| c).collect(),
        words,
        index,
        min_count,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Occurrence {
    pub doc_id: String,
    pub position: usize,
}

/// For every vocabulary word, each position where it occurs, in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccurrenceIndex {
    entries: Vec<Vec<Occurrence>>,
}

impl OccurrenceIndex {
    /// Occurrences of the `v`-th vocabulary word.
    pub fn occurrences(&self, v: usize) -> &[Occurrence] {
        &self.entries[v]
    }

    pub fn lookup<'a>(&'a self, vocab: &Vocabulary, word: &str) -> Option<&'a [Occurrence]> {
        vocab.index_of(word).map(|v| self.entries[v].as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn build_occurrence_index(corpus: &Corpus, vocab: &Vocabulary) -> OccurrenceIndex {
    let mut entries = vec![Vec::new(); vocab.len()];
    for doc in corpus.documents() {
        for (position, t) in doc.tokens.iter().enumerate() {
            if let Some(v) = vocab.index_of(t) {
                entries[v].push(Occurrence {
                    doc_id: doc.id.clone(),
                    position,
                });
            }
        }
    }
    OccurrenceIndex { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, tokens: &[&str]) -> Document {
        Document {
            id: id.into(),
            raw_text: tokens.join(" "),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            relevant: true,
        }
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize_fallback("I love Tesla!", None), vec!["love", "tesla"]);
        assert!(tokenize_fallback("", None).is_empty());
        assert!(tokenize_fallback("a-a-a", None).is_empty());
        assert_eq!(tokenize_fallback("A B a", None), Vec::<String>::new());
        assert_eq!(tokenize_fallback("c0_breakup  trust", None), vec!["c0_breakup", "trust"]);
        let stop = Stoplist::new(["the"]);
        assert_eq!(tokenize_fallback("The cat", Some(&stop)), vec!["cat"]);
    }

    #[test]
    fn parses_records_and_tokenizes_missing_tokens() {
        let text = r#"{"id":"d1","text":"A B a"}
{"id":"d2","text":"Hello world","tokens":["Hello","world"],"relevant":false}
{"id":"d3","text":"more text here"}
"#;
        // "A B a" has only one-letter fragments, so it must carry explicit tokens
        // or be flagged irrelevant.
        let err = parse_corpus(text.as_bytes(), "goal", None).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));

        let text = text.replace(r#""text":"A B a"}"#, r#""text":"A B a","tokens":["a","b","a"]}"#);
        let corpus = parse_corpus(text.as_bytes(), "goal", None).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.get("d1").unwrap().tokens, vec!["a", "b", "a"]);
        assert_eq!(corpus.get("d2").unwrap().tokens, vec!["hello", "world"]);
        assert!(!corpus.get("d2").unwrap().relevant);
        assert_eq!(corpus.get("d3").unwrap().tokens, vec!["more", "text", "here"]);
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = "{\"id\":\"d1\",\"text\":\"one two\"}\n{\"id\":\"d1\",\"text\":\"three four\"}\n";
        match parse_corpus(text.as_bytes(), "goal", None) {
            Err(Error::Validation(msg)) => assert!(msg.contains("\"d1\"")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"d1\",\"text\":\"one two\"}\n{not json\n";
        match parse_corpus(text.as_bytes(), "goal", None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_goal_rejected() {
        assert!(Corpus::new(vec![], "  ").is_err());
    }

    #[test]
    fn vocabulary_threshold_and_order() {
        let corpus = Corpus::new(vec![doc("d1", &["aa", "aa", "bb", "aa"])], "g").unwrap();
        let v = build_vocabulary(&corpus, 2).unwrap();
        assert_eq!(v.words(), ["aa"]);
        let v = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(v.words(), ["aa", "bb"]);

        let corpus = Corpus::new(vec![doc("d1", &["yy", "xx", "yy", "xx"])], "g").unwrap();
        let v = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(v.words(), ["xx", "yy"]);

        let empty = Corpus::new(vec![], "g").unwrap();
        assert!(build_vocabulary(&empty, 2).unwrap().is_empty());
        assert!(build_vocabulary(&empty, 0).is_err());
    }

    #[test]
    fn occurrence_index_positions() {
        let corpus = Corpus::new(
            vec![doc("d1", &["aa", "bb", "aa"]), doc("d2", &["bb", "cc"])],
            "g",
        )
        .unwrap();
        let vocab = build_vocabulary(&corpus, 2).unwrap();
        let index = build_occurrence_index(&corpus, &vocab);
        let a = index.lookup(&vocab, "aa").unwrap();
        assert_eq!(
            a,
            [
                Occurrence { doc_id: "d1".into(), position: 0 },
                Occurrence { doc_id: "d1".into(), position: 2 }
            ]
        );
        assert_eq!(index.lookup(&vocab, "bb").unwrap().len(), 2);
        assert!(index.lookup(&vocab, "cc").is_none());
    }
}
