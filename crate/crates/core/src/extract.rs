//! Topic-word distributions, top words and goal-phrase summaries.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Occurrence, OccurrenceIndex, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{GoalMatrix, TopicMatrix};
use crate::numeric::{l1_normalize, norm, softmax_unchecked, SimplexVector};
use crate::providers::{embed_phrase, embed_tokens, Embedder};

pub const TOP_WORDS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TopicWordTable {
    /// `K x V` topic-word probabilities, one simplex row per topic.
    pub phi: Array2<f64>,
    /// `K x V`; column `v` is the mean topic affinity of word `v`'s occurrences.
    pub correlation: Array2<f64>,
    pub words: Vec<String>,
}

/// Unit-normalized topic rows, so that positive rescaling of a row is invisible.
fn unit_rows(topics: &TopicMatrix) -> Array2<f64> {
    let mut e = topics.values().clone();
    for mut row in e.rows_mut() {
        let n = norm(row.view());
        row.mapv_inplace(|x| x / n);
    }
    e
}

/// `softmax_k cos(e, e_t^k)` for one occurrence embedding.
fn affinity(e: ArrayView1<'_, f64>, unit_topics: &Array2<f64>) -> Result<Array1<f64>> {
    let n = norm(e);
    if n == 0.0 {
        return Err(Error::domain("occurrence embedding is the zero vector"));
    }
    let z = unit_topics.dot(&e) / n;
    Ok(softmax_unchecked(z.view()))
}

/// Mean topic affinity over every occurrence of one word.
pub fn word_topic_correlations(
    occurrences: &[Occurrence],
    corpus: &Corpus,
    embedder: &dyn Embedder,
    topics: &TopicMatrix,
) -> Result<SimplexVector> {
    if occurrences.is_empty() {
        return Err(Error::domain("word has no occurrences"));
    }
    let unit = unit_rows(topics);
    let mut acc = Array1::<f64>::zeros(topics.k());
    for occ in occurrences {
        let doc = corpus
            .get(&occ.doc_id)
            .ok_or_else(|| Error::validation(format!("occurrence in unknown document {:?}", occ.doc_id)))?;
        let embs = embed_tokens(embedder, &doc.tokens)?;
        if occ.position >= embs.nrows() {
            return Err(Error::validation(format!(
                "occurrence position {} beyond document {:?}",
                occ.position, occ.doc_id
            )));
        }
        acc += &affinity(embs.row(occ.position), &unit)?;
    }
    SimplexVector::new(acc / occurrences.len() as f64)
}

/// Builds the correlation table over the whole vocabulary, embedding each
/// document once.
pub fn topic_word_distributions(
    corpus: &Corpus,
    vocab: &Vocabulary,
    index: &OccurrenceIndex,
    embedder: &dyn Embedder,
    topics: &TopicMatrix,
) -> Result<TopicWordTable> {
    if vocab.is_empty() {
        return Err(Error::domain("vocabulary is empty"));
    }
    let k = topics.k();
    let unit = unit_rows(topics);
    let mut correlation = Array2::<f64>::zeros((k, vocab.len()));
    let mut counts = vec![0usize; vocab.len()];
    for doc in corpus.documents() {
        if !doc.tokens.iter().any(|t| vocab.index_of(t).is_some()) {
            continue;
        }
        let embs = embed_tokens(embedder, &doc.tokens)?;
        for (pos, t) in doc.tokens.iter().enumerate() {
            if let Some(v) = vocab.index_of(t) {
                let a = affinity(embs.row(pos), &unit)?;
                correlation.column_mut(v).scaled_add(1.0, &a);
                counts[v] += 1;
            }
        }
    }
    for (v, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::domain(format!("vocabulary word {:?} never occurs", vocab.word(v))));
        }
        debug_assert_eq!(c, index.occurrences(v).len());
        correlation.column_mut(v).mapv_inplace(|x| x / c as f64);
    }
    let mut phi = Array2::<f64>::zeros(correlation.dim());
    for (kk, row) in correlation.axis_iter(Axis(0)).enumerate() {
        phi.row_mut(kk).assign(l1_normalize(row)?.as_array());
    }
    Ok(TopicWordTable {
        phi,
        correlation,
        words: vocab.words().to_vec(),
    })
}

/// The `n` most probable words of topic `k`, ties broken by the word.
pub fn top_words(table: &TopicWordTable, k: usize, n: usize) -> Result<Vec<(String, f64)>> {
    if k >= table.phi.nrows() {
        return Err(Error::domain(format!("topic {k} out of range")));
    }
    if n > table.words.len() {
        return Err(Error::domain(format!(
            "asked for {n} top words from a vocabulary of {}",
            table.words.len()
        )));
    }
    let row = table.phi.row(k);
    let mut order: Vec<usize> = (0..table.words.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then_with(|| table.words[a].cmp(&table.words[b])));
    Ok(order[..n].iter().map(|&v| (table.words[v].clone(), row[v])).collect())
}

/// The member of goal cluster `k` whose phrase embedding is closest in
/// cosine to the cluster's centroid; ties go to the smaller phrase.
pub fn topic_summary(k: usize, goals: &GoalMatrix, embedder: &dyn Embedder) -> Result<String> {
    if k >= goals.k() {
        return Err(Error::domain(format!("goal cluster {k} out of range")));
    }
    let centroid = goals.centroids().row(k);
    let mut best: Option<(f64, &str)> = None;
    for phrase in goals.members(k) {
        let e = embed_phrase(embedder, phrase)?;
        let c = crate::numeric::cosine(e.view(), centroid)?;
        best = match best {
            Some((bc, bp)) if bc > c || (bc == c && bp <= phrase) => Some((bc, bp)),
            _ => Some((c, phrase)),
        };
    }
    best.map(|(_, p)| p.to_owned())
        .ok_or_else(|| Error::domain(format!("goal cluster {k} is empty")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordProb {
    pub w: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicOutput {
    pub id: usize,
    pub summary: String,
    pub words: Vec<WordProb>,
}

impl TopicOutput {
    pub fn word_list(&self) -> Vec<String> {
        self.words.iter().map(|w| w.w.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicsFile {
    pub topics: Vec<TopicOutput>,
}

impl TopicsFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("topics serialize");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Top words and summary for every topic.
///
/// Topic `k` is summarized from goal cluster `k`, the cluster its row was
/// tied to by the transport cost during training.
pub fn extract_topics(
    table: &TopicWordTable,
    goals: &GoalMatrix,
    embedder: &dyn Embedder,
    n: usize,
) -> Result<TopicsFile> {
    let mut topics = Vec::with_capacity(table.phi.nrows());
    for k in 0..table.phi.nrows() {
        let words = top_words(table, k, n)?
            .into_iter()
            .map(|(w, p)| WordProb { w, p })
            .collect();
        topics.push(TopicOutput {
            id: k,
            summary: topic_summary(k, goals, embedder)?,
            words,
        });
    }
    Ok(TopicsFile { topics })
}
