//! Topic diversity, goal relevance, annotator agreement and co-occurrence
//! coherence.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::extract::{TopicsFile, TOP_WORDS};
use crate::numeric::{cosine, kmeans, squared_distance};
use crate::providers::Embedder;
use crate::train::embed_phrases;

/// Thresholds at which goal-relevant topic and coverage rates are reported.
pub const THRESHOLDS: [f64; 6] = [0.4, 0.425, 0.45, 0.475, 0.5, 0.525];

pub const NPMI_EPSILON: f64 = 1e-12;

/// Distinct words across all lists over `10 K`.
pub fn ut(topic_word_lists: &[Vec<String>]) -> Result<f64> {
    if topic_word_lists.is_empty() {
        return Err(Error::domain("no topics"));
    }
    if let Some((k, l)) = topic_word_lists.iter().enumerate().find(|(_, l)| l.len() != TOP_WORDS) {
        return Err(Error::domain(format!(
            "topic {k} has {} words, expected {TOP_WORDS}",
            l.len()
        )));
    }
    let distinct: HashSet<&str> = topic_word_lists.iter().flatten().map(String::as_str).collect();
    Ok(distinct.len() as f64 / (TOP_WORDS * topic_word_lists.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthGoals {
    pub goals: Vec<String>,
}

impl GroundTruthGoals {
    pub fn new(goals: Vec<String>) -> Result<Self> {
        if goals.is_empty() {
            return Err(Error::validation("ground-truth goal list is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = goals.iter().find(|g| !seen.insert(g.as_str())) {
            return Err(Error::validation(format!("duplicate ground-truth goal {dup:?}")));
        }
        Ok(GroundTruthGoals { goals })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let raw: GroundTruthGoals = serde_json::from_str(&text)?;
        GroundTruthGoals::new(raw.goals)
    }
}

/// Which text stands for a topic when it is embedded for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopicTextMode {
    /// Top words joined by single spaces.
    #[default]
    TopWords,
    Summary,
}

impl std::str::FromStr for TopicTextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top-words" => Ok(TopicTextMode::TopWords),
            "summary" => Ok(TopicTextMode::Summary),
            other => Err(Error::validation(format!(
                "topic text mode must be top-words or summary, got {other:?}"
            ))),
        }
    }
}

pub fn topic_texts(topics: &TopicsFile, mode: TopicTextMode) -> Vec<String> {
    topics
        .topics
        .iter()
        .map(|t| match mode {
            TopicTextMode::TopWords => t.word_list().join(" "),
            TopicTextMode::Summary => t.summary.clone(),
        })
        .collect()
}

/// `K x N_g` cosines between topic texts and ground-truth goals.
pub fn similarity_matrix(topic_texts: &[String], truth: &GroundTruthGoals, embedder: &dyn Embedder) -> Result<Array2<f64>> {
    if topic_texts.is_empty() {
        return Err(Error::domain("no topics"));
    }
    let t = embed_phrases(topic_texts, embedder)?;
    let g = embed_phrases(&truth.goals, embedder)?;
    let mut s = Array2::<f64>::zeros((t.nrows(), g.nrows()));
    for i in 0..t.nrows() {
        for j in 0..g.nrows() {
            s[[i, j]] = cosine(t.row(i), g.row(j))?;
        }
    }
    Ok(s)
}

fn row_maxima(s: &Array2<f64>, axis: Axis) -> Vec<f64> {
    s.axis_iter(axis)
        .map(|r| r.fold(f64::NEG_INFINITY, |m, &x| m.max(x)))
        .collect()
}

fn check_threshold(sigma: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&sigma) {
        Ok(())
    } else {
        Err(Error::domain(format!("threshold {sigma} outside [-1, 1]")))
    }
}

/// Mean over topics of the best goal cosine.
pub fn gs_from_similarity(s: &Array2<f64>) -> f64 {
    let best = row_maxima(s, Axis(0));
    best.iter().sum::<f64>() / best.len() as f64
}

/// Share of topics whose best goal cosine is strictly above `sigma1`.
pub fn gtr_from_similarity(s: &Array2<f64>, sigma1: f64) -> Result<f64> {
    check_threshold(sigma1)?;
    let best = row_maxima(s, Axis(0));
    Ok(best.iter().filter(|&&b| b > sigma1).count() as f64 / best.len() as f64)
}

/// Share of ground-truth goals whose best topic cosine is strictly above `sigma2`.
pub fn gcr_from_similarity(s: &Array2<f64>, sigma2: f64) -> Result<f64> {
    check_threshold(sigma2)?;
    let best = row_maxima(s, Axis(1));
    Ok(best.iter().filter(|&&b| b > sigma2).count() as f64 / best.len() as f64)
}

pub fn gs(topics: &TopicsFile, truth: &GroundTruthGoals, mode: TopicTextMode, embedder: &dyn Embedder) -> Result<f64> {
    let s = similarity_matrix(&topic_texts(topics, mode), truth, embedder)?;
    Ok(gs_from_similarity(&s))
}

pub fn gtr(
    topics: &TopicsFile,
    truth: &GroundTruthGoals,
    sigma1: f64,
    mode: TopicTextMode,
    embedder: &dyn Embedder,
) -> Result<f64> {
    gtr_from_similarity(&similarity_matrix(&topic_texts(topics, mode), truth, embedder)?, sigma1)
}

pub fn gcr(
    topics: &TopicsFile,
    truth: &GroundTruthGoals,
    sigma2: f64,
    mode: TopicTextMode,
    embedder: &dyn Embedder,
) -> Result<f64> {
    gcr_from_similarity(&similarity_matrix(&topic_texts(topics, mode), truth, embedder)?, sigma2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub jsc: f64,
    pub smc: f64,
    pub dsc: f64,
    /// Neither annotator marked anything; `jsc` and `dsc` are reported as 1.
    pub undefined: bool,
}

/// Jaccard, simple matching and Dice coefficients of two binary labelings.
pub fn agreement(labels_a: &[bool], labels_b: &[bool]) -> Result<Agreement> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::domain(format!(
            "label lists differ in length: {} vs {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    if labels_a.is_empty() {
        return Err(Error::domain("label lists are empty"));
    }
    let (mut n11, mut n10, mut n01, mut n00) = (0usize, 0usize, 0usize, 0usize);
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        match (a, b) {
            (true, true) => n11 += 1,
            (true, false) => n10 += 1,
            (false, true) => n01 += 1,
            (false, false) => n00 += 1,
        }
    }
    let smc = (n11 + n00) as f64 / labels_a.len() as f64;
    let disagree = n10 + n01;
    if n11 + disagree == 0 {
        return Ok(Agreement {
            jsc: 1.0,
            smc,
            dsc: 1.0,
            undefined: true,
        });
    }
    Ok(Agreement {
        jsc: n11 as f64 / (n11 + disagree) as f64,
        smc,
        dsc: (2 * n11) as f64 / (2 * n11 + disagree) as f64,
        undefined: false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationCluster {
    pub cluster: usize,
    pub exemplar: String,
    pub members: Vec<String>,
}

/// Groups goal phrases for manual annotation; the exemplar is the member
/// nearest its cluster centroid.
pub fn cluster_for_annotation(
    phrases: &[String],
    n_clusters: usize,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<Vec<AnnotationCluster>> {
    if phrases.len() < n_clusters {
        return Err(Error::domain(format!(
            "{} goal phrases cannot fill {n_clusters} clusters",
            phrases.len()
        )));
    }
    let embs = embed_phrases(phrases, embedder)?;
    let km = kmeans(embs.view(), n_clusters, seed)?;
    let mut out = Vec::with_capacity(n_clusters);
    for c in 0..n_clusters {
        let members: Vec<usize> = km.members(c).collect();
        let exemplar = members
            .iter()
            .map(|&i| (squared_distance(embs.row(i), km.centroids.row(c)), &phrases[i]))
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
            .map(|(_, p)| p.clone())
            .expect("k-means leaves no cluster empty");
        out.push(AnnotationCluster {
            cluster: c,
            exemplar,
            members: members.iter().map(|&i| phrases[i].clone()).collect(),
        });
    }
    Ok(out)
}

pub fn annotation_jsonl(clusters: &[AnnotationCluster]) -> String {
    clusters
        .iter()
        .map(|c| serde_json::to_string(c).expect("cluster serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub npmi: f64,
    pub uci: f64,
    /// Words with no document in the corpus.
    pub oov: Vec<String>,
}

/// Document co-occurrence NPMI and UCI, averaged over all word pairs of each
/// topic list. Probabilities are smoothed by adding [`NPMI_EPSILON`].
pub fn npmi_uci(topic_word_lists: &[Vec<String>], corpus: &Corpus) -> Result<Vec<Coherence>> {
    if corpus.is_empty() {
        return Err(Error::domain("empty corpus"));
    }
    let wanted: BTreeSet<&str> = topic_word_lists.iter().flatten().map(String::as_str).collect();
    let mut docs_of: BTreeMap<&str, Vec<usize>> = wanted.iter().map(|&w| (w, Vec::new())).collect();
    for (d, doc) in corpus.documents().iter().enumerate() {
        let present: BTreeSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for w in present {
            if let Some(list) = docs_of.get_mut(w) {
                list.push(d);
            }
        }
    }
    let n_docs = corpus.len() as f64;
    let eps = NPMI_EPSILON;
    let mut out = Vec::with_capacity(topic_word_lists.len());
    for list in topic_word_lists {
        if list.len() < 2 {
            return Err(Error::domain("coherence needs at least two words per topic"));
        }
        let mut npmi_sum = 0.0;
        let mut uci_sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..list.len() {
            for j in i + 1..list.len() {
                let (a, b) = (&docs_of[list[i].as_str()], &docs_of[list[j].as_str()]);
                let both = intersect_count(a, b) as f64 / n_docs;
                let (pa, pb) = (a.len() as f64 / n_docs, b.len() as f64 / n_docs);
                let pmi = ((both + eps) / (pa * pb + eps)).ln();
                let denom = -(both + eps).ln();
                uci_sum += pmi;
                npmi_sum += if denom > 0.0 { pmi / denom } else { 1.0 };
                pairs += 1;
            }
        }
        let oov: BTreeSet<String> = list
            .iter()
            .filter(|w| docs_of[w.as_str()].is_empty())
            .cloned()
            .collect();
        out.push(Coherence {
            npmi: npmi_sum / pairs as f64,
            uci: uci_sum / pairs as f64,
            oov: oov.into_iter().collect(),
        });
    }
    Ok(out)
}

fn intersect_count(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Evaluation report: a flat metric map plus per-threshold rate arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub k: usize,
    pub mode: TopicTextMode,
    pub thresholds: Vec<f64>,
    pub gtr: Vec<f64>,
    pub gcr: Vec<f64>,
    pub oov_words: Vec<String>,
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))
    }
}

/// Every metric for one set of topics.
///
/// `npmi` and `uci` come from document co-occurrence in `corpus` and are not
/// comparable to scores from external reference corpora.
pub fn evaluate(
    topics: &TopicsFile,
    truth: &GroundTruthGoals,
    corpus: &Corpus,
    mode: TopicTextMode,
    thresholds: &[f64],
    embedder: &dyn Embedder,
) -> Result<Report> {
    let lists: Vec<Vec<String>> = topics.topics.iter().map(|t| t.word_list()).collect();
    let s = similarity_matrix(&topic_texts(topics, mode), truth, embedder)?;
    let gtr = thresholds
        .iter()
        .map(|&t| gtr_from_similarity(&s, t))
        .collect::<Result<Vec<_>>>()?;
    let gcr = thresholds
        .iter()
        .map(|&t| gcr_from_similarity(&s, t))
        .collect::<Result<Vec<_>>>()?;
    let coherence = npmi_uci(&lists, corpus)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("ut".to_owned(), ut(&lists)?);
    metrics.insert("gs".to_owned(), gs_from_similarity(&s));
    for (i, &t) in thresholds.iter().enumerate() {
        metrics.insert(format!("gtr@{t}"), gtr[i]);
        metrics.insert(format!("gcr@{t}"), gcr[i]);
    }
    let n = coherence.len() as f64;
    metrics.insert("npmi".to_owned(), coherence.iter().map(|c| c.npmi).sum::<f64>() / n);
    metrics.insert("uci".to_owned(), coherence.iter().map(|c| c.uci).sum::<f64>() / n);
    let oov: BTreeSet<String> = coherence.into_iter().flat_map(|c| c.oov).collect();
    Ok(Report {
        k: topics.topics.len(),
        mode,
        thresholds: thresholds.to_vec(),
        gtr,
        gcr,
        oov_words: oov.into_iter().collect(),
        metrics,
    })
}
