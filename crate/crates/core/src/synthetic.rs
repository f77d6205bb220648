//! Synthetic corpora with planted goal clusters, for offline end-to-end runs.
//!
//! Cluster tokens follow the `c<k>_<word>` scheme understood by
//! [`PlantedEmbedder`](crate::providers::PlantedEmbedder), so every cluster
//! occupies its own basis direction in embedding space.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_fallback, Corpus, Document};
use crate::error::{Error, Result};
use crate::providers::{EmbeddingSpec, FixtureCompletions, FixtureFile};
use crate::train::TrainConfig;

const THEMES: [&[&str]; 3] = [
    &["budget", "savings", "debt", "rent", "salary", "loan", "bills", "invest"],
    &["exam", "thesis", "lecture", "grade", "advisor", "research", "paper", "deadline"],
    &["breakup", "trust", "partner", "lonely", "dating", "argue", "family", "friend"],
];

const FILLER: [&str; 12] = [
    "today", "really", "think", "week", "people", "time", "maybe", "thing", "still", "feel", "know", "year",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub n_docs: usize,
    pub n_clusters: usize,
    pub dim: usize,
    pub seed: u64,
    pub cluster_tokens_per_doc: usize,
    pub filler_tokens_per_doc: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_docs: 60,
            n_clusters: 3,
            dim: 16,
            seed: 7,
            cluster_tokens_per_doc: 8,
            filler_tokens_per_doc: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedBundle {
    pub corpus: Corpus,
    pub fixture: FixtureFile,
    /// One ground-truth goal phrase per cluster.
    pub truth_goals: Vec<String>,
    /// Planted cluster of every document.
    pub labels: BTreeMap<String, usize>,
}

pub const PLANTED_GOAL_TEXT: &str = "What personal goals are the authors of these posts pursuing?";

fn cluster_words(c: usize) -> Vec<String> {
    match THEMES.get(c) {
        Some(words) => words.iter().map(|w| format!("c{c}_{w}")).collect(),
        None => (0..8).map(|i| format!("c{c}_w{i}")).collect(),
    }
}

/// Goal phrases of cluster `c`: consecutive word pairs of its vocabulary.
fn cluster_goal_phrases(c: usize) -> Vec<String> {
    let w = cluster_words(c);
    (0..w.len() / 2).map(|i| format!("{} {}", w[2 * i], w[2 * i + 1])).collect()
}

pub fn planted_corpus(config: &PlantedConfig) -> Result<PlantedBundle> {
    if config.n_clusters == 0 || config.n_clusters > config.dim {
        return Err(Error::domain(format!(
            "need 1 <= clusters <= dim, got {} clusters at dim {}",
            config.n_clusters, config.dim
        )));
    }
    if config.cluster_tokens_per_doc == 0 {
        return Err(Error::domain("documents need at least one cluster token"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut docs = Vec::with_capacity(config.n_docs);
    let mut completions = FixtureCompletions::default();
    let mut labels = BTreeMap::new();
    let width = config.n_docs.to_string().len();

    for i in 0..config.n_docs {
        let c = i % config.n_clusters;
        let id = format!("d{i:0width$}");
        let words = cluster_words(c);
        let mut tokens: Vec<&str> = (0..config.cluster_tokens_per_doc)
            .map(|_| words.choose(&mut rng).unwrap().as_str())
            .collect();
        tokens.extend((0..config.filler_tokens_per_doc).map(|_| *FILLER.choose(&mut rng).unwrap()));
        tokens.shuffle(&mut rng);
        let text = tokens.join(" ");

        let variant = |rng: &mut ChaCha8Rng| {
            let mut v = tokens.clone();
            v.shuffle(rng);
            if v.len() > 2 {
                v.pop();
            }
            v.join(" ")
        };
        let a = variant(&mut rng);
        let b = variant(&mut rng);
        completions.augment.insert(id.clone(), (a, b));

        let phrases = cluster_goal_phrases(c);
        let picked: Vec<&String> = phrases.choose_multiple(&mut rng, 3.min(phrases.len())).collect();
        let summary = picked.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; ");
        completions.goals.insert(id.clone(), summary);

        docs.push(Document {
            id: id.clone(),
            raw_text: text.clone(),
            tokens: tokenize_fallback(&text, None),
            relevant: true,
        });
        labels.insert(id, c);
    }

    let truth_goals = (0..config.n_clusters)
        .map(|c| cluster_words(c)[..3].join(" "))
        .collect();
    Ok(PlantedBundle {
        corpus: Corpus::new(docs, PLANTED_GOAL_TEXT)?,
        fixture: FixtureFile {
            completions,
            embedding: EmbeddingSpec::Planted {
                dim: config.dim,
                seed: config.seed,
            },
        },
        truth_goals,
        labels,
    })
}

/// Training configuration used for planted runs: one topic per cluster,
/// a fixed step budget and otherwise default hyperparameters.
pub fn planted_train_config(n_clusters: usize) -> TrainConfig {
    TrainConfig {
        k: n_clusters,
        max_steps: Some(200),
        seed: 1,
        ..TrainConfig::default()
    }
}

impl PlantedBundle {
    /// File name and contents of every file in an on-disk fixture bundle:
    /// corpus, provider fixture, ground truth and training config.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        let pretty = |v: serde_json::Value| serde_json::to_string_pretty(&v).expect("json") + "\n";
        let truth = serde_json::json!({ "goals": self.truth_goals });
        let config = serde_json::to_value(planted_train_config(self.truth_goals.len())).expect("json");
        vec![
            ("corpus.jsonl", self.corpus.to_jsonl()),
            ("goal.txt", self.corpus.goal_text().to_owned()),
            ("provider.json", pretty(serde_json::to_value(&self.fixture).expect("json"))),
            ("truth.json", pretty(truth)),
            ("config.json", pretty(config)),
        ]
    }

    pub fn write_to(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, text) in self.files() {
            crate::providers::write_atomic(&dir.join(name), text.as_bytes())?;
        }
        Ok(())
    }
}
