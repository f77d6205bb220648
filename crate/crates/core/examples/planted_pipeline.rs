//! The whole pipeline through the library API on a synthetic corpus with
//! three planted goal clusters: goals, augmentation, training, extraction
//! and evaluation.

use goaltm::corpus::{build_occurrence_index, build_vocabulary};
use goaltm::extract::{extract_topics, topic_word_distributions, TOP_WORDS};
use goaltm::metrics::{evaluate, GroundTruthGoals, TopicTextMode, THRESHOLDS};
use goaltm::providers::{augment_document, summarize_goals, Providers};
use goaltm::synthetic::{planted_corpus, planted_train_config, PlantedConfig};
use goaltm::train::{build_goal_set, train};

fn main() -> goaltm::Result<()> {
    let bundle = planted_corpus(&PlantedConfig::default())?;
    let providers = Providers::from_fixture(bundle.fixture.clone())?;
    let corpus = &bundle.corpus;

    let goals = corpus
        .documents()
        .iter()
        .map(|d| summarize_goals(providers.completion.as_ref(), d, corpus.goal_text()))
        .collect::<goaltm::Result<Vec<_>>>()?;
    let pairs = corpus
        .documents()
        .iter()
        .map(|d| augment_document(providers.completion.as_ref(), d))
        .collect::<goaltm::Result<Vec<_>>>()?;

    let config = planted_train_config(3);
    let embedder = providers.embedder.as_ref();
    let out = train(corpus, &goals, &pairs, &config, embedder)?;
    let totals = out.history.totals();
    println!(
        "{} steps, loss {:.3} -> {:.3}",
        out.checkpoint.steps,
        totals[..10].iter().sum::<f64>() / 10.0,
        totals[totals.len() - 10..].iter().sum::<f64>() / 10.0
    );

    let (kept, _) = build_goal_set(corpus, &goals)?;
    let vocab = build_vocabulary(&kept, config.min_count)?;
    let index = build_occurrence_index(&kept, &vocab);
    let table = topic_word_distributions(&kept, &vocab, &index, embedder, &out.checkpoint.topics)?;
    let topics = extract_topics(&table, &out.checkpoint.goals, embedder, TOP_WORDS)?;
    for t in &topics.topics {
        println!("topic {} [{}]: {}", t.id, t.summary, t.word_list()[..5].join(" "));
    }

    let truth = GroundTruthGoals::new(bundle.truth_goals.clone())?;
    let report = evaluate(&topics, &truth, &kept, TopicTextMode::TopWords, &THRESHOLDS, embedder)?;
    for (metric, value) in &report.metrics {
        println!("{metric:>10} {value:.4}");
    }
    Ok(())
}
