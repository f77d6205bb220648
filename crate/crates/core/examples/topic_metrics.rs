//! Diversity, goal-relevance, coherence and annotator-agreement metrics on
//! hand-written topics.

use goaltm::corpus::{Corpus, Document};
use goaltm::extract::{TopicOutput, TopicsFile, WordProb};
use goaltm::metrics::{agreement, gcr, gs, gtr, npmi_uci, ut, GroundTruthGoals, TopicTextMode};
use goaltm::providers::HashEmbedder;

fn topic(id: usize, summary: &str, words: &str) -> TopicOutput {
    TopicOutput {
        id,
        summary: summary.into(),
        words: words
            .split_whitespace()
            .map(|w| WordProb { w: w.into(), p: 0.1 })
            .collect(),
    }
}

fn main() -> goaltm::Result<()> {
    let topics = TopicsFile {
        topics: vec![
            topic(0, "breakup struggles", "breakup partner trust cheat ring divorce lonely betray girlfriend relationship"),
            topic(1, "exam stress", "exam grade thesis advisor deadline lecture research paper study semester"),
            topic(2, "money worries", "rent debt budget partner loan salary savings bills invest mortgage"),
        ],
    };
    let lists: Vec<Vec<String>> = topics.topics.iter().map(|t| t.word_list()).collect();
    println!("UT = {:.4}", ut(&lists)?);

    let embedder = HashEmbedder::new(64, 0)?;
    let truth = GroundTruthGoals::new(vec!["breakup struggles".into(), "thesis deadline".into()])?;
    for mode in [TopicTextMode::TopWords, TopicTextMode::Summary] {
        println!(
            "{mode:?}: GS = {:.4}, GTR@0.45 = {:.3}, GCR@0.45 = {:.3}",
            gs(&topics, &truth, mode, &embedder)?,
            gtr(&topics, &truth, 0.45, mode, &embedder)?,
            gcr(&topics, &truth, 0.45, mode, &embedder)?
        );
    }

    let docs = ["breakup partner cheat", "exam grade advisor", "rent debt loan", "partner trust ring", "thesis deadline exam"];
    let docs = docs
        .iter()
        .enumerate()
        .map(|(i, t)| Document {
            id: format!("d{i}"),
            raw_text: t.to_string(),
            tokens: t.split_whitespace().map(str::to_owned).collect(),
            relevant: true,
        })
        .collect();
    let corpus = Corpus::new(docs, "what worries people")?;
    for (k, c) in npmi_uci(&lists, &corpus)?.iter().enumerate() {
        println!("topic {k}: NPMI {:.4}, UCI {:.4}, out of vocabulary {:?}", c.npmi, c.uci, c.oov);
    }

    let a = [true, true, false, true, false, false];
    let b = [true, false, false, true, false, true];
    let ag = agreement(&a, &b)?;
    println!("agreement: JSC {:.3}, SMC {:.3}, DSC {:.3}", ag.jsc, ag.smc, ag.dsc);
    Ok(())
}
