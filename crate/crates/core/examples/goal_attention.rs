//! Goal-attention pooling of a document: tokens close to one of the
//! document's goal phrases dominate the pooled vector.

use goaltm::providers::{embed_phrase, embed_tokens, PlantedEmbedder};
use goaltm::represent::goal_attention_pool;

fn main() -> goaltm::Result<()> {
    let embedder = PlantedEmbedder::new(8, 1)?;
    let tokens: Vec<String> = ["weather", "c0_rent", "today", "c0_debt", "coffee"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let token_embs = embed_tokens(&embedder, &tokens)?;
    let goals = [embed_phrase(&embedder, "c0_budget c0_savings")?];
    let views: Vec<_> = goals.iter().map(|g| g.view()).collect();
    let rep = goal_attention_pool(token_embs.view(), &views)?;

    println!("{:>10} {:>9}", "token", "weight");
    for (t, w) in tokens.iter().zip(rep.attention.view()) {
        println!("{t:>10} {w:>9.4}");
    }
    let cos = |a: &ndarray::Array1<f64>| a.dot(&goals[0]) / (a.dot(a).sqrt() * goals[0].dot(&goals[0]).sqrt());
    println!("cos(goal-pooled, goal) = {:.4}", cos(&rep.goal_pooled));
    println!("cos(mean-pooled, goal) = {:.4}", cos(&rep.mean_pooled));
    Ok(())
}
