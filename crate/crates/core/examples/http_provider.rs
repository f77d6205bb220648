//! Goal summarization and token embeddings through an OpenAI-compatible
//! endpoint. Needs `GOALTM_API_KEY` and network access.
//!
//! ```text
//! GOALTM_API_KEY=... cargo run --example http_provider -- https://api.openai.com/v1
//! ```

use goaltm::corpus::{tokenize_fallback, Document};
use goaltm::providers::{embed_tokens, summarize_goals, HttpCompletion, HttpConfig, HttpEmbedder, API_KEY_ENV};

fn main() -> goaltm::Result<()> {
    if std::env::var(API_KEY_ENV).is_err() {
        eprintln!("set {API_KEY_ENV} to run this example");
        return Ok(());
    }
    let config = HttpConfig {
        base_url: std::env::args().nth(1).unwrap_or_else(|| HttpConfig::default().base_url),
        ..HttpConfig::default()
    };
    let text = "My girlfriend cheated on me and I do not know whether I can ever trust anyone again.";
    let doc = Document {
        id: "demo".into(),
        raw_text: text.into(),
        tokens: tokenize_fallback(text, None),
        relevant: true,
    };
    let completion = HttpCompletion::new(config.clone());
    let goals = summarize_goals(&completion, &doc, "What problems are people seeking advice on?")?;
    println!("goals: {:?}", goals.goals);

    let embedder = HttpEmbedder::new(config)?;
    let embs = embed_tokens(&embedder, &doc.tokens)?;
    println!("embedded {} tokens into {} dimensions", embs.nrows(), embs.ncols());
    Ok(())
}
