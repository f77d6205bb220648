//! OpenAI-compatible HTTP backends.

use std::thread;
use std::time::Duration;

use ndarray::Array2;
use serde_json::{json, Value};

use super::{render_augment_prompt, render_goal_prompt, CompletionProvider, Embedder};
use crate::corpus::Document;
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "GOALTM_API_KEY";

/// Largest number of inputs sent in one embeddings request.
const EMBED_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Base URL without trailing slash, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dim: usize,
    pub temperature: Option<f64>,
    /// Falls back to `GOALTM_API_KEY` when unset.
    pub api_key: Option<String>,
    /// Total attempts per request.
    pub retries: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com/v1".into(),
            chat_model: "gpt-3.5-turbo".into(),
            embedding_model: "text-embedding-ada-002".into(),
            embedding_dim: 1536,
            temperature: None,
            api_key: None,
            retries: 3,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

impl HttpConfig {
    fn endpoint(&self, path: &str) -> String {
        format!("{}/{path}", self.base_url.trim_end_matches('/'))
    }

    fn key(&self) -> Option<String> {
        self.api_key.clone().or_else(|| std::env::var(API_KEY_ENV).ok())
    }
}

struct Client {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl Client {
    fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(config.timeout))
                .http_status_as_error(false)
                .build(),
        );
        Client { config, agent }
    }

    /// POSTs `body`, retrying on connection failures, 429 and 5xx.
    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = self.config.endpoint(path);
        let key = self.config.key();
        let attempts = self.config.retries.max(1);
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                thread::sleep(delay);
                delay *= 2;
            }
            let mut req = self.agent.post(&url);
            if let Some(k) = &key {
                req = req.header("Authorization", &format!("Bearer {k}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| Error::Transport(format!("{url}: reading body: {e}")))?;
                    if (200..300).contains(&status) {
                        return serde_json::from_str(&text)
                            .map_err(|e| Error::Protocol(format!("{url}: response is not JSON: {e}")));
                    }
                    last = format!("{url}: HTTP {status}: {}", truncate(&text, 200));
                    if status != 429 && status < 500 {
                        return Err(Error::Transport(last));
                    }
                }
                Err(e) => last = format!("{url}: {e}"),
            }
            log::warn!("attempt {attempt}/{attempts} failed: {last}");
        }
        Err(Error::Transport(format!("giving up after {attempts} attempts: {last}")))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub struct HttpCompletion {
    client: Client,
}

impl HttpCompletion {
    pub fn new(config: HttpConfig) -> Self {
        HttpCompletion {
            client: Client::new(config),
        }
    }

    pub fn complete(&self, prompt: &str) -> Result<String> {
        let cfg = &self.client.config;
        let mut body = json!({
            "model": cfg.chat_model,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(t) = cfg.temperature {
            body["temperature"] = json!(t);
        }
        let resp = self.client.post("chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Error::Protocol("chat response lacks choices[0].message.content".into()))
    }
}

impl CompletionProvider for HttpCompletion {
    fn summarize(&self, doc: &Document, goal_text: &str) -> Result<String> {
        self.complete(&render_goal_prompt(goal_text, &doc.raw_text))
    }

    fn rephrase(&self, doc: &Document) -> Result<(String, String)> {
        let prompt = render_augment_prompt(&doc.raw_text);
        Ok((self.complete(&prompt)?, self.complete(&prompt)?))
    }
}

/// Sends each token as a separate input and stacks the returned vectors.
pub struct HttpEmbedder {
    client: Client,
}

impl HttpEmbedder {
    pub fn new(config: HttpConfig) -> Result<Self> {
        if config.embedding_dim == 0 {
            return Err(Error::domain("embedding dimension must be positive"));
        }
        Ok(HttpEmbedder {
            client: Client::new(config),
        })
    }

    fn embed_batch(&self, inputs: &[String], out: &mut Vec<f64>) -> Result<()> {
        let cfg = &self.client.config;
        let body = json!({"model": cfg.embedding_model, "input": inputs});
        let resp = self.client.post("embeddings", &body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol("embeddings response lacks data".into()))?;
        if data.len() != inputs.len() {
            return Err(Error::Protocol(format!(
                "sent {} inputs, got {} embeddings",
                inputs.len(),
                data.len()
            )));
        }
        // Honour an explicit index field when present.
        let mut rows: Vec<(usize, &Vec<Value>)> = Vec::with_capacity(data.len());
        for (i, item) in data.iter().enumerate() {
            let idx = item.get("index").and_then(Value::as_u64).map_or(i, |x| x as usize);
            let emb = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Protocol(format!("data[{i}] lacks an embedding array")))?;
            rows.push((idx, emb));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::Protocol("embedding indices are not a permutation of the inputs".into()));
        }
        for (i, (_, emb)) in rows.into_iter().enumerate() {
            if emb.len() != cfg.embedding_dim {
                return Err(Error::Protocol(format!(
                    "embedding {i} has {} components, expected {}",
                    emb.len(),
                    cfg.embedding_dim
                )));
            }
            for x in emb {
                let x = x
                    .as_f64()
                    .ok_or_else(|| Error::Protocol(format!("embedding {i} has a non-numeric component")))?;
                out.push(x as f32 as f64);
            }
        }
        Ok(())
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        let cfg = &self.client.config;
        format!("http:{}:{}", cfg.embedding_model, cfg.embedding_dim)
    }

    fn dim(&self) -> usize {
        self.client.config.embedding_dim
    }

    fn embed(&self, tokens: &[String]) -> Result<Array2<f64>> {
        let mut values = Vec::with_capacity(tokens.len() * self.dim());
        for chunk in tokens.chunks(EMBED_BATCH) {
            self.embed_batch(chunk, &mut values)?;
        }
        Ok(Array2::from_shape_vec((tokens.len(), self.dim()), values).expect("row count checked per batch"))
    }
}
