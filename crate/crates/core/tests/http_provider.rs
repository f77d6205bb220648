use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use goaltm::corpus::{tokenize_fallback, Document};
use goaltm::providers::{summarize_goals, Embedder, HttpCompletion, HttpConfig, HttpEmbedder};
use goaltm::Error;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Recorded {
    request_line: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves one scripted `(status, body)` per connection, then stops.
fn mock(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Recorded>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_owned()),
                    _ => {}
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Recorded {
                request_line: request_line.trim_end().to_owned(),
                authorization,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (base, seen, handle)
}

fn config(base: &str, dim: usize) -> HttpConfig {
    HttpConfig {
        base_url: base.to_owned(),
        embedding_dim: dim,
        api_key: Some("test-key".into()),
        retries: 3,
        backoff: Duration::from_millis(5),
        timeout: Duration::from_secs(5),
        ..HttpConfig::default()
    }
}

fn tokens(ts: &[&str]) -> Vec<String> {
    ts.iter().map(|s| s.to_string()).collect()
}

#[test]
fn embeddings_retry_after_server_error_and_honour_index() {
    let ok = json!({"data": [
        {"index": 1, "embedding": [0.0, 1.0]},
        {"index": 0, "embedding": [0.1, 0.2]},
    ]})
    .to_string();
    let (base, seen, handle) = mock(vec![(503, "busy".into()), (200, ok)]);
    let e = HttpEmbedder::new(config(&base, 2)).unwrap();
    let m = e.embed(&tokens(&["alpha", "beta"])).unwrap();
    handle.join().unwrap();
    assert_eq!(m.row(0).to_vec(), vec![0.1f32 as f64, 0.2f32 as f64]);
    assert_eq!(m.row(1).to_vec(), vec![0.0, 1.0]);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].request_line, "POST /v1/embeddings HTTP/1.1");
    assert_eq!(seen[1].authorization.as_deref(), Some("Bearer test-key"));
    assert_eq!(seen[1].body["input"], json!(["alpha", "beta"]));
    assert_eq!(seen[1].body["model"], "text-embedding-ada-002");
}

#[test]
fn rate_limit_is_retried_until_attempts_run_out() {
    let (base, seen, handle) = mock(vec![(429, "slow down".into()); 3]);
    let e = HttpEmbedder::new(config(&base, 2)).unwrap();
    let err = e.embed(&tokens(&["alpha"])).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, Error::Transport(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (base, seen, handle) = mock(vec![(401, "{\"error\": \"bad key\"}".into())]);
    let c = HttpCompletion::new(config(&base, 2));
    let err = c.complete("hello").unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, Error::Transport(ref m) if m.contains("401")), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_responses_are_protocol_errors() {
    let cases = vec![
        (200, "not json".to_string()),
        (200, json!({"data": [{"index": 0, "embedding": [1.0]}]}).to_string()),
        (200, json!({"data": []}).to_string()),
        (200, json!({"data": [{"index": 3, "embedding": [1.0, 2.0]}]}).to_string()),
    ];
    for (status, body) in cases {
        let (base, _, handle) = mock(vec![(status, body.clone())]);
        let e = HttpEmbedder::new(config(&base, 2)).unwrap();
        let err = e.embed(&tokens(&["alpha"])).unwrap_err();
        handle.join().unwrap();
        assert!(matches!(err, Error::Protocol(_)), "{body}: {err:?}");
    }

    let (base, _, handle) = mock(vec![(200, json!({"choices": []}).to_string())]);
    let err = HttpCompletion::new(config(&base, 2)).complete("hi").unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, Error::Protocol(_)), "{err:?}");
}

#[test]
fn goal_summary_over_http() {
    let answer = json!({"choices": [{"message": {"role": "assistant", "content": "breakup struggles; trust issues; loneliness"}}]});
    let (base, seen, handle) = mock(vec![(200, answer.to_string())]);
    let c = HttpCompletion::new(config(&base, 2));
    let text = "She left me after five years.";
    let doc = Document {
        id: "d1".into(),
        raw_text: text.into(),
        tokens: tokenize_fallback(text, None),
        relevant: true,
    };
    let goals = summarize_goals(&c, &doc, "What problems do people face?").unwrap();
    handle.join().unwrap();
    assert_eq!(goals.goals, vec!["breakup struggles", "trust issues", "loneliness"]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].request_line, "POST /v1/chat/completions HTTP/1.1");
    let prompt = seen[0].body["messages"][0]["content"].as_str().unwrap();
    assert!(prompt.contains(text) && prompt.contains("What problems do people face?"));
}
