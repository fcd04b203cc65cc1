#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

/// A request seen by [`StubServer`].
#[derive(Debug, Clone)]
pub struct Seen {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: serde_json::Value,
}

type Handler = dyn Fn(&Seen) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server answering each request with `handler`.
pub struct StubServer {
    pub base_url: String,
    pub seen: Arc<Mutex<Vec<Seen>>>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&Seen) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let log = seen.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                    continue;
                }
                let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
                let mut headers = Vec::new();
                let mut content_length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        let (k, v) = (k.trim().to_lowercase(), v.trim().to_string());
                        if k == "content-length" {
                            content_length = v.parse().unwrap();
                        }
                        headers.push((k, v));
                    }
                }
                let mut body = vec![0; content_length];
                reader.read_exact(&mut body).unwrap();
                let seen = Seen {
                    path,
                    headers,
                    body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
                };
                let (status, text) = handler(&seen);
                log.lock().unwrap().push(seen);
                let response = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        StubServer { base_url, seen }
    }

    pub fn calls(&self) -> usize {
        self.seen.lock().unwrap().len()
    }
}

/// Whitespace-attached word tokenisation with *character* offsets, the way
/// an OpenAI-compatible server reports `text_offset`.
pub fn echo_response(prompt: &str, logprob_of: impl Fn(usize) -> f64) -> String {
    let chars: Vec<char> = prompt.chars().collect();
    let mut offsets = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        offsets.push(i);
        while i < chars.len() && chars[i].is_whitespace() {
            i += 1;
        }
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
    }
    let logprobs: Vec<serde_json::Value> = (0..offsets.len())
        .map(|k| if k == 0 { serde_json::Value::Null } else { serde_json::json!(logprob_of(k)) })
        .collect();
    serde_json::json!({"choices": [{"text": prompt, "logprobs": {
        "token_logprobs": logprobs,
        "text_offset": offsets,
    }}]})
    .to_string()
}

use goldsel::anchors::{sample_random, AnchorSet};
use goldsel::backend::TableBackend;
use goldsel::dataset::{Dataset, InstructionExample, PromptTemplate, Role};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic dataset of `n` distinct examples.
pub fn synthetic_dataset(n: usize) -> Dataset {
    let examples = (0..n)
        .map(|i| {
            let input = (i % 3 == 0).then(|| format!("context for item {i}"));
            InstructionExample::new(
                i.into(),
                format!("Task number {i}: describe w{i}."),
                input.as_deref(),
                format!("Answer {i} is w{i}x."),
            )
        })
        .collect();
    Dataset::from_examples(examples).unwrap()
}

/// A table-backed scoring problem with known per-pair scores.
pub struct Fixture {
    pub dataset: Dataset,
    pub anchors: AnchorSet,
    pub template: PromptTemplate,
    pub backend: TableBackend,
    pub zsl: Vec<f64>,
    /// `iit[candidate][anchor]`
    pub iit: Vec<Vec<f64>>,
}

/// Scores drawn from a coarse grid so that exact ties are common.
pub fn table_fixture(n: usize, m: usize, seed: u64) -> Fixture {
    let dataset = synthetic_dataset(n.max(m));
    let template = PromptTemplate::alpaca();
    let anchors = sample_random(&dataset, m, seed, &template).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut grid = || -(rng.random_range(1..=12) as f64) / 4.0;
    let mut backend = TableBackend::new();
    let zsl: Vec<f64> = anchors
        .anchors()
        .iter()
        .map(|a| {
            let v = grid();
            backend.insert(a.task_text.clone(), a.answer_text.clone(), vec![v]);
            v
        })
        .collect();
    let iit = dataset
        .examples()
        .iter()
        .map(|c| {
            let demo = template.render(c, Role::Demonstration).unwrap();
            anchors
                .anchors()
                .iter()
                .map(|a| {
                    let v = grid();
                    let prefix = format!("{demo}{}{}", template.separator(), a.task_text);
                    backend.insert(prefix, a.answer_text.clone(), vec![v]);
                    v
                })
                .collect()
        })
        .collect();
    Fixture { dataset, anchors, template, backend, zsl, iit }
}

/// Golden score computed straight from the definition.
pub fn oracle_gs(zsl: &[f64], iit: &[f64], eps: f64) -> f64 {
    let wins = zsl.iter().zip(iit).filter(|(z, i)| **i > **z + eps).count();
    wins as f64 / zsl.len() as f64
}

/// 30 examples in three well-separated embedding clusters of ten; returns
/// the dataset, a backend serving the embeddings, and each example's cluster.
pub fn planted_clusters(seed: u64) -> (Dataset, TableBackend, Vec<usize>) {
    let dataset = synthetic_dataset(30);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut backend = TableBackend::new();
    let mut clusters = Vec::new();
    for (i, e) in dataset.examples().iter().enumerate() {
        let c = i % 3;
        let v: Vec<f64> = (0..8)
            .map(|d| if d == c { 1.0 } else { 0.0 } + rng.random_range(-0.05..0.05))
            .collect();
        backend.insert_embedding(goldsel::anchors::embedding_text(e), v);
        clusters.push(c);
    }
    (dataset, backend, clusters)
}

use goldsel::scoring::{GoldenScoreRecord, GoldenScoreTable};

/// Table of `gs` values with ids `0..n`.
pub fn table_of(gs: &[f64]) -> GoldenScoreTable {
    let records = gs
        .iter()
        .enumerate()
        .map(|(i, &g)| GoldenScoreRecord { candidate_id: i.into(), gs: g, improvements: 0, m: 1, overflow_count: 0 })
        .collect();
    GoldenScoreTable::new(goldsel::Fingerprint::of_bytes(b"table"), records)
}
