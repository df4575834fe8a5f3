//! Minimal chat-completions server on a local socket, with server-side
//! usage tallies per model name.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub content: String,
    pub usage: (u64, u64),
}

impl Reply {
    pub fn ok(content: impl Into<String>, input: u64, output: u64) -> Self {
        Self {
            status: 200,
            content: content.into(),
            usage: (input, output),
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            content: String::new(),
            usage: (0, 0),
        }
    }
}

/// Usage the server reported in successful responses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

type Responder = dyn Fn(usize, &Value) -> Reply + Send + Sync;

pub struct MockServer {
    pub url: String,
    addr: SocketAddr,
    tallies: Arc<Mutex<BTreeMap<String, Tally>>>,
    requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
}

impl MockServer {
    /// Serves every request with `respond(request_index, body)`.
    pub fn start(respond: impl Fn(usize, &Value) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let addr = listener.local_addr().expect("addr");
        let tallies = Arc::new(Mutex::new(BTreeMap::new()));
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let respond: Arc<Responder> = Arc::new(respond);
        {
            let (tallies, requests, stop) = (tallies.clone(), requests.clone(), stop.clone());
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let (tallies, requests, respond) = (tallies.clone(), requests.clone(), respond.clone());
                    thread::spawn(move || {
                        let _ = serve(stream, &tallies, &requests, respond.as_ref());
                    });
                }
            });
        }
        Self {
            url: format!("http://{addr}/v1/chat/completions"),
            addr,
            tallies,
            requests,
            stop,
        }
    }

    pub fn tally(&self, model: &str) -> Tally {
        self.tallies.lock().unwrap().get(model).copied().unwrap_or_default()
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

fn serve(
    stream: TcpStream,
    tallies: &Mutex<BTreeMap<String, Tally>>,
    requests: &AtomicUsize,
    respond: &Responder,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let idx = requests.fetch_add(1, Ordering::SeqCst);
    let reply = respond(idx, &body);
    let payload = if reply.status == 200 {
        let model = body["model"].as_str().unwrap_or("").to_string();
        let mut t = tallies.lock().unwrap();
        let e = t.entry(model).or_default();
        e.calls += 1;
        e.prompt_tokens += reply.usage.0;
        e.completion_tokens += reply.usage.1;
        json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": reply.content}}],
            "usage": {"prompt_tokens": reply.usage.0, "completion_tokens": reply.usage.1},
        })
    } else {
        json!({"error": {"message": format!("scripted status {}", reply.status)}})
    }
    .to_string();
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        payload.len(),
        payload
    )?;
    out.flush()
}

/// Text parts of a request joined by newlines, as the oracle reads prompts.
pub fn prompt_text(body: &Value) -> String {
    body["messages"][0]["content"]
        .as_array()
        .map(|parts| {
            parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join("\n")
        })
        .unwrap_or_default()
}

/// Number of image parts in a request.
pub fn image_count(body: &Value) -> usize {
    body["messages"][0]["content"]
        .as_array()
        .map_or(0, |parts| parts.iter().filter(|p| p["type"] == "image_url").count())
}
