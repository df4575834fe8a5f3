//! Blocking chat-completions client.

use std::io::Cursor;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::mapping::GrayImage;

use super::{ChatModel, ClientError, ModelReply, PromptPart, PromptPayload, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpClientConfig {
    /// Full URL of the chat-completions endpoint.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token. `None` sends no
    /// authorization header.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".to_string(),
            model: String::new(),
            api_key_env: Some("OPENAI_API_KEY".to_string()),
            timeout_secs: 120.0,
            max_attempts: 3,
            backoff_ms: 1000,
        }
    }
}

#[derive(Debug)]
pub struct HttpChatClient {
    config: HttpClientConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    /// Builds a client, reading the credential now so a missing key fails
    /// before any request.
    pub fn new(config: HttpClientConfig) -> Result<Self, ClientError> {
        let api_key = match &config.api_key_env {
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.trim().is_empty() => Some(v),
                _ => {
                    return Err(ClientError::Config(format!(
                        "environment variable {var} is not set"
                    )))
                }
            },
            None => None,
        };
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: HttpClientConfig, api_key: Option<String>) -> Result<Self, ClientError> {
        if config.max_attempts == 0 {
            return Err(ClientError::Config("max_attempts must be at least 1".into()));
        }
        if !(config.timeout_secs > 0.0) {
            return Err(ClientError::Config("timeout_secs must be positive".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(Self {
            config,
            api_key,
            http,
        })
    }

    pub fn config(&self) -> &HttpClientConfig {
        &self.config
    }

    /// Request body in chat-completions form.
    pub fn request_body(&self, payload: &PromptPayload) -> Result<Value, ClientError> {
        let content = payload
            .parts
            .iter()
            .map(|p| match p {
                PromptPart::Text(t) => Ok(json!({"type": "text", "text": t})),
                PromptPart::Image(img) => {
                    let b64 = encode_png_base64(&img.image)?;
                    Ok(json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:image/png;base64,{b64}")}
                    }))
                }
            })
            .collect::<Result<Vec<_>, ClientError>>()?;
        Ok(json!({
            "model": self.config.model,
            "messages": [{"role": payload.role, "content": content}],
            "temperature": payload.temperature,
            "max_tokens": payload.max_output_tokens,
        }))
    }

    fn attempt(&self, body: &Value) -> Result<(String, Usage), Attempt> {
        let mut req = self.http.post(&self.config.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Attempt::Timeout
            } else {
                Attempt::Retry(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                Attempt::Timeout
            } else {
                Attempt::Retry(e.to_string())
            }
        })?;
        match status {
            200..=299 => parse_response(&text).map_err(Attempt::Fatal),
            401 | 403 => Err(Attempt::Fatal(ClientError::Auth { status })),
            429 => Err(Attempt::Quota),
            408 | 500..=599 => Err(Attempt::Retry(format!("HTTP {status}: {}", truncate(&text)))),
            _ => Err(Attempt::Fatal(ClientError::Http {
                status,
                body: truncate(&text),
            })),
        }
    }
}

enum Attempt {
    Retry(String),
    Timeout,
    Quota,
    Fatal(ClientError),
}

impl ChatModel for HttpChatClient {
    fn complete(&self, payload: &PromptPayload) -> Result<ModelReply, ClientError> {
        let body = self.request_body(payload)?;
        let started = Instant::now();
        let attempts = self.config.max_attempts;
        let mut last = Attempt::Retry(String::new());
        for k in 0..attempts {
            if k > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (k - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&body) {
                Ok((text, usage)) => {
                    return Ok(ModelReply {
                        text,
                        usage,
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(other) => {
                    log::warn!("model request attempt {} of {attempts} failed", k + 1);
                    last = other;
                }
            }
        }
        Err(match last {
            Attempt::Timeout => ClientError::Timeout { attempts },
            Attempt::Quota => ClientError::Quota { attempts },
            Attempt::Retry(message) => ClientError::Transport { attempts, message },
            Attempt::Fatal(e) => e,
        })
    }

    fn name(&self) -> &str {
        &self.config.model
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(200).collect()
}

fn parse_response(text: &str) -> Result<(String, Usage), ClientError> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| ClientError::Protocol(format!("invalid JSON: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ClientError::Protocol("missing choices[0].message.content".into()))?;
    let reply = match content {
        Value::String(s) => s.clone(),
        Value::Array(items) => items
            .iter()
            .filter_map(|i| i.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Value::Null => String::new(),
        _ => return Err(ClientError::Protocol("unexpected content type".into())),
    };
    let count = |keys: &[&str]| -> Result<u64, ClientError> {
        for k in keys {
            if let Some(n) = v.get("usage").and_then(|u| u.get(*k)) {
                return n
                    .as_u64()
                    .ok_or_else(|| ClientError::Protocol(format!("usage.{k} is not a count")));
            }
        }
        Ok(0)
    };
    let usage = Usage {
        input_tokens: count(&["prompt_tokens", "input_tokens"])?,
        output_tokens: count(&["completion_tokens", "output_tokens"])?,
    };
    Ok((reply, usage))
}

/// PNG-encodes a grayscale image as base64.
pub fn encode_png_base64(img: &GrayImage) -> Result<String, ClientError> {
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .ok_or_else(|| ClientError::Protocol("image buffer size mismatch".into()))?;
    let mut bytes = Cursor::new(Vec::new());
    buf.write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| ClientError::Protocol(format!("PNG encoding failed: {e}")))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes.into_inner()))
}
