//! Multimodal model interface: prompt payloads, replies, clients and usage
//! accounting.
//!
//! Two clients back a run, one per [`Stage`]: a large planner model for
//! language actions and a smaller grounding model for vision actions. Either
//! can be an HTTP chat-completions endpoint or the scripted oracle.

mod http;
mod ledger;
mod oracle;
mod prompt;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::GrayImage;

pub use http::{encode_png_base64, HttpChatClient, HttpClientConfig};
pub use ledger::{LedgerReport, PriceTable, StagePrice, StageReport, StageTally, UsageLedger};
pub use oracle::{OracleConfig, OracleMode, ScriptedOracle};
pub use prompt::{
    build_language_prompt, build_vision_prompt, LabeledView, LanguagePromptOptions, PromptError,
    VisionPromptOptions, FORMAT_REMINDER, NO_ESTIMATE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Planner,
    Grounder,
}

impl Stage {
    pub const ALL: [Stage; 2] = [Stage::Planner, Stage::Grounder];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Planner => "planner",
            Stage::Grounder => "grounder",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageEncoding {
    Png,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptImage {
    pub image: Arc<GrayImage>,
    pub encoding: ImageEncoding,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PromptPart {
    Text(String),
    Image(PromptImage),
}

impl PromptPart {
    pub fn text(s: impl Into<String>) -> Self {
        PromptPart::Text(s.into())
    }

    pub fn image(image: Arc<GrayImage>) -> Self {
        PromptPart::Image(PromptImage {
            image,
            encoding: ImageEncoding::Png,
        })
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            PromptPart::Text(s) => Some(s),
            PromptPart::Image(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPayload {
    pub stage: Stage,
    pub role: String,
    pub parts: Vec<PromptPart>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl PromptPayload {
    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, PromptPart::Image(_)))
            .count()
    }

    /// All text parts joined by newlines.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(PromptPart::as_text)
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Same payload with the reply-format reminder appended (used on re-asks).
    pub fn with_format_reminder(&self) -> Self {
        let mut p = self.clone();
        p.parts.push(PromptPart::text(FORMAT_REMINDER));
        p
    }

    /// Canonical byte encoding; equal payloads encode identically.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(format!("{:?}|{}|{}|{}\n", self.stage, self.role, self.temperature, self.max_output_tokens).as_bytes());
        for part in &self.parts {
            match part {
                PromptPart::Text(s) => {
                    out.extend_from_slice(format!("T{}:", s.len()).as_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
                PromptPart::Image(img) => {
                    out.extend_from_slice(
                        format!("I{}x{}:", img.image.width, img.image.height).as_bytes(),
                    );
                    out.extend_from_slice(&img.image.pixels);
                }
            }
            out.push(b'\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReply {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("quota or rate limit exhausted after {attempts} attempt(s)")]
    Quota { attempts: u32 },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("client misconfigured: {0}")]
    Config(String),
}

/// A model behind the chat interface.
pub trait ChatModel: Send + Sync {
    fn complete(&self, payload: &PromptPayload) -> Result<ModelReply, ClientError>;

    fn name(&self) -> &str;
}

/// Sends `payload` through `client`.
pub fn complete(client: &dyn ChatModel, payload: &PromptPayload) -> Result<ModelReply, ClientError> {
    client.complete(payload)
}

/// Deterministic token estimate: four characters per text token, one token
/// per 28x28 image patch.
pub fn estimate_tokens(payload: &PromptPayload) -> u64 {
    payload
        .parts
        .iter()
        .map(|p| match p {
            PromptPart::Text(s) => text_tokens(s),
            PromptPart::Image(img) => {
                (img.image.width as u64 * img.image.height as u64).div_ceil(28 * 28)
            }
        })
        .sum()
}

pub fn text_tokens(s: &str) -> u64 {
    (s.chars().count() as u64).div_ceil(4)
}
