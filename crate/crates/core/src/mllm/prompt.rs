//! Prompt construction for the two model stages.
//!
//! Preamble and grammar wording is our own paraphrase; only the structure
//! (role, instruction, history, labeled views, grammar, progress request) is
//! fixed.

use std::sync::Arc;

use thiserror::Error;

use crate::action::ProgressEstimate;
use crate::geometry::View;
use crate::mapping::GrayImage;

use super::{PromptPart, PromptPayload, Stage};

pub const NO_ESTIMATE: &str = "(no estimate)";

pub const FORMAT_REMINDER: &str = "Your previous reply could not be parsed. Answer again using exactly the requested format and nothing else.";

const LANGUAGE_PREAMBLE: &str = "You are the high-level planner of a robot that follows natural-language navigation instructions in an indoor environment. At every step you see four camera views around the robot and a record of the waypoints visited so far. Decide which direction to explore next, whether to return to an earlier waypoint, or whether the instruction is complete.";

const VISION_PREAMBLE: &str = "You are the visual grounding module of a navigation robot. The planner has chosen a direction; find in this image the object or region the robot should walk to next.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("expected 4 current views, got {0}")]
    ViewCount(usize),
    #[error("view {position} should be {expected}, got {got}")]
    ViewOrder {
        position: usize,
        expected: View,
        got: View,
    },
    #[error("payload carries {count} images, cap is {cap}")]
    TooManyImages { count: usize, cap: usize },
}

#[derive(Debug, Clone)]
pub struct LabeledView {
    pub view: View,
    pub image: Arc<GrayImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguagePromptOptions {
    /// Offer the backtrack form in the grammar.
    pub allow_backtrack: bool,
    pub image_cap: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for LanguagePromptOptions {
    fn default() -> Self {
        Self {
            allow_backtrack: true,
            image_cap: 64,
            temperature: 0.0,
            max_output_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisionPromptOptions {
    /// Also ask for a single target point.
    pub request_point: bool,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for VisionPromptOptions {
    fn default() -> Self {
        Self {
            request_point: false,
            temperature: 0.0,
            max_output_tokens: 128,
        }
    }
}

/// Planner prompt: preamble, instruction, history, the four current views
/// in Front/Left/Right/Back order, then the action grammar.
pub fn build_language_prompt(
    instruction: &str,
    history: &[PromptPart],
    views: &[LabeledView],
    opts: &LanguagePromptOptions,
) -> Result<PromptPayload, PromptError> {
    if views.len() != 4 {
        return Err(PromptError::ViewCount(views.len()));
    }
    for (position, (expected, got)) in View::ALL.iter().zip(views).enumerate() {
        if *expected != got.view {
            return Err(PromptError::ViewOrder {
                position,
                expected: *expected,
                got: got.view,
            });
        }
    }

    let mut parts = vec![
        PromptPart::text(LANGUAGE_PREAMBLE),
        PromptPart::text(format!("Instruction: {instruction}")),
    ];
    if history.is_empty() {
        parts.push(PromptPart::text("History: no waypoints yet."));
    } else {
        parts.push(PromptPart::text("History of visited waypoints:"));
        parts.extend(history.iter().cloned());
    }
    parts.push(PromptPart::text("Current views:"));
    for v in views {
        parts.push(PromptPart::text(format!("{} view:", capitalize(v.view.name()))));
        parts.push(PromptPart::image(Arc::clone(&v.image)));
    }
    parts.push(PromptPart::text(grammar_text(opts.allow_backtrack)));

    let payload = PromptPayload {
        stage: Stage::Planner,
        role: "user".to_string(),
        parts,
        temperature: opts.temperature,
        max_output_tokens: opts.max_output_tokens,
    };
    let count = payload.image_count();
    if count > opts.image_cap {
        return Err(PromptError::TooManyImages {
            count,
            cap: opts.image_cap,
        });
    }
    Ok(payload)
}

fn grammar_text(allow_backtrack: bool) -> String {
    let mut s = String::from(
        "First estimate your progress: which parts of the instruction are already done and what remains. \
         Then choose exactly one action:\n\
         - navigate to <front|left|right|back>: explore in that direction\n",
    );
    if allow_backtrack {
        s.push_str("- backtrack to <waypoint id>: return to a previously visited waypoint\n");
    }
    s.push_str(
        "- stop: the instruction is complete and the destination is reached\n\
         Reply in exactly this format:\n\
         Progress: <your progress estimate>\n\
         Action: <one action>",
    );
    s
}

/// Grounding prompt over the single image of the chosen direction.
pub fn build_vision_prompt(
    instruction: &str,
    progress: &ProgressEstimate,
    direction: View,
    dir_image: Arc<GrayImage>,
    opts: &VisionPromptOptions,
) -> PromptPayload {
    let progress_text = if progress.is_empty() {
        NO_ESTIMATE
    } else {
        progress.as_str()
    };
    let schema = if opts.request_point {
        "Reply with one JSON object: {\"bbox_2d\": [x1, y1, x2, y2], \"point_2d\": [u, v], \"description\": \"<what the object is>\"}, in pixel coordinates of this image. point_2d is the floor point the robot should walk to."
    } else {
        "Reply with one JSON object: {\"bbox_2d\": [x1, y1, x2, y2], \"description\": \"<what the object is>\"}, in pixel coordinates of this image."
    };
    let parts = vec![
        PromptPart::text(VISION_PREAMBLE),
        PromptPart::text(format!("Instruction: {instruction}")),
        PromptPart::text(format!("Progress so far: {progress_text}")),
        PromptPart::text(format!("Chosen direction: {direction}")),
        PromptPart::image(dir_image),
        PromptPart::text(schema),
        PromptPart::text(
            "Pick a target that is not too close to the robot, so that walking to it makes real progress along the instruction.",
        ),
    ];
    PromptPayload {
        stage: Stage::Grounder,
        role: "user".to_string(),
        parts,
        temperature: opts.temperature,
        max_output_tokens: opts.max_output_tokens,
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
