//! Language and vision actions, and the parsers that read them out of model
//! replies.
//!
//! Accepted planner reply (labels are case-insensitive, either on their own
//! lines or inline):
//!
//! ```text
//! Progress: <free text>
//! Action: navigate to <front|forward|left|right|back|behind>
//!       | backtrack to <waypoint id>
//!       | stop
//! ```
//!
//! or a JSON object `{"progress": "...", "action": "..."}` with the same
//! action grammar. Grounding replies are a JSON object (optionally inside a
//! list, a code fence, or surrounding prose) with `bbox_2d: [x1, y1, x2, y2]`,
//! a non-empty `description`, and an optional `point_2d: [u, v]`.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{BoundingBox, PixelTarget, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "snake_case")]
pub enum LanguageAction {
    Navigate(View),
    Backtrack(usize),
    Stop,
}

impl fmt::Display for LanguageAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LanguageAction::Navigate(v) => write!(f, "navigate to {v}"),
            LanguageAction::Backtrack(id) => write!(f, "backtrack to {id}"),
            LanguageAction::Stop => f.write_str("stop"),
        }
    }
}

/// The planner's free-text account of how much of the instruction is done.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProgressEstimate(pub String);

impl ProgressEstimate {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisionAction {
    pub bbox: BoundingBox,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<PixelTarget>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("reply has no action clause: {raw:?}")]
    NoAction { raw: String },
    #[error("unrecognized action {action:?}")]
    UnknownAction { action: String, raw: String },
    #[error("reply has no JSON object: {raw:?}")]
    NoObject { raw: String },
    #[error("field `{field}` is missing")]
    MissingField { field: &'static str, raw: String },
    #[error("field `{field}` is malformed")]
    InvalidField { field: &'static str, raw: String },
    #[error("bounding box {bbox} has zero area after clamping")]
    DegenerateBox { bbox: BoundingBox },
}

impl ParseError {
    pub fn raw(&self) -> Option<&str> {
        match self {
            ParseError::NoAction { raw }
            | ParseError::UnknownAction { raw, .. }
            | ParseError::NoObject { raw }
            | ParseError::MissingField { raw, .. }
            | ParseError::InvalidField { raw, .. } => Some(raw),
            ParseError::DegenerateBox { .. } => None,
        }
    }
}

static ACTION_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\baction\b[ \t*_]*:[ \t]*([^\r\n]*)").unwrap());
static PROGRESS_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bprogress(?:[ \t]+estimat(?:e|ion))?\b[ \t*_]*:[ \t]*([^\r\n]*)").unwrap()
});
static NAVIGATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^navigate\s+to\s+(?:the\s+)?(front|forward|left|right|back|behind)$").unwrap()
});
static BACKTRACK: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^backtrack\s+to\s+(?:the\s+)?(?:waypoint\s*)?#?\s*(\d{1,9})$").unwrap()
});
static INLINE_ACTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)[ \t*_]*\baction\b[ \t*_]*:.*$").unwrap());

/// Lowercases and strips decoration (quotes, emphasis, brackets, trailing
/// punctuation) around an action clause.
fn normalize_clause(s: &str) -> String {
    let trimmed = s.trim().trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '*' | '_' | '.' | '!' | ';' | ',')
    });
    trimmed
        .to_lowercase()
        .replace(['<', '>'], "")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses one action clause against the three-form grammar.
pub fn parse_action_clause(clause: &str, raw: &str) -> Result<LanguageAction, ParseError> {
    let c = normalize_clause(clause);
    if c == "stop" {
        return Ok(LanguageAction::Stop);
    }
    if let Some(m) = NAVIGATE.captures(&c) {
        let view = match &m[1] {
            "front" | "forward" => View::Front,
            "left" => View::Left,
            "right" => View::Right,
            _ => View::Back,
        };
        return Ok(LanguageAction::Navigate(view));
    }
    if let Some(m) = BACKTRACK.captures(&c) {
        if let Ok(id) = m[1].parse::<usize>() {
            return Ok(LanguageAction::Backtrack(id));
        }
    }
    Err(ParseError::UnknownAction {
        action: clause.trim().to_string(),
        raw: raw.to_string(),
    })
}

fn clean_progress(s: &str) -> String {
    let no_action = INLINE_ACTION.replace(s, "");
    no_action
        .trim()
        .trim_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '_' | '"'))
        .trim_end_matches(['.', ';', ','])
        .trim()
        .to_string()
}

/// Extracts `(action, progress)` from a planner reply.
pub fn parse_language_action(raw: &str) -> Result<(LanguageAction, ProgressEstimate), ParseError> {
    for obj in json_candidates(raw) {
        if let Some(Value::String(action)) = obj.get("action") {
            let action = parse_action_clause(action, raw)?;
            let progress = match obj.get("progress") {
                Some(Value::String(p)) => clean_progress(p),
                _ => String::new(),
            };
            return Ok((action, ProgressEstimate(progress)));
        }
    }

    let Some(m) = ACTION_LABEL.captures(raw) else {
        return Err(ParseError::NoAction {
            raw: raw.to_string(),
        });
    };
    let action = parse_action_clause(&m[1], raw)?;
    let progress = PROGRESS_LABEL
        .captures(raw)
        .map(|p| clean_progress(&p[1]))
        .unwrap_or_default();
    Ok((action, ProgressEstimate(progress)))
}

/// JSON objects found in `raw`, outermost first, lists flattened one level.
fn json_candidates(raw: &str) -> Vec<serde_json::Map<String, Value>> {
    let mut out = Vec::new();
    let mut consumed_to = 0;
    for (pos, ch) in raw.char_indices() {
        if pos < consumed_to || !(ch == '{' || ch == '[') {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<Value>();
        let Some(Ok(value)) = stream.next() else {
            continue;
        };
        consumed_to = pos + stream.byte_offset();
        match value {
            Value::Object(m) => out.push(m),
            Value::Array(items) => out.extend(items.into_iter().filter_map(|v| match v {
                Value::Object(m) => Some(m),
                _ => None,
            })),
            _ => {}
        }
    }
    out
}

fn as_int(v: &Value) -> Option<i64> {
    let f = v.as_f64()?;
    f.is_finite().then(|| f.round() as i64)
}

/// Extracts a grounding target from a reply and clamps it to the image.
pub fn parse_vision_action(raw: &str, width: usize, height: usize) -> Result<VisionAction, ParseError> {
    let candidates = json_candidates(raw);
    if candidates.is_empty() {
        return Err(ParseError::NoObject {
            raw: raw.to_string(),
        });
    }
    let obj = candidates
        .iter()
        .find(|o| o.contains_key("bbox_2d"))
        .ok_or_else(|| ParseError::MissingField {
            field: "bbox_2d",
            raw: raw.to_string(),
        })?;

    let invalid = |field| ParseError::InvalidField {
        field,
        raw: raw.to_string(),
    };
    let coords: Vec<i64> = match &obj["bbox_2d"] {
        Value::Array(items) if items.len() == 4 => items
            .iter()
            .map(as_int)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| invalid("bbox_2d"))?,
        _ => return Err(invalid("bbox_2d")),
    };
    let description = match obj.get("description") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        Some(_) => return Err(invalid("description")),
        None => {
            return Err(ParseError::MissingField {
                field: "description",
                raw: raw.to_string(),
            })
        }
    };
    let point = match obj.get("point_2d") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) if items.len() == 2 => {
            let u = as_int(&items[0]).ok_or_else(|| invalid("point_2d"))?;
            let v = as_int(&items[1]).ok_or_else(|| invalid("point_2d"))?;
            Some(PixelTarget::new(
                u.clamp(0, width.saturating_sub(1) as i64) as u32,
                v.clamp(0, height.saturating_sub(1) as i64) as u32,
            ))
        }
        Some(_) => return Err(invalid("point_2d")),
    };

    let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3]).clamped(width, height);
    if !bbox.has_area() {
        return Err(ParseError::DegenerateBox { bbox });
    }
    Ok(VisionAction {
        bbox,
        description,
        point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn labeled_navigate_with_inline_progress() {
        let (a, p) =
            parse_language_action("Progress: passed the kitchen. Action: navigate to front").unwrap();
        assert_eq!(a, LanguageAction::Navigate(View::Front));
        assert_eq!(p.as_str(), "passed the kitchen");
    }

    #[test]
    fn bare_stop() {
        let (a, p) = parse_language_action("Action: stop").unwrap();
        assert_eq!(a, LanguageAction::Stop);
        assert!(p.is_empty());
    }

    #[test]
    fn missing_action_clause() {
        assert!(matches!(
            parse_language_action("let me think..."),
            Err(ParseError::NoAction { .. })
        ));
    }

    #[test]
    fn synonyms_and_decoration() {
        let cases = [
            ("**Action:** Navigate to forward.", LanguageAction::Navigate(View::Front)),
            ("ACTION: navigate to <behind>", LanguageAction::Navigate(View::Back)),
            ("action: `navigate to the left`", LanguageAction::Navigate(View::Left)),
            ("Progress: x\nAction: backtrack to waypoint 3", LanguageAction::Backtrack(3)),
            ("Action: Backtrack to #0!", LanguageAction::Backtrack(0)),
            ("Action: STOP", LanguageAction::Stop),
        ];
        for (raw, want) in cases {
            assert_eq!(parse_language_action(raw).unwrap().0, want, "{raw}");
        }
    }

    #[test]
    fn json_reply_form() {
        let raw = "```json\n{\"progress\": \"At the stairs.\", \"action\": \"navigate to right\"}\n```";
        let (a, p) = parse_language_action(raw).unwrap();
        assert_eq!(a, LanguageAction::Navigate(View::Right));
        assert_eq!(p.as_str(), "At the stairs");
    }

    #[test]
    fn grammar_rejects_other_forms() {
        for raw in [
            "Action: navigate to upstairs",
            "Action: turn left",
            "Action: backtrack to kitchen",
            "Action: stop here",
            "Action: navigate front",
            "Action:",
        ] {
            assert!(
                matches!(parse_language_action(raw), Err(ParseError::UnknownAction { .. })),
                "{raw}"
            );
        }
    }

    #[test]
    fn vision_action_examples() {
        let raw = r#"{"bbox_2d":[100,150,300,420],"description":"Black door with glass panels"}"#;
        let va = parse_vision_action(raw, 640, 480).unwrap();
        assert_eq!(va.bbox, BoundingBox::new(100, 150, 300, 420));
        assert_eq!(va.description, "Black door with glass panels");

        let swapped = r#"{"bbox_2d":[300,420,100,150],"description":"door"}"#;
        assert_eq!(
            parse_vision_action(swapped, 640, 480).unwrap().bbox,
            BoundingBox {
                x1: 100,
                y1: 150,
                x2: 300,
                y2: 420
            }
        );

        assert!(matches!(
            parse_vision_action(r#"{"description":"door"}"#, 640, 480),
            Err(ParseError::MissingField { field: "bbox_2d", .. })
        ));
    }

    #[test]
    fn vision_action_tolerates_prose_fences_and_lists() {
        let raw = "Sure! The target is:\n```json\n[{\"bbox_2d\": [10.4, 20, 50.6, 90], \"description\": \"sofa\"}]\n```\nHope that helps.";
        let va = parse_vision_action(raw, 640, 480).unwrap();
        assert_eq!(va.bbox, BoundingBox::new(10, 20, 51, 90));
        let with_point = r#"{"bbox_2d":[0,0,10,10],"description":"x","point_2d":[700,5]}"#;
        assert_eq!(
            parse_vision_action(with_point, 640, 480).unwrap().point,
            Some(PixelTarget::new(639, 5))
        );
    }

    #[test]
    fn vision_action_errors() {
        assert!(matches!(
            parse_vision_action("no json here", 640, 480),
            Err(ParseError::NoObject { .. })
        ));
        assert!(matches!(
            parse_vision_action(r#"{"bbox_2d":[1,2,3],"description":"x"}"#, 640, 480),
            Err(ParseError::InvalidField { field: "bbox_2d", .. })
        ));
        assert!(matches!(
            parse_vision_action(r#"{"bbox_2d":[1,2,3,4],"description":"  "}"#, 640, 480),
            Err(ParseError::InvalidField { field: "description", .. })
        ));
        assert!(matches!(
            parse_vision_action(r#"{"bbox_2d":[1,2,3,4]}"#, 640, 480),
            Err(ParseError::MissingField { field: "description", .. })
        ));
        // Entirely off-frame: collapses onto the border.
        assert!(matches!(
            parse_vision_action(r#"{"bbox_2d":[700,10,800,50],"description":"x"}"#, 640, 480),
            Err(ParseError::DegenerateBox { .. })
        ));
    }

    fn any_action() -> impl Strategy<Value = LanguageAction> {
        prop_oneof![
            prop::sample::select(View::ALL.to_vec()).prop_map(LanguageAction::Navigate),
            (0usize..100_000).prop_map(LanguageAction::Backtrack),
            Just(LanguageAction::Stop),
        ]
    }

    proptest! {
        #[test]
        fn language_action_round_trip(a in any_action(), progress in "[a-z ]{0,30}") {
            let raw = format!("Progress: {progress}\nAction: {a}");
            prop_assert_eq!(parse_language_action(&raw).unwrap().0, a);
        }

        #[test]
        fn parsers_are_total(s in "\\PC{0,200}") {
            let _ = parse_language_action(&s);
            let _ = parse_vision_action(&s, 640, 480);
        }
    }
}
