use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::LoopVerdict;
use crate::domain::{PlanItem, RevisionPlan};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("malformed response: {0}")]
pub struct MalformedResponse(pub String);

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Inner text of the last complete fenced block.
pub fn parse_code_response(text: &str) -> Result<String, MalformedResponse> {
    // (byte offset of line start, byte offset past the line's newline)
    let mut lines = Vec::new();
    let mut pos = 0;
    for piece in text.split_inclusive('\n') {
        lines.push((pos, pos + piece.len()));
        pos += piece.len();
    }

    let mut last: Option<(usize, usize)> = None;
    let mut open: Option<usize> = None;
    for &(start, end) in &lines {
        let line = text[start..end].trim_end_matches(['\n', '\r']);
        if !is_fence(line) {
            continue;
        }
        match open {
            None => open = Some(end),
            Some(body_start) => {
                // The newline before the closing fence belongs to the fence.
                let body_end = if start > body_start { start - 1 } else { start };
                let body_end = if body_end > body_start && text.as_bytes()[body_end - 1] == b'\r' {
                    body_end - 1
                } else {
                    body_end
                };
                last = Some((body_start, body_end.max(body_start)));
                open = None;
            }
        }
    }
    let (s, e) = last.ok_or_else(|| MalformedResponse("no fenced code block".into()))?;
    let body = &text[s..e];
    if body.trim().is_empty() {
        return Err(MalformedResponse("fenced code block is empty".into()));
    }
    Ok(body.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Location,
    Cause,
    Solution,
}

#[derive(Default)]
struct Draft {
    location: Option<String>,
    cause: Option<String>,
    solution: Option<String>,
}

impl Draft {
    fn is_empty(&self) -> bool {
        self.location.is_none() && self.cause.is_none() && self.solution.is_none()
    }

    fn slot(&mut self, f: Field) -> &mut Option<String> {
        match f {
            Field::Location => &mut self.location,
            Field::Cause => &mut self.cause,
            Field::Solution => &mut self.solution,
        }
    }

    fn finish(self) -> Option<PlanItem> {
        let cause = self
            .cause
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())?;
        let solution = self
            .solution
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())?;
        let location = self
            .location
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| "unspecified".to_string());
        Some(PlanItem {
            location,
            cause_analysis: cause,
            solution,
        })
    }
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:[-*]\s*)?\**\s*(location|cause(?:[ _]analysis)?|solution|fix)\s*\**\s*:\s*\**\s*(.*)$",
        )
        .unwrap()
    })
}

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*[#*\s]*item\s*#?\s*\d+\s*[:.)]?\s*\**\s*$").unwrap())
}

/// Reads `LOCATION:` / `CAUSE:` / `SOLUTION:` sections into plan items.
/// Text outside labeled sections is ignored.
pub fn parse_revision_plan(text: &str) -> Result<RevisionPlan, MalformedResponse> {
    let mut items = Vec::new();
    let mut draft = Draft::default();
    let mut current: Option<Field> = None;

    let flush = |draft: &mut Draft, items: &mut Vec<PlanItem>| {
        let done = std::mem::take(draft);
        if let Some(item) = done.finish() {
            items.push(item);
        }
    };

    for line in text.lines() {
        if item_re().is_match(line) {
            flush(&mut draft, &mut items);
            current = None;
            continue;
        }
        if let Some(c) = label_re().captures(line) {
            let field = match c[1].to_ascii_lowercase().as_str() {
                "location" => Field::Location,
                "solution" | "fix" => Field::Solution,
                _ => Field::Cause,
            };
            // A repeated label starts the next item.
            if draft.slot(field).is_some() || (field == Field::Location && !draft.is_empty()) {
                flush(&mut draft, &mut items);
            }
            *draft.slot(field) = Some(c[2].trim_end().to_string());
            current = Some(field);
            continue;
        }
        if line.trim().is_empty() {
            current = None;
            continue;
        }
        if let Some(f) = current {
            let slot = draft.slot(f).get_or_insert_with(String::new);
            if !slot.is_empty() {
                slot.push('\n');
            }
            slot.push_str(line.trim_end());
        }
    }
    flush(&mut draft, &mut items);

    RevisionPlan::new(items, text.to_string())
        .map_err(|e| MalformedResponse(format!("no usable plan items ({e})")))
}

fn yes_no_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)is[_ ]loop\s*\**\s*[:=]\s*\**\s*(yes|no|true|false)\b").unwrap()
    })
}

fn matched_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)matched(?:[_ ]iteration)?\s*\**\s*[:=]\s*\**\s*(?:iteration\s*)?(\d+)")
            .unwrap()
    })
}

fn cause_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^\s*\**\s*cause\s*\**\s*[:=]\s*(.+)$").unwrap())
}

/// Affirmative only when every `IS_LOOP` answer says yes and an iteration
/// is named; everything else is "not a loop".
pub fn parse_inspector_verdict(text: &str) -> LoopVerdict {
    let answers: Vec<bool> = yes_no_re()
        .captures_iter(text)
        .map(|c| matches!(c[1].to_ascii_lowercase().as_str(), "yes" | "true"))
        .collect();
    let cause = cause_re()
        .captures(text)
        .map(|c| c[1].trim().to_string())
        .unwrap_or_default();
    if answers.is_empty() {
        return LoopVerdict::no_loop("inspector verdict not recognized");
    }
    if !answers.iter().all(|&a| a) {
        let summary = if answers.iter().any(|&a| a) {
            "inspector verdict contradictory".to_string()
        } else {
            cause
        };
        return LoopVerdict::no_loop(summary);
    }
    let matched: Vec<u32> = matched_re()
        .captures_iter(text)
        .filter_map(|c| c[1].parse().ok())
        .collect();
    match matched.as_slice() {
        [j] => LoopVerdict {
            is_loop: true,
            matched_prior_iteration: Some(*j),
            cause_summary: cause,
        },
        [first, rest @ ..] if rest.iter().all(|j| j == first) => LoopVerdict {
            is_loop: true,
            matched_prior_iteration: Some(*first),
            cause_summary: cause,
        },
        _ => LoopVerdict::no_loop("inspector affirmed a loop without a single matched iteration"),
    }
}
