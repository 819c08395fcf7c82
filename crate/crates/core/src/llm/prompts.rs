//! Prompt rendering for the three roles.
//!
//! Template text lives in `templates/<name>.v1.txt`. Rendering is pure and
//! every rendered message list fits the configured character budget.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::ChatMessage;
use crate::catalog::CatalogEntry;
use crate::domain::{Candidate, CaseSpec, Feedback, IterationRecord, RevisionPlan, Trace};

pub const DEFAULT_TRACE_WINDOW: usize = 4;
/// Characters, summed over message contents.
pub const DEFAULT_CONTEXT_BUDGET: usize = 48_000;
pub const MIN_CONTEXT_BUDGET: usize = 1_024;
pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptBudget {
    pub max_chars: usize,
    /// Earlier iterations rendered in full; older ones get one line each.
    pub window: usize,
}

impl Default for PromptBudget {
    fn default() -> Self {
        PromptBudget {
            max_chars: DEFAULT_CONTEXT_BUDGET,
            window: DEFAULT_TRACE_WINDOW,
        }
    }
}

#[derive(Debug, Error)]
#[error("cannot read prompt template {path}: {source}")]
pub struct TemplateError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub generator_system: String,
    pub generator_initial: String,
    pub generator_revision: String,
    pub generator_format_reminder: String,
    pub reviewer_system: String,
    pub reviewer_user: String,
    pub reviewer_format_reminder: String,
    pub inspector_system: String,
    pub inspector_user: String,
}

macro_rules! builtin {
    ($name:literal) => {
        include_str!(concat!("../../templates/", $name, ".v1.txt")).to_string()
    };
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        PromptSet {
            generator_system: builtin!("generator_system"),
            generator_initial: builtin!("generator_initial"),
            generator_revision: builtin!("generator_revision"),
            generator_format_reminder: builtin!("generator_format_reminder"),
            reviewer_system: builtin!("reviewer_system"),
            reviewer_user: builtin!("reviewer_user"),
            reviewer_format_reminder: builtin!("reviewer_format_reminder"),
            inspector_system: builtin!("inspector_system"),
            inspector_user: builtin!("inspector_user"),
        }
    }

    /// Loads every template from `dir/<name>.v1.txt`.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str| {
            let path = dir.join(format!("{name}.{TEMPLATE_VERSION}.txt"));
            std::fs::read_to_string(&path).map_err(|source| TemplateError { path, source })
        };
        Ok(PromptSet {
            generator_system: read("generator_system")?,
            generator_initial: read("generator_initial")?,
            generator_revision: read("generator_revision")?,
            generator_format_reminder: read("generator_format_reminder")?,
            reviewer_system: read("reviewer_system")?,
            reviewer_user: read("reviewer_user")?,
            reviewer_format_reminder: read("reviewer_format_reminder")?,
            inspector_system: read("inspector_system")?,
            inspector_user: read("inspector_user")?,
        })
    }

    pub fn generator_reminder(&self, case: &CaseSpec) -> String {
        fill(
            &self.generator_format_reminder,
            &[("module_name", &case.module_name)],
        )
    }

    pub fn reviewer_reminder(&self) -> String {
        fill(&self.reviewer_format_reminder, &[])
    }
}

/// Single-pass `{{name}}` substitution; substituted text is never rescanned
/// and unknown placeholders are left as written.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let name = &after[..close];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(name);
                        out.push_str("}}");
                    }
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn total_chars(messages: &[ChatMessage]) -> usize {
    messages.iter().map(|m| m.content.chars().count()).sum()
}

fn truncate_middle(s: &str, target: usize) -> String {
    let len = s.chars().count();
    if len <= target {
        return s.to_string();
    }
    let probe = format!("\n[... {len} characters omitted ...]\n")
        .chars()
        .count();
    if target <= probe + 2 {
        return s.chars().take(target).collect();
    }
    let keep = target - probe;
    let head = keep / 2;
    let tail = keep - head;
    let mut out: String = s.chars().take(head).collect();
    let _ = write!(out, "\n[... {} characters omitted ...]\n", len - keep);
    out.extend(s.chars().skip(len - tail));
    out
}

/// Shrinks the longest messages until the list fits `max_chars`. Every
/// message keeps at least one character.
pub fn enforce_budget(mut messages: Vec<ChatMessage>, max_chars: usize) -> Vec<ChatMessage> {
    loop {
        let total = total_chars(&messages);
        if total <= max_chars {
            return messages;
        }
        let excess = total - max_chars;
        let (idx, len) = messages
            .iter()
            .enumerate()
            .map(|(i, m)| (i, m.content.chars().count()))
            .max_by_key(|&(i, len)| (len, std::cmp::Reverse(i)))
            .unwrap_or((0, 0));
        if len <= 1 {
            return messages;
        }
        let target = len.saturating_sub(excess).max(1);
        messages[idx].content = truncate_middle(&messages[idx].content, target);
    }
}

pub fn render_plan(plan: &RevisionPlan) -> String {
    let mut out = String::new();
    for (i, item) in plan.items.iter().enumerate() {
        let _ = writeln!(
            out,
            "Item {}\nLocation: {}\nCause: {}\nSolution: {}",
            i + 1,
            item.location,
            item.cause_analysis,
            item.solution
        );
    }
    out
}

/// Full error list as shown to the Reviewer and Inspector.
pub fn render_feedback(feedback: &Feedback) -> String {
    let mut out = String::new();
    match feedback {
        Feedback::Syntax { entries, .. } => {
            let _ = writeln!(out, "Compilation failed with {} error(s):", entries.len());
            for (i, e) in entries.iter().enumerate() {
                let class = e
                    .catalog_class
                    .as_deref()
                    .map(|c| format!("[{c}] "))
                    .unwrap_or_default();
                let mut lines = e.message.lines();
                let first = lines.next().unwrap_or("");
                let _ = writeln!(out, "{}. {class}{}: {first}", i + 1, e.location_text());
                for l in lines {
                    let _ = writeln!(out, "   {l}");
                }
                if e.kind == crate::domain::ErrorKind::FunctionalStatic {
                    let _ = writeln!(out, "   (logic error detected at compile time)");
                }
                if let Some(s) = &e.suggestion {
                    let _ = writeln!(out, "   Suggestion: {s}");
                }
            }
        }
        Feedback::Functional {
            mismatches,
            failed_count,
            total_count,
            ..
        } => {
            let _ = writeln!(
                out,
                "Simulation failed: {failed_count} of {total_count} test points mismatched."
            );
            for (i, m) in mismatches.iter().enumerate() {
                let at = m.time.map(|t| format!(" (time {t})")).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{}. test point {}: inputs {}; expected {}; got {}{at}",
                    i + 1,
                    m.testpoint_id,
                    m.stimulus,
                    m.expected,
                    m.actual
                );
            }
            if (mismatches.len() as u64) < *failed_count {
                let _ = writeln!(
                    out,
                    "({} of {failed_count} mismatches shown)",
                    mismatches.len()
                );
            }
        }
    }
    out
}

fn headline(record: &IterationRecord) -> String {
    match &record.feedback {
        None => "passed".to_string(),
        Some(Feedback::Syntax { entries, .. }) => {
            let sigs: Vec<&str> = entries
                .iter()
                .take(3)
                .map(|e| e.location_signature.as_str())
                .collect();
            format!("{} compile error(s): {}", entries.len(), sigs.join("; "))
        }
        Some(Feedback::Functional {
            failed_count,
            total_count,
            ..
        }) => format!("{failed_count} of {total_count} test points failed"),
    }
}

pub fn render_generator_prompt(
    set: &PromptSet,
    budget: &PromptBudget,
    case: &CaseSpec,
    revision: Option<(&RevisionPlan, &Candidate)>,
) -> Vec<ChatMessage> {
    let user = match revision {
        None => fill(
            &set.generator_initial,
            &[
                ("module_name", &case.module_name),
                ("spec", &case.spec_text),
            ],
        ),
        Some((plan, prior)) => fill(
            &set.generator_revision,
            &[
                ("module_name", &case.module_name),
                ("spec", &case.spec_text),
                ("code", &prior.chisel_src),
                ("plan", &render_plan(plan)),
            ],
        ),
    };
    enforce_budget(
        vec![
            ChatMessage::system(&set.generator_system),
            ChatMessage::user(user),
        ],
        budget.max_chars,
    )
}

/// Appends a failed reply and a format reminder, then refits the budget.
pub fn with_reminder(
    mut messages: Vec<ChatMessage>,
    bad_reply: &str,
    reminder: String,
    budget: &PromptBudget,
) -> Vec<ChatMessage> {
    let reply = if bad_reply.trim().is_empty() {
        "(empty reply)"
    } else {
        bad_reply
    };
    messages.push(ChatMessage::assistant(reply));
    messages.push(ChatMessage::user(reminder));
    enforce_budget(messages, budget.max_chars)
}

pub struct ReviewContext<'a> {
    pub case: &'a CaseSpec,
    pub trace: &'a Trace,
    pub feedback: &'a Feedback,
    pub guidance: &'a [&'a CatalogEntry],
    /// Cause of an approach discarded by the last escape, if any.
    pub escape_note: Option<&'a str>,
}

fn render_guidance(guidance: &[&CatalogEntry]) -> String {
    if guidance.is_empty() {
        return String::new();
    }
    let mut out = String::from("Known error patterns that match these errors:\n\n");
    for g in guidance {
        let _ = writeln!(
            out,
            "[{}] {}\nCause: {}\nFix: {}\nIncorrect:\n{}\nCorrected:\n{}\n",
            g.class_id,
            g.description.trim(),
            g.cause.trim(),
            g.fix_guidance.trim(),
            g.incorrect_snippet.trim_end(),
            g.corrected_snippet.trim_end()
        );
    }
    out
}

fn render_history(earlier: &[&IterationRecord], window: usize, summaries: bool) -> String {
    if earlier.is_empty() || (window == 0 && !summaries) {
        return String::new();
    }
    let mut out = String::from("Earlier iterations, most recent first:\n\n");
    for (n, r) in earlier.iter().enumerate() {
        if n < window {
            let _ = writeln!(out, "Iteration {} ({}):", r.iteration(), r.verdict);
            if let Some(f) = &r.feedback {
                out.push_str(&render_feedback(f));
            }
            if let Some(p) = &r.plan {
                out.push_str("Plan applied afterwards:\n");
                out.push_str(&render_plan(p));
            }
            out.push('\n');
        } else if summaries {
            let _ = writeln!(
                out,
                "Iteration {} ({}): {}",
                r.iteration(),
                r.verdict,
                headline(r)
            );
        }
    }
    out.push('\n');
    out
}

pub fn render_reviewer_prompt(
    set: &PromptSet,
    budget: &PromptBudget,
    ctx: &ReviewContext<'_>,
) -> Vec<ChatMessage> {
    let (iteration, code) = ctx
        .trace
        .last()
        .map(|r| (r.iteration(), r.candidate.chisel_src.as_str()))
        .unwrap_or((0, ""));
    let earlier: Vec<&IterationRecord> = ctx.trace.records.iter().rev().skip(1).collect();
    let feedback = render_feedback(ctx.feedback);
    let guidance = render_guidance(ctx.guidance);
    let escape = ctx
        .escape_note
        .map(|n| {
            format!(
                "Note: an earlier attempt at these errors was discarded because the repair went in circles ({}). Choose a different fix strategy.\n\n",
                n.trim()
            )
        })
        .unwrap_or_default();
    let iteration = iteration.to_string();
    let render = |history: &str| {
        vec![
            ChatMessage::system(&set.reviewer_system),
            ChatMessage::user(fill(
                &set.reviewer_user,
                &[
                    ("module_name", &ctx.case.module_name),
                    ("spec", &ctx.case.spec_text),
                    ("iteration", &iteration),
                    ("code", code),
                    ("feedback", &feedback),
                    ("guidance", &guidance),
                    ("history", history),
                    ("escape_note", &escape),
                ],
            )),
        ]
    };

    // Shrink the detailed window first, then drop the summaries.
    for window in (0..=budget.window).rev() {
        let msgs = render(&render_history(&earlier, window, true));
        if total_chars(&msgs) <= budget.max_chars {
            return msgs;
        }
    }
    enforce_budget(render(""), budget.max_chars)
}

pub fn render_inspector_prompt(
    set: &PromptSet,
    budget: &PromptBudget,
    trace: &Trace,
    feedback: &Feedback,
    current_iteration: u32,
) -> Vec<ChatMessage> {
    let priors = trace.prior_matches(feedback, current_iteration);
    let current = render_feedback(feedback);
    let current_sigs = feedback.signatures();
    let pair = |n: usize, r: &IterationRecord| {
        let prior = r.feedback.as_ref().map(render_feedback).unwrap_or_default();
        let shared: Vec<String> = r
            .feedback
            .as_ref()
            .map(|f| {
                f.signatures()
                    .into_iter()
                    .filter(|s| current_sigs.contains(s))
                    .collect()
            })
            .unwrap_or_default();
        format!(
            "Comparison {n}: iteration {} and current iteration {current_iteration}\nShared locations: {}\nIteration {} errors:\n{prior}Current errors:\n{current}\n",
            r.iteration(),
            shared.join(", "),
            r.iteration()
        )
    };
    let iteration = current_iteration.to_string();
    let render = |count: usize| {
        let pairs: String = priors
            .iter()
            .take(count)
            .enumerate()
            .map(|(n, r)| pair(n + 1, r))
            .collect();
        vec![
            ChatMessage::system(&set.inspector_system),
            ChatMessage::user(fill(
                &set.inspector_user,
                &[("iteration", &iteration), ("pairs", &pairs)],
            )),
        ]
    };
    // Oldest comparisons are dropped first.
    for count in (1..=priors.len()).rev() {
        let msgs = render(count);
        if total_chars(&msgs) <= budget.max_chars {
            return msgs;
        }
    }
    enforce_budget(render(priors.len().min(1)), budget.max_chars)
}
