//! Shared value types for cases, candidates, feedback and traces.
//!
//! Everything here is an immutable value object. Serialization uses the
//! field names listed on each type so result logs stay stable across
//! releases.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Why a case was filtered out of a suite before any run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionRule {
    /// Needs Verilog features Chisel cannot emit, such as `#(parameter ...)`.
    NeedsParameterization,
    /// Missing or incorrect reference, so correctness cannot be verified.
    UnverifiableReference,
    /// Debugging or completion task that does not map to generation.
    DebugOrCompletionTask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub rule: ExclusionRule,
    pub reason: String,
}

/// One benchmark problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case_id: String,
    pub spec_text: String,
    pub testbench_src: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_src: Option<String>,
    pub module_name: String,
    pub origin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded: Option<Exclusion>,
    /// Stimulus seed passed to the simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CaseSpec {
    pub fn is_excluded(&self) -> bool {
        self.excluded.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    InitialGeneration,
    Revision,
    PostEscapeRevision,
}

/// One generated Chisel source plus its Verilog when it compiled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    /// Position in the (possibly renumbered) trace.
    pub iteration: u32,
    /// Monotone attempt counter; unaffected by loop erasure.
    pub attempt: u32,
    pub chisel_src: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verilog_src: Option<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    Syntax,
    /// Logical errors the compiler catches statically (uninitialized
    /// references, combinational cycles). These still travel through the
    /// syntax feedback path.
    FunctionalStatic,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceLocation {
    pub file: String,
    pub line: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<u32>,
}

impl fmt::Display for SourceLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.column {
            Some(col) => write!(f, "{}:{}:{}", self.file, self.line, col),
            None => write!(f, "{}:{}", self.file, self.line),
        }
    }
}

/// A single compiler diagnostic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub kind: ErrorKind,
    /// `None` when the diagnostic carried no position.
    pub location: Option<SourceLocation>,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog_class: Option<String>,
    pub location_signature: String,
}

impl ErrorEntry {
    /// Builds an entry and stamps its signature.
    pub fn new(
        kind: ErrorKind,
        location: Option<SourceLocation>,
        message: impl Into<String>,
        suggestion: Option<String>,
        catalog_class: Option<String>,
    ) -> Self {
        let mut entry = ErrorEntry {
            kind,
            location,
            message: message.into(),
            suggestion,
            catalog_class,
            location_signature: String::new(),
        };
        entry.location_signature = location_signature(&entry);
        entry
    }

    pub fn location_text(&self) -> String {
        self.location
            .as_ref()
            .map(ToString::to_string)
            .unwrap_or_else(|| "unknown".to_string())
    }
}

/// One failed functional test point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchEntry {
    pub testpoint_id: String,
    pub stimulus: String,
    pub expected: String,
    pub actual: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Feedback {
    Syntax {
        entries: Vec<ErrorEntry>,
        raw_log: String,
    },
    Functional {
        mismatches: Vec<MismatchEntry>,
        failed_count: u64,
        total_count: u64,
        raw_log: String,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeedbackError {
    #[error("syntax feedback needs at least one error entry")]
    EmptySyntax,
    #[error("functional feedback needs 1 <= failed_count ({failed}) <= total_count ({total})")]
    BadCounts { failed: u64, total: u64 },
}

impl Feedback {
    pub fn syntax(entries: Vec<ErrorEntry>, raw_log: String) -> Result<Self, FeedbackError> {
        if entries.is_empty() {
            return Err(FeedbackError::EmptySyntax);
        }
        Ok(Feedback::Syntax { entries, raw_log })
    }

    pub fn functional(
        mismatches: Vec<MismatchEntry>,
        failed_count: u64,
        total_count: u64,
        raw_log: String,
    ) -> Result<Self, FeedbackError> {
        if failed_count == 0 || failed_count > total_count {
            return Err(FeedbackError::BadCounts {
                failed: failed_count,
                total: total_count,
            });
        }
        Ok(Feedback::Functional {
            mismatches,
            failed_count,
            total_count,
            raw_log,
        })
    }

    pub fn is_syntax(&self) -> bool {
        matches!(self, Feedback::Syntax { .. })
    }

    /// Signatures used for loop comparison. Functional mismatches are keyed
    /// by their test point, since the simulator has no source location.
    pub fn signatures(&self) -> Vec<String> {
        let mut sigs: Vec<String> = match self {
            Feedback::Syntax { entries, .. } => entries
                .iter()
                .map(|e| e.location_signature.clone())
                .collect(),
            Feedback::Functional { mismatches, .. } => mismatches
                .iter()
                .map(|m| format!("functional|{}", m.testpoint_id))
                .collect(),
        };
        sigs.sort();
        sigs.dedup();
        sigs
    }

    pub fn shares_signature_with(&self, other: &Feedback) -> bool {
        let mine = self.signatures();
        other.signatures().iter().any(|s| mine.contains(s))
    }

    pub fn raw_log(&self) -> &str {
        match self {
            Feedback::Syntax { raw_log, .. } | Feedback::Functional { raw_log, .. } => raw_log,
        }
    }

    /// The verdict a candidate with this feedback receives.
    pub fn verdict(&self) -> Verdict {
        match self {
            Feedback::Syntax { .. } => Verdict::SyntaxError,
            Feedback::Functional { .. } => Verdict::FunctionalError,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanItem {
    pub location: String,
    pub cause_analysis: String,
    pub solution: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionPlan {
    pub items: Vec<PlanItem>,
    pub raw_response: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("revision plan has no items")]
    Empty,
    #[error("plan item {0} lacks a cause analysis or solution")]
    IncompleteItem(usize),
}

impl RevisionPlan {
    pub fn new(items: Vec<PlanItem>, raw_response: String) -> Result<Self, PlanError> {
        if items.is_empty() {
            return Err(PlanError::Empty);
        }
        if let Some(idx) = items
            .iter()
            .position(|i| i.cause_analysis.trim().is_empty() || i.solution.trim().is_empty())
        {
            return Err(PlanError::IncompleteItem(idx));
        }
        Ok(RevisionPlan {
            items,
            raw_response,
        })
    }

    /// Plan built straight from tool feedback, used when the reviewer keeps
    /// returning unparseable output.
    pub fn from_feedback(feedback: &Feedback, raw_response: String) -> Self {
        let items = match feedback {
            Feedback::Syntax { entries, .. } => entries
                .iter()
                .map(|e| PlanItem {
                    location: e.location_text(),
                    cause_analysis: e.message.clone(),
                    solution: match &e.suggestion {
                        Some(s) => format!("Apply the compiler suggestion: {s}"),
                        None => "Fix the construct the compiler reports.".to_string(),
                    },
                })
                .collect::<Vec<_>>(),
            Feedback::Functional {
                mismatches,
                failed_count,
                total_count,
                ..
            } => {
                let mut items: Vec<PlanItem> = mismatches
                    .iter()
                    .map(|m| PlanItem {
                        location: format!("test point {}", m.testpoint_id),
                        cause_analysis: format!(
                            "inputs {} expected {} but got {}",
                            m.stimulus, m.expected, m.actual
                        ),
                        solution: "Correct the logic driving the mismatching outputs.".to_string(),
                    })
                    .collect();
                if items.is_empty() {
                    items.push(PlanItem {
                        location: "unknown".to_string(),
                        cause_analysis: format!(
                            "{failed_count} of {total_count} test points failed"
                        ),
                        solution: "Re-check the module logic against the module description."
                            .to_string(),
                    });
                }
                items
            }
        };
        RevisionPlan {
            items,
            raw_response,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Success,
    SyntaxError,
    FunctionalError,
    ToolTimeout,
    ProviderError,
    Exhausted,
}

impl Verdict {
    pub fn is_success(self) -> bool {
        self == Verdict::Success
    }

    /// Failures caused by tooling or the provider rather than the model.
    pub fn is_infrastructure(self) -> bool {
        matches!(self, Verdict::ToolTimeout | Verdict::ProviderError)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Success => "success",
            Verdict::SyntaxError => "syntax-error",
            Verdict::FunctionalError => "functional-error",
            Verdict::ToolTimeout => "tool-timeout",
            Verdict::ProviderError => "provider-error",
            Verdict::Exhausted => "exhausted",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("simulation result must be absent exactly when compilation failed")]
pub struct InconsistentOutcome;

/// Maps tool outcomes to a verdict. `sim_ok` is `None` when simulation was
/// skipped, which only happens after a compile failure.
pub fn classify_verdict(
    compile_ok: bool,
    sim_ok: Option<bool>,
) -> Result<Verdict, InconsistentOutcome> {
    match (compile_ok, sim_ok) {
        (true, Some(true)) => Ok(Verdict::Success),
        (true, Some(false)) => Ok(Verdict::FunctionalError),
        (false, None) => Ok(Verdict::SyntaxError),
        _ => Err(InconsistentOutcome),
    }
}

struct ConstructPatterns {
    named: Vec<Regex>,
    numerals: Regex,
    spaces: Regex,
}

fn construct_patterns() -> &'static ConstructPatterns {
    static PATTERNS: OnceLock<ConstructPatterns> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        let named = [
            r"(?i)\bvalue\s+`?([A-Za-z_][\w$]*)`?\s+is not a member",
            r"(?i)\bnot found:\s*(?:value|type|object)\s+([A-Za-z_][\w$]*)",
            r"(?i)\breference\s+([A-Za-z_][\w.$\[\]]*)\s+(?:is\s+)?not fully initialized",
            r"(?i)\bport\s+([A-Za-z_][\w.$]*)\s+with abstract reset",
            r"(?i)^\s*([A-Za-z_][\w.$]*)\s+must be hardware",
            r"(?i)\bmethod\s+([A-Za-z_][\w$]*)",
            r"(?i)\bclass\s+([\w.$]+)\s+cannot be cast",
            r"(?i)\bsink\s*\(.*?([A-Za-z_]\w*)\s*\)",
            r"(?i)\bfound\s*:\s*([\w.$\[\]]+)",
            r"(?i)sample path:\s*\{?\s*([A-Za-z_][\w$]*)",
            r"`([^`]+)`",
            r"'([A-Za-z_][\w$]*)'",
        ];
        ConstructPatterns {
            named: named
                .iter()
                .map(|p| Regex::new(p).expect("construct pattern compiles"))
                .collect(),
            numerals: Regex::new(r"\d+").expect("numeral pattern compiles"),
            spaces: Regex::new(r"\s+").expect("space pattern compiles"),
        }
    })
}

/// The syntactic construct a diagnostic names: an identifier, method or type.
pub fn named_construct(message: &str) -> Option<String> {
    construct_patterns()
        .named
        .iter()
        .find_map(|re| re.captures(message))
        .and_then(|c| c.get(1))
        .map(|m| m.as_str().to_string())
}

fn message_head(message: &str) -> String {
    let pats = construct_patterns();
    let first_line = message.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let head = match first_line.find(". ") {
        Some(idx) => &first_line[..idx],
        None => first_line.trim_end_matches('.'),
    };
    let head = pats.numerals.replace_all(head, "#");
    pats.spaces.replace_all(head.trim(), " ").to_lowercase()
}

/// Line-independent identity of a diagnostic, used to compare errors across
/// revisions whose line numbers shift.
pub fn location_signature(entry: &ErrorEntry) -> String {
    let class = entry.catalog_class.as_deref().unwrap_or("-");
    let construct = named_construct(&entry.message).unwrap_or_else(|| "-".to_string());
    format!("{class}|{construct}|{}", message_head(&entry.message))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub candidate: Candidate,
    /// Absent exactly when the candidate succeeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<RevisionPlan>,
    pub verdict: Verdict,
}

impl IterationRecord {
    pub fn iteration(&self) -> u32 {
        self.candidate.iteration
    }
}

/// Iterations removed by one escape event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Erasure {
    pub span_start: u32,
    pub span_end: u32,
    pub erased_records: Vec<IterationRecord>,
    #[serde(default)]
    pub matched_signature: String,
    #[serde(default)]
    pub cause_summary: String,
    /// Plan the surviving tail record carried before it was re-reviewed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaced_plan: Option<RevisionPlan>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub erasures: Vec<Erasure>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("expected iteration {expected}, got {got}")]
    OutOfOrder { expected: u32, got: u32 },
    #[error("record verdict {verdict} disagrees with feedback presence")]
    VerdictMismatch { verdict: Verdict },
    #[error("trace is empty")]
    Empty,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn next_iteration(&self) -> u32 {
        self.records.last().map_or(0, |r| r.iteration() + 1)
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Appends a record whose iteration index directly follows the tail.
    pub fn append_record(mut self, record: IterationRecord) -> Result<Trace, TraceError> {
        let expected = self.next_iteration();
        if record.iteration() != expected {
            return Err(TraceError::OutOfOrder {
                expected,
                got: record.iteration(),
            });
        }
        if (record.verdict == Verdict::Success) != record.feedback.is_none() {
            return Err(TraceError::VerdictMismatch {
                verdict: record.verdict,
            });
        }
        self.records.push(record);
        Ok(self)
    }

    /// Records the revision plan produced for the tail record.
    pub fn attach_plan(&mut self, plan: RevisionPlan) -> Result<Option<RevisionPlan>, TraceError> {
        let tail = self.records.last_mut().ok_or(TraceError::Empty)?;
        Ok(tail.plan.replace(plan))
    }

    /// Records before iteration `before` whose feedback shares a signature
    /// with `feedback`, most recent first.
    pub fn prior_matches(&self, feedback: &Feedback, before: u32) -> Vec<&IterationRecord> {
        self.records
            .iter()
            .rev()
            .filter(|r| r.iteration() < before)
            .filter(|r| {
                r.feedback
                    .as_ref()
                    .is_some_and(|f| f.shares_signature_with(feedback))
            })
            .collect()
    }

    /// Every record ever produced, erased or not, ordered by attempt.
    pub fn all_attempts(&self) -> Vec<&IterationRecord> {
        let mut all: Vec<&IterationRecord> = self
            .records
            .iter()
            .chain(self.erasures.iter().flat_map(|e| e.erased_records.iter()))
            .collect();
        all.sort_by_key(|r| r.candidate.attempt);
        all
    }
}
