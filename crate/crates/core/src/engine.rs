//! The generate / compile / simulate / review / revise loop for one trial.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::compile::{CompileResult, CompileStatus, Compiler, ToolError};
use crate::config::RunConfig;
use crate::domain::{
    classify_verdict, Candidate, CaseSpec, Erasure, ErrorEntry, ErrorKind, Feedback, FeedbackError,
    Provenance, RevisionPlan, Trace, TraceError, Verdict,
};
use crate::llm::{
    parse_code_response, parse_inspector_verdict, parse_revision_plan, render_generator_prompt,
    render_inspector_prompt, render_reviewer_prompt, with_reminder, AgentRole, ChatMessage,
    ChatRequest, Gateway, LoopVerdict, PromptSet, ProviderError, ReviewContext,
};
use crate::sim::{SimResult, SimStatus, Simulator};

pub const EVENT_SCHEMA_VERSION: u32 = 1;
const INTERFACE_LOG_HEAD: usize = 1_000;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("case {0} is excluded from runs")]
    Excluded(String),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("trace bookkeeping failed: {0}")]
    Trace(#[from] TraceError),
    #[error("cannot build feedback: {0}")]
    Feedback(#[from] BuildFeedbackError),
    #[error(transparent)]
    Span(#[from] SpanError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildFeedbackError {
    #[error("compilation and simulation both succeeded")]
    NoFailure,
    #[error("compiled candidate has no simulation result")]
    MissingSimulation,
    #[error("timeouts are not feedback")]
    Timeout,
    #[error(transparent)]
    Invalid(#[from] FeedbackError),
}

/// Turns adapter results into the error list handed to the Reviewer.
///
/// A simulation build error (DUT and testbench disagree on the interface)
/// becomes a Syntax-variant entry: it is the Generator's naming mistake,
/// not an infrastructure fault.
pub fn build_feedback(
    compile: &CompileResult,
    sim: Option<&SimResult>,
) -> Result<Feedback, BuildFeedbackError> {
    match compile.status {
        CompileStatus::Timeout => return Err(BuildFeedbackError::Timeout),
        CompileStatus::Failed => {
            let mut entries = compile.entries.clone();
            if entries.is_empty() {
                entries.push(ErrorEntry::new(
                    ErrorKind::Syntax,
                    None,
                    head(&compile.raw_log, "compilation failed without diagnostics"),
                    None,
                    None,
                ));
            }
            return Ok(Feedback::syntax(entries, compile.raw_log.clone())?);
        }
        CompileStatus::Ok => {}
    }
    let sim = sim.ok_or(BuildFeedbackError::MissingSimulation)?;
    match sim.status {
        SimStatus::Pass => Err(BuildFeedbackError::NoFailure),
        SimStatus::Timeout => Err(BuildFeedbackError::Timeout),
        SimStatus::BuildError => {
            let msg = format!(
                "Simulation build failed; the module interface does not match the testbench.\n{}",
                head(&sim.raw_log, "no simulator output")
            );
            let entry = ErrorEntry::new(ErrorKind::Syntax, None, msg, None, None);
            Ok(Feedback::syntax(vec![entry], sim.raw_log.clone())?)
        }
        SimStatus::Fail => Ok(Feedback::functional(
            sim.mismatches.clone(),
            sim.failed_count.max(1),
            sim.total_count.max(sim.failed_count).max(1),
            sim.raw_log.clone(),
        )?),
    }
}

fn head(log: &str, fallback: &str) -> String {
    let t = log.trim();
    if t.is_empty() {
        return fallback.to_string();
    }
    let mut end = t.len().min(INTERFACE_LOG_HEAD);
    while !t.is_char_boundary(end) {
        end -= 1;
    }
    t[..end].to_string()
}

/// Iterations `(start, end]` judged to repeat the error of `start`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSpan {
    pub start_iteration: u32,
    pub end_iteration: u32,
    pub matched_signature: String,
    pub cause_summary: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid loop span {start}..{end} for a trace ending at {tail:?}")]
pub struct SpanError {
    pub start: u32,
    pub end: u32,
    pub tail: Option<u32>,
}

/// Moves records `(start, end]` into a new erasure. `end` must be the tail
/// and `start` a surviving record, so numbering resumes at `start + 1`.
pub fn erase_loop(mut trace: Trace, span: &LoopSpan) -> Result<Trace, SpanError> {
    let tail = trace.last().map(|r| r.iteration());
    let err = SpanError {
        start: span.start_iteration,
        end: span.end_iteration,
        tail,
    };
    if span.start_iteration >= span.end_iteration || tail != Some(span.end_iteration) {
        return Err(err);
    }
    let Some(pos) = trace
        .records
        .iter()
        .position(|r| r.iteration() == span.start_iteration)
    else {
        return Err(err);
    };
    let erased = trace.records.split_off(pos + 1);
    trace.erasures.push(Erasure {
        span_start: span.start_iteration,
        span_end: span.end_iteration,
        erased_records: erased,
        matched_signature: span.matched_signature.clone(),
        cause_summary: span.cause_summary.clone(),
        replaced_plan: None,
    });
    Ok(trace)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmCalls {
    pub generator: u32,
    pub reviewer: u32,
    pub inspector: u32,
}

impl LlmCalls {
    pub fn total(&self) -> u32 {
        self.generator + self.reviewer + self.inspector
    }
}

/// Seconds per phase, from the engine's clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub generate_s: f64,
    pub compile_s: f64,
    pub simulate_s: f64,
    pub review_s: f64,
    pub inspect_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub final_verdict: Verdict,
    /// Revisions made after the initial candidate, erased ones included.
    pub iterations_used: u32,
    pub trace: Trace,
    pub escapes_triggered: u32,
    pub llm_calls: LlmCalls,
    pub timing: Timing,
    /// Error class of the last evaluated candidate when the run failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<Verdict>,
    /// Provider or timeout message for infrastructure verdicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub trait Clock: Send + Sync {
    fn now_s(&self) -> f64;
}

/// Always 0; makes outcomes byte-for-byte reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now_s(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now_s(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    IterationStarted {
        provenance: Provenance,
    },
    Compiled {
        status: CompileStatus,
        entries: usize,
    },
    Simulated {
        status: SimStatus,
        failed: u64,
        total: u64,
    },
    Evaluated {
        verdict: Verdict,
    },
    Inspected {
        candidates: Vec<u32>,
        verdict: LoopVerdict,
    },
    Escaped {
        span: LoopSpan,
        erased: usize,
    },
    Reviewed {
        items: usize,
        fallback: bool,
    },
    Finished {
        verdict: Verdict,
        iterations_used: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineEvent {
    pub schema: u32,
    pub case_id: String,
    pub attempt: u32,
    pub iteration: u32,
    #[serde(flatten)]
    pub kind: EventKind,
}

pub trait EventSink: Send + Sync {
    fn emit(&self, event: &EngineEvent);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _event: &EngineEvent) {}
}

#[derive(Debug, Default)]
pub struct VecSink(Mutex<Vec<EngineEvent>>);

impl VecSink {
    pub fn events(&self) -> Vec<EngineEvent> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl EventSink for VecSink {
    fn emit(&self, event: &EngineEvent) {
        self.0
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(event.clone());
    }
}

/// One JSON object per line.
#[derive(Debug)]
pub struct JsonlSink(Mutex<BufWriter<File>>);

impl JsonlSink {
    pub fn append(path: &Path) -> std::io::Result<Self> {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(JsonlSink(Mutex::new(BufWriter::new(f))))
    }
}

impl EventSink for JsonlSink {
    fn emit(&self, event: &EngineEvent) {
        let mut w = self.0.lock().unwrap_or_else(|p| p.into_inner());
        if let Ok(line) = serde_json::to_string(event) {
            if writeln!(w, "{line}").and_then(|_| w.flush()).is_err() {
                tracing::warn!("event log write failed");
            }
        }
    }
}

/// Everything one trial needs. Borrowed so the harness can share adapters
/// across workers while giving each trial its own gateway.
pub struct Engine<'a> {
    pub gateway: &'a Gateway,
    pub compiler: &'a dyn Compiler,
    pub simulator: &'a dyn Simulator,
    pub catalog: &'a Catalog,
    pub prompts: &'a PromptSet,
    pub cfg: &'a RunConfig,
    pub clock: &'a dyn Clock,
    pub events: &'a dyn EventSink,
}

struct Run<'e, 'a> {
    engine: &'e Engine<'a>,
    case: &'e CaseSpec,
    calls: LlmCalls,
    timing: Timing,
    attempt: u32,
    iteration: u32,
}

enum Stop {
    Provider(ProviderError),
}

impl<'a> Engine<'a> {
    pub fn run_case(&self, case: &CaseSpec) -> Result<CaseOutcome, EngineError> {
        if case.is_excluded() {
            return Err(EngineError::Excluded(case.case_id.clone()));
        }
        let started = self.clock.now_s();
        let mut run = Run {
            engine: self,
            case,
            calls: LlmCalls::default(),
            timing: Timing::default(),
            attempt: 0,
            iteration: 0,
        };
        let mut outcome = run.execute()?;
        outcome.timing.total_s = self.clock.now_s() - started;
        self.events.emit(&EngineEvent {
            schema: EVENT_SCHEMA_VERSION,
            case_id: case.case_id.clone(),
            attempt: run.attempt,
            iteration: run.iteration,
            kind: EventKind::Finished {
                verdict: outcome.final_verdict,
                iterations_used: outcome.iterations_used,
            },
        });
        Ok(outcome)
    }

    /// Mechanical prefilter, then the Inspector. Returns the span to erase
    /// only on an affirmative verdict naming one of the prefilter's matches.
    pub fn detect_loop(
        &self,
        trace: &Trace,
        feedback: &Feedback,
        current_iteration: u32,
        calls: &mut LlmCalls,
    ) -> Option<LoopSpan> {
        self.inspect(trace, feedback, current_iteration, calls).span
    }

    fn inspect(
        &self,
        trace: &Trace,
        feedback: &Feedback,
        current_iteration: u32,
        calls: &mut LlmCalls,
    ) -> Inspection {
        let priors = trace.prior_matches(feedback, current_iteration);
        let candidates: Vec<u32> = priors.iter().map(|r| r.iteration()).collect();
        if priors.is_empty() {
            return Inspection {
                candidates,
                verdict: None,
                span: None,
            };
        }
        let messages = render_inspector_prompt(
            self.prompts,
            &self.cfg.prompt_budget(),
            trace,
            feedback,
            current_iteration,
        );
        calls.inspector += 1;
        let verdict = match self.gateway.complete(&ChatRequest {
            role: AgentRole::Inspector,
            messages,
        }) {
            Ok(text) => parse_inspector_verdict(&text),
            Err(e) => {
                tracing::warn!(error = %e, "inspector unavailable; assuming no loop");
                LoopVerdict::no_loop(format!("inspector unavailable: {e}"))
            }
        };
        let span = verdict
            .matched_prior_iteration
            .filter(|j| verdict.is_loop && candidates.contains(j))
            .and_then(|j| priors.iter().find(|r| r.iteration() == j))
            .map(|prior| {
                let current = feedback.signatures();
                let matched_signature = prior
                    .feedback
                    .as_ref()
                    .and_then(|f| f.signatures().into_iter().find(|s| current.contains(s)))
                    .unwrap_or_default();
                LoopSpan {
                    start_iteration: prior.iteration(),
                    end_iteration: current_iteration,
                    matched_signature,
                    cause_summary: verdict.cause_summary.clone(),
                }
            });
        Inspection {
            candidates,
            verdict: Some(verdict),
            span,
        }
    }
}

struct Inspection {
    candidates: Vec<u32>,
    verdict: Option<LoopVerdict>,
    span: Option<LoopSpan>,
}

impl Run<'_, '_> {
    fn emit(&self, kind: EventKind) {
        self.engine.events.emit(&EngineEvent {
            schema: EVENT_SCHEMA_VERSION,
            case_id: self.case.case_id.clone(),
            attempt: self.attempt,
            iteration: self.iteration,
            kind,
        });
    }

    fn timed<T>(
        &mut self,
        phase: fn(&mut Timing) -> &mut f64,
        f: impl FnOnce(&mut Self) -> T,
    ) -> T {
        let t0 = self.engine.clock.now_s();
        let out = f(self);
        let dt = self.engine.clock.now_s() - t0;
        *phase(&mut self.timing) += dt;
        out
    }

    fn outcome(
        &self,
        verdict: Verdict,
        trace: Trace,
        escapes: u32,
        last_error: Option<Verdict>,
        detail: Option<String>,
    ) -> CaseOutcome {
        CaseOutcome {
            case_id: self.case.case_id.clone(),
            final_verdict: verdict,
            iterations_used: self.attempt,
            trace,
            escapes_triggered: escapes,
            llm_calls: self.calls,
            timing: self.timing,
            last_error,
            detail,
        }
    }

    fn generate(&mut self, revision: Option<(&RevisionPlan, &Candidate)>) -> Result<String, Stop> {
        let e = self.engine;
        let budget = e.cfg.prompt_budget();
        let messages = render_generator_prompt(e.prompts, &budget, self.case, revision);
        let reply = self.call(AgentRole::Generator, messages.clone())?;
        match parse_code_response(&reply) {
            Ok(src) => Ok(src),
            Err(_) => {
                let retry = with_reminder(
                    messages,
                    &reply,
                    e.prompts.generator_reminder(self.case),
                    &budget,
                );
                let second = self.call(AgentRole::Generator, retry)?;
                // A second malformed reply is compiled as-is; the compiler's
                // complaint becomes ordinary feedback.
                Ok(parse_code_response(&second).unwrap_or(second))
            }
        }
    }

    fn review(
        &mut self,
        trace: &Trace,
        feedback: &Feedback,
        escape_note: Option<&str>,
    ) -> Result<RevisionPlan, Stop> {
        let e = self.engine;
        let budget = e.cfg.prompt_budget();
        let entries: &[ErrorEntry] = match feedback {
            Feedback::Syntax { entries, .. } => entries,
            Feedback::Functional { .. } => &[],
        };
        let guidance = e.catalog.guidance_for(entries);
        let ctx = ReviewContext {
            case: self.case,
            trace,
            feedback,
            guidance: &guidance,
            escape_note,
        };
        let messages = render_reviewer_prompt(e.prompts, &budget, &ctx);
        let reply = self.call(AgentRole::Reviewer, messages.clone())?;
        let (plan, fallback) = match parse_revision_plan(&reply) {
            Ok(p) => (p, false),
            Err(_) => {
                let retry = with_reminder(messages, &reply, e.prompts.reviewer_reminder(), &budget);
                let second = self.call(AgentRole::Reviewer, retry)?;
                match parse_revision_plan(&second) {
                    Ok(p) => (p, false),
                    Err(_) => (RevisionPlan::from_feedback(feedback, second), true),
                }
            }
        };
        self.emit(EventKind::Reviewed {
            items: plan.items.len(),
            fallback,
        });
        Ok(plan)
    }

    fn call(&mut self, role: AgentRole, messages: Vec<ChatMessage>) -> Result<String, Stop> {
        match role {
            AgentRole::Generator => self.calls.generator += 1,
            AgentRole::Reviewer => self.calls.reviewer += 1,
            AgentRole::Inspector => self.calls.inspector += 1,
        }
        let gateway = self.engine.gateway;
        let phase: fn(&mut Timing) -> &mut f64 = match role {
            AgentRole::Generator => |t| &mut t.generate_s,
            AgentRole::Reviewer => |t| &mut t.review_s,
            AgentRole::Inspector => |t| &mut t.inspect_s,
        };
        self.timed(phase, |_| gateway.complete(&ChatRequest { role, messages }))
            .map_err(Stop::Provider)
    }

    fn execute(&mut self) -> Result<CaseOutcome, EngineError> {
        let e = self.engine;
        let max = e.cfg.max_iterations;
        let mut trace = Trace::new();
        let mut escapes = 0;

        let first = match self.generate(None) {
            Ok(src) => src,
            Err(Stop::Provider(p)) => {
                return Ok(self.outcome(
                    Verdict::ProviderError,
                    trace,
                    0,
                    None,
                    Some(p.to_string()),
                ))
            }
        };
        let mut candidate = Candidate {
            iteration: 0,
            attempt: 0,
            chisel_src: first,
            verilog_src: None,
            provenance: Provenance::InitialGeneration,
        };
        let mut last_error = None;

        loop {
            self.iteration = candidate.iteration;
            self.emit(EventKind::IterationStarted {
                provenance: candidate.provenance,
            });

            let compile_timeout = e.cfg.compile_timeout();
            let compiled = self.timed(
                |t| &mut t.compile_s,
                |r| {
                    r.engine
                        .compiler
                        .compile(&candidate, r.case, compile_timeout)
                },
            )?;
            self.emit(EventKind::Compiled {
                status: compiled.status,
                entries: compiled.entries.len(),
            });
            if compiled.status == CompileStatus::Timeout {
                let msg = format!("compilation exceeded {} s", e.cfg.compile_timeout_s);
                return Ok(self.outcome(
                    Verdict::ToolTimeout,
                    trace,
                    escapes,
                    last_error,
                    Some(msg),
                ));
            }

            let mut simulated = None;
            if let (CompileStatus::Ok, Some(verilog)) =
                (compiled.status, compiled.verilog_src.as_ref())
            {
                candidate.verilog_src = Some(verilog.clone());
                let sim_timeout = e.cfg.sim_timeout();
                let sim = self.timed(
                    |t| &mut t.simulate_s,
                    |r| r.engine.simulator.simulate(verilog, r.case, sim_timeout),
                )?;
                self.emit(EventKind::Simulated {
                    status: sim.status,
                    failed: sim.failed_count,
                    total: sim.total_count,
                });
                if sim.status == SimStatus::Timeout {
                    let msg = format!("simulation exceeded {} s", e.cfg.sim_timeout_s);
                    return Ok(self.outcome(
                        Verdict::ToolTimeout,
                        trace,
                        escapes,
                        last_error,
                        Some(msg),
                    ));
                }
                simulated = Some(sim);
            }

            let verdict =
                classify_verdict(compiled.is_ok(), simulated.as_ref().map(SimResult::passed))
                    .expect("simulation runs exactly when compilation succeeds");
            let feedback = if verdict == Verdict::Success {
                None
            } else {
                Some(build_feedback(&compiled, simulated.as_ref())?)
            };
            let observed = feedback
                .as_ref()
                .map_or(Verdict::Success, Feedback::verdict);
            let out_of_budget = feedback.is_some() && self.attempt >= max;
            let record_verdict = if out_of_budget {
                Verdict::Exhausted
            } else {
                observed
            };
            self.emit(EventKind::Evaluated {
                verdict: record_verdict,
            });

            trace = trace.append_record(crate::domain::IterationRecord {
                candidate: candidate.clone(),
                feedback: feedback.clone(),
                plan: None,
                verdict: record_verdict,
            })?;

            let Some(feedback) = feedback else {
                return Ok(self.outcome(Verdict::Success, trace, escapes, None, None));
            };
            last_error = Some(observed);

            let mut escaped: Option<LoopSpan> = None;
            if e.cfg.escape_enabled {
                let mut calls = self.calls;
                let t0 = e.clock.now_s();
                let inspection = e.inspect(&trace, &feedback, candidate.iteration, &mut calls);
                self.timing.inspect_s += e.clock.now_s() - t0;
                self.calls = calls;
                if let Some(verdict) = inspection.verdict {
                    self.emit(EventKind::Inspected {
                        candidates: inspection.candidates,
                        verdict,
                    });
                }
                if let Some(span) = inspection.span {
                    trace = erase_loop(trace, &span)?;
                    escapes += 1;
                    let erased = trace.erasures.last().map_or(0, |x| x.erased_records.len());
                    self.emit(EventKind::Escaped {
                        span: span.clone(),
                        erased,
                    });
                    escaped = Some(span);
                }
            }

            if out_of_budget {
                return Ok(self.outcome(Verdict::Exhausted, trace, escapes, last_error, None));
            }

            let note = escaped.as_ref().map(|s| {
                if s.cause_summary.trim().is_empty() {
                    format!("the error `{}` kept recurring", s.matched_signature)
                } else {
                    s.cause_summary.clone()
                }
            });
            let plan = match self.review(&trace, &feedback, note.as_deref()) {
                Ok(p) => p,
                Err(Stop::Provider(p)) => {
                    return Ok(self.outcome(
                        Verdict::ProviderError,
                        trace,
                        escapes,
                        last_error,
                        Some(p.to_string()),
                    ))
                }
            };
            let replaced = trace.attach_plan(plan.clone())?;
            if escaped.is_some() {
                if let Some(er) = trace.erasures.last_mut() {
                    er.replaced_plan = replaced;
                }
            }

            let tail = trace.last().ok_or(TraceError::Empty)?.candidate.clone();
            let src = match self.generate(Some((&plan, &tail))) {
                Ok(s) => s,
                Err(Stop::Provider(p)) => {
                    return Ok(self.outcome(
                        Verdict::ProviderError,
                        trace,
                        escapes,
                        last_error,
                        Some(p.to_string()),
                    ))
                }
            };
            self.attempt += 1;
            candidate = Candidate {
                iteration: trace.next_iteration(),
                attempt: self.attempt,
                chisel_src: src,
                verilog_src: None,
                provenance: if escaped.is_some() {
                    Provenance::PostEscapeRevision
                } else {
                    Provenance::Revision
                },
            };
        }
    }
}
