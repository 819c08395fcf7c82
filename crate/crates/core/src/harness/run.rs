use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::compile::Compiler;
use crate::config::RunConfig;
use crate::domain::{CaseSpec, Verdict};
use crate::engine::{CaseOutcome, Clock, Engine, EngineError, EventSink, LlmCalls};
use crate::llm::{Gateway, PromptSet};
use crate::sim::Simulator;

pub const LOG_SCHEMA_VERSION: u32 = 1;

/// One finished trial as stored in the results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub schema: u32,
    pub case_id: String,
    pub trial: u32,
    pub model_id: String,
    pub max_iterations: u32,
    pub escape_enabled: bool,
    pub outcome: CaseOutcome,
}

/// A trial that could not be completed for infrastructure reasons. It is
/// retried on resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortMarker {
    pub schema: u32,
    pub case_id: String,
    pub trial: u32,
    pub model_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Outcome(ResultEnvelope),
    Abort(AbortMarker),
}

impl LogRecord {
    fn key(&self) -> (&str, u32) {
        match self {
            LogRecord::Outcome(e) => (&e.case_id, e.trial),
            LogRecord::Abort(a) => (&a.case_id, a.trial),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("results log {0} already exists; pass --resume to continue it")]
    LogExists(PathBuf),
    #[error("no runnable cases")]
    EmptySuite,
    #[error("results log I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot serialize a result: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Runs one trial. Implementations must be safe to call from many workers.
pub trait TrialRunner: Sync {
    fn run_trial(&self, case: &CaseSpec, trial: u32) -> Result<CaseOutcome, EngineError>;
}

pub type GatewayFactory = Box<dyn Fn(&CaseSpec, u32) -> Gateway + Send + Sync>;

/// The standard runner: shared adapters, a fresh gateway per trial.
pub struct EngineRunner {
    pub compiler: Arc<dyn Compiler>,
    pub simulator: Arc<dyn Simulator>,
    pub catalog: Catalog,
    pub prompts: PromptSet,
    pub cfg: RunConfig,
    pub gateway_for: GatewayFactory,
    pub clock: Arc<dyn Clock>,
    pub events: Arc<dyn EventSink>,
}

impl TrialRunner for EngineRunner {
    fn run_trial(&self, case: &CaseSpec, trial: u32) -> Result<CaseOutcome, EngineError> {
        let gateway = (self.gateway_for)(case, trial);
        Engine {
            gateway: &gateway,
            compiler: self.compiler.as_ref(),
            simulator: self.simulator.as_ref(),
            catalog: &self.catalog,
            prompts: &self.prompts,
            cfg: &self.cfg,
            clock: self.clock.as_ref(),
            events: self.events.as_ref(),
        }
        .run_case(case)
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    pub log_path: PathBuf,
    pub resume: bool,
    /// Checked between work items; set it to stop early with results kept.
    pub cancel: Option<Arc<AtomicBool>>,
    /// Stop after persisting this many new records; results still in
    /// flight are discarded.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config: RunConfig,
    /// Outcomes per case, ordered by trial.
    pub per_case: BTreeMap<String, Vec<ResultEnvelope>>,
    pub aborts: Vec<AbortMarker>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub usage: LlmCalls,
    /// Trials executed by this invocation (resumed ones excluded).
    pub new_records: usize,
    /// The run stopped before scheduling every trial.
    pub aborted: bool,
}

impl BenchResult {
    pub fn outcomes(&self) -> Vec<ResultEnvelope> {
        self.per_case.values().flatten().cloned().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogContents {
    pub records: Vec<LogRecord>,
    /// Lines that failed to parse, including a partial final line.
    pub skipped: usize,
}

/// Reads a results log, skipping corrupt lines.
pub fn read_log(path: &Path) -> std::io::Result<LogContents> {
    let mut out = LogContents::default();
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e),
    };
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogRecord>(&line) {
            Ok(r) => out.records.push(r),
            Err(e) => {
                tracing::warn!(line = n + 1, error = %e, "skipping unreadable results line");
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

/// Drops a partial final line left by an interrupted write.
fn trim_partial_tail(path: &Path) -> std::io::Result<()> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    tracing::warn!(
        dropped = bytes.len() - keep,
        "truncating partial last line of results log"
    );
    OpenOptions::new()
        .write(true)
        .open(path)?
        .set_len(keep as u64)
}

/// Runs every `(case, trial)` not yet in the log, `cfg.parallelism` at a
/// time, appending each record as soon as it finishes. Work is scheduled
/// case-major: all trials of the first case, then the next case.
pub fn run_bench(
    cases: &[CaseSpec],
    cfg: &RunConfig,
    runner: &dyn TrialRunner,
    opts: &BenchOptions,
) -> Result<BenchResult, BenchError> {
    let started_at = Utc::now();
    let cases: Vec<&CaseSpec> = cases.iter().filter(|c| !c.is_excluded()).collect();
    if cases.is_empty() {
        return Err(BenchError::EmptySuite);
    }

    let exists = opts.log_path.exists() && std::fs::metadata(&opts.log_path)?.len() > 0;
    if exists && !opts.resume {
        return Err(BenchError::LogExists(opts.log_path.clone()));
    }
    if exists {
        trim_partial_tail(&opts.log_path)?;
    }
    let done: BTreeSet<(String, u32)> = read_log(&opts.log_path)?
        .records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Outcome(e)
                if e.model_id == cfg.model_id && e.max_iterations == cfg.max_iterations =>
            {
                Some((e.case_id.clone(), e.trial))
            }
            _ => None,
        })
        .collect();

    let work: Vec<(&CaseSpec, u32)> = cases
        .iter()
        .flat_map(|c| (0..cfg.trials).map(move |t| (*c, t)))
        .filter(|(c, t)| !done.contains(&(c.case_id.clone(), *t)))
        .collect();
    tracing::info!(pending = work.len(), resumed = done.len(), "starting bench");

    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&opts.log_path)?;
    let next = AtomicUsize::new(0);
    let halt = AtomicBool::new(false);
    let cancelled = || {
        opts.cancel
            .as_ref()
            .is_some_and(|c| c.load(Ordering::SeqCst))
    };
    let mut new_records = 0usize;
    let mut infra_streak = 0u32;
    let mut write_err: Option<BenchError> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<LogRecord>();
        for _ in 0..cfg.parallelism.max(1).min(work.len().max(1)) {
            let tx = tx.clone();
            let (next, halt, work) = (&next, &halt, &work);
            scope.spawn(move || loop {
                if halt.load(Ordering::SeqCst) || cancelled() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(case, trial)) = work.get(i) else {
                    break;
                };
                let record = match runner.run_trial(case, trial) {
                    Ok(o) if o.final_verdict == Verdict::ProviderError => {
                        LogRecord::Abort(AbortMarker {
                            schema: LOG_SCHEMA_VERSION,
                            case_id: case.case_id.clone(),
                            trial,
                            model_id: cfg.model_id.clone(),
                            reason: o.detail.unwrap_or_else(|| "provider error".into()),
                        })
                    }
                    Ok(o) => LogRecord::Outcome(ResultEnvelope {
                        schema: LOG_SCHEMA_VERSION,
                        case_id: case.case_id.clone(),
                        trial,
                        model_id: cfg.model_id.clone(),
                        max_iterations: cfg.max_iterations,
                        escape_enabled: cfg.escape_enabled,
                        outcome: o,
                    }),
                    Err(e) => LogRecord::Abort(AbortMarker {
                        schema: LOG_SCHEMA_VERSION,
                        case_id: case.case_id.clone(),
                        trial,
                        model_id: cfg.model_id.clone(),
                        reason: e.to_string(),
                    }),
                };
                if tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Single writer: the only code touching the log file.
        // Once the run halts (abort streak or `stop_after`), in-flight
        // results are dropped as a kill would; resume reruns them.
        let mut stopped = false;
        for record in rx {
            if write_err.is_some() || stopped {
                continue;
            }
            let line = match serde_json::to_string(&record) {
                Ok(l) => l,
                Err(e) => {
                    write_err = Some(e.into());
                    halt.store(true, Ordering::SeqCst);
                    continue;
                }
            };
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                write_err = Some(e.into());
                halt.store(true, Ordering::SeqCst);
                continue;
            }
            new_records += 1;
            let (case_id, trial) = record.key();
            match &record {
                LogRecord::Outcome(e) => {
                    infra_streak = 0;
                    tracing::info!(case = case_id, trial, verdict = %e.outcome.final_verdict, iterations = e.outcome.iterations_used, "trial finished");
                }
                LogRecord::Abort(a) => {
                    infra_streak += 1;
                    tracing::warn!(case = case_id, trial, reason = %a.reason, "trial aborted");
                    if infra_streak >= cfg.abort_after_provider_errors.max(1) {
                        tracing::error!(
                            streak = infra_streak,
                            "too many infrastructure failures in a row; stopping"
                        );
                        stopped = true;
                        halt.store(true, Ordering::SeqCst);
                    }
                }
            }
            if opts.stop_after.is_some_and(|n| new_records >= n) {
                stopped = true;
                halt.store(true, Ordering::SeqCst);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    log.sync_all()?;

    let contents = read_log(&opts.log_path)?;
    let mut per_case: BTreeMap<String, Vec<ResultEnvelope>> = BTreeMap::new();
    let mut aborts = Vec::new();
    let mut usage = LlmCalls::default();
    let mut seen = BTreeSet::new();
    for r in contents.records {
        match r {
            LogRecord::Outcome(e)
                if e.model_id == cfg.model_id && e.max_iterations == cfg.max_iterations =>
            {
                if !seen.insert((e.case_id.clone(), e.trial)) {
                    continue;
                }
                usage.generator += e.outcome.llm_calls.generator;
                usage.reviewer += e.outcome.llm_calls.reviewer;
                usage.inspector += e.outcome.llm_calls.inspector;
                per_case.entry(e.case_id.clone()).or_default().push(e);
            }
            LogRecord::Abort(a) => aborts.push(a),
            LogRecord::Outcome(_) => {}
        }
    }
    for v in per_case.values_mut() {
        v.sort_by_key(|e| e.trial);
    }
    let complete =
        per_case.values().map(Vec::len).sum::<usize>() == cases.len() * cfg.trials as usize;
    Ok(BenchResult {
        config: cfg.clone(),
        per_case,
        aborts,
        started_at,
        finished_at: Utc::now(),
        usage,
        new_records,
        aborted: !complete,
    })
}
