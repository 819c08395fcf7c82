//! Verilog simulation of a DUT against a case testbench.
//!
//! The simulator is driven through two configurable command lines, a build
//! step and a run step (for Icarus: `iverilog ... {sources}` then
//! `vvp sim.vvp +seed={seed}`). Logs are read in two dialects:
//!
//! - self-checking lines `CHECK <id> IN=<...> EXP=<...> GOT=<...> <PASS|FAIL>`
//! - count summaries such as `Mismatches: 3 in 100 samples`

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use tempfile::TempDir;
use thiserror::Error;

use crate::compile::ToolError;
use crate::domain::{CaseSpec, MismatchEntry};
use crate::process::{find_program, run_with_deadline};

pub const DEFAULT_MISMATCH_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimStatus {
    Pass,
    Fail,
    Timeout,
    BuildError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub status: SimStatus,
    pub mismatches: Vec<MismatchEntry>,
    pub failed_count: u64,
    pub total_count: u64,
    pub raw_log: String,
    pub wall_time_s: f64,
}

impl SimResult {
    pub fn passed(&self) -> bool {
        self.status == SimStatus::Pass
    }

    pub fn build_error(message: String, wall_time_s: f64) -> Self {
        SimResult {
            status: SimStatus::BuildError,
            mismatches: Vec::new(),
            failed_count: 0,
            total_count: 0,
            raw_log: message,
            wall_time_s,
        }
    }

    pub fn timeout(raw_log: String, wall_time_s: f64) -> Self {
        SimResult {
            status: SimStatus::Timeout,
            mismatches: Vec::new(),
            failed_count: 0,
            total_count: 0,
            raw_log,
            wall_time_s,
        }
    }

    /// Classifies a finished run log.
    pub fn from_log(raw_log: String, exit_code: Option<i32>, cap: usize, wall_time_s: f64) -> Self {
        let report = parse_sim_log(&raw_log, cap);
        let (status, mismatches, failed, total) = if report.failed_count > 0 {
            (
                SimStatus::Fail,
                report.mismatches,
                report.failed_count,
                report.total_count,
            )
        } else if report.recognized && exit_code == Some(0) {
            (SimStatus::Pass, Vec::new(), 0, report.total_count)
        } else {
            // No evidence of a pass: either the log was unreadable or the
            // simulator itself failed.
            let note = match exit_code {
                Some(0) => "no recognizable check output".to_string(),
                Some(c) => format!("simulator exited with code {c}"),
                None => "simulator terminated by signal".to_string(),
            };
            (
                SimStatus::Fail,
                vec![MismatchEntry {
                    testpoint_id: "unparsed".into(),
                    stimulus: "unavailable".into(),
                    expected: "a passing run".into(),
                    actual: note,
                    time: None,
                }],
                1,
                report.total_count.max(1),
            )
        };
        SimResult {
            status,
            mismatches,
            failed_count: failed,
            total_count: total,
            raw_log,
            wall_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MismatchReport {
    pub mismatches: Vec<MismatchEntry>,
    pub failed_count: u64,
    pub total_count: u64,
    /// At least one check line or summary was found.
    pub recognized: bool,
}

struct Patterns {
    check: Regex,
    summary: Regex,
    per_output: Regex,
    rtllm_fail: Regex,
    rtllm_pass: Regex,
    module_decl: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let re = |s: &str| Regex::new(s).expect("sim pattern compiles");
        Patterns {
            check: re(r"^\s*CHECK\s+(\S+)\s+IN=(.*?)\s+EXP=(.*?)\s+GOT=(.*?)\s+(PASS|FAIL)\s*$"),
            summary: re(r"(?i)Mismatches:\s*(\d+)\s+in\s+(\d+)\s+samples"),
            per_output: re(
                r"(?i)Output '([^']+)' has (\d+) mismatch(?:es)?\.\s*First mismatch occurred at time (\d+)",
            ),
            rtllm_fail: re(r"(?i)Test completed with\s+(\d+)\s*/\s*(\d+)\s+failures"),
            rtllm_pass: re(r"(?i)Your Design Passed"),
            module_decl: re(r"(?m)^\s*module\s+([A-Za-z_][\w$]*)"),
        }
    })
}

fn aggregate(failed: u64, total: u64) -> MismatchEntry {
    MismatchEntry {
        testpoint_id: "aggregate".into(),
        stimulus: "unavailable".into(),
        expected: format!("0 of {total} samples mismatching"),
        actual: format!("{failed} of {total} samples mismatching"),
        time: None,
    }
}

/// Extracts failed test points (capped) with exact counts.
pub fn parse_sim_log(raw_log: &str, cap: usize) -> MismatchReport {
    let p = patterns();
    let mut report = MismatchReport::default();

    let mut checks = 0u64;
    for line in raw_log.lines() {
        if let Some(c) = p.check.captures(line) {
            checks += 1;
            if &c[5] == "FAIL" {
                report.failed_count += 1;
                if report.mismatches.len() < cap {
                    report.mismatches.push(MismatchEntry {
                        testpoint_id: c[1].to_string(),
                        stimulus: c[2].to_string(),
                        expected: c[3].to_string(),
                        actual: c[4].to_string(),
                        time: None,
                    });
                }
            }
        }
    }
    if checks > 0 {
        report.total_count = checks;
        report.recognized = true;
        return report;
    }

    let summary = p
        .summary
        .captures_iter(raw_log)
        .last()
        .or_else(|| p.rtllm_fail.captures_iter(raw_log).last());
    if let Some(c) = summary {
        let failed: u64 = c[1].parse().unwrap_or(0);
        let total: u64 = c[2].parse().unwrap_or(0);
        report.recognized = true;
        report.failed_count = failed;
        report.total_count = total.max(failed);
        if failed > 0 {
            let per_output: Vec<MismatchEntry> = p
                .per_output
                .captures_iter(raw_log)
                .map(|o| MismatchEntry {
                    testpoint_id: o[1].to_string(),
                    stimulus: "unavailable".into(),
                    expected: "0 mismatches".into(),
                    actual: format!("{} mismatches", &o[2]),
                    time: o[3].parse().ok(),
                })
                .filter(|m| m.actual != "0 mismatches")
                .take(cap)
                .collect();
            report.mismatches = if per_output.is_empty() {
                vec![aggregate(failed, report.total_count)]
            } else {
                per_output
            };
            report.mismatches.truncate(cap.max(1));
        }
        return report;
    }
    if p.rtllm_pass.is_match(raw_log) {
        report.recognized = true;
    }
    report
}

pub fn parse_mismatches(raw_log: &str, cap: usize) -> Vec<MismatchEntry> {
    parse_sim_log(raw_log, cap).mismatches
}

pub fn declared_modules(verilog: &str) -> Vec<String> {
    patterns()
        .module_decl
        .captures_iter(verilog)
        .map(|c| c[1].to_string())
        .collect()
}

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("{0}")]
    Interface(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub struct SimWorkspace {
    pub dir: TempDir,
    /// Source files relative to `dir`, DUT first.
    pub sources: Vec<PathBuf>,
}

pub const DUT_FILE: &str = "dut.v";
pub const TB_FILE: &str = "tb.v";
pub const REF_FILE: &str = "ref.v";

/// Lays out DUT, testbench and (optional) reference model in a fresh
/// directory after checking the DUT declares the expected top module.
pub fn assemble_sim(
    verilog_src: &str,
    case: &CaseSpec,
    work_root: &Path,
) -> Result<SimWorkspace, AssembleError> {
    if verilog_src.trim().is_empty() {
        return Err(AssembleError::Interface("emitted Verilog is empty".into()));
    }
    let declared = declared_modules(verilog_src);
    if !declared.iter().any(|m| m == &case.module_name) {
        return Err(AssembleError::Interface(format!(
            "the testbench instantiates module `{}` but the generated design declares {}; rename the top-level module to `{}`",
            case.module_name,
            if declared.is_empty() {
                "no modules".to_string()
            } else {
                declared
                    .iter()
                    .map(|m| format!("`{m}`"))
                    .collect::<Vec<_>>()
                    .join(", ")
            },
            case.module_name
        )));
    }
    fs::create_dir_all(work_root)?;
    let dir = tempfile::Builder::new()
        .prefix("sim-")
        .tempdir_in(work_root)?;
    let mut sources = vec![PathBuf::from(DUT_FILE), PathBuf::from(TB_FILE)];
    fs::write(dir.path().join(DUT_FILE), verilog_src)?;
    fs::write(dir.path().join(TB_FILE), &case.testbench_src)?;
    if let Some(reference) = &case.reference_src {
        fs::write(dir.path().join(REF_FILE), reference)?;
        sources.push(PathBuf::from(REF_FILE));
    }
    Ok(SimWorkspace { dir, sources })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    /// Build step; an argument equal to `{sources}` expands to every source file.
    pub compile_command: Vec<String>,
    pub run_command: Vec<String>,
    /// Stimulus seed for cases whose manifest sets none; taken from
    /// `[run] seed`.
    #[serde(skip)]
    pub default_seed: u64,
    #[serde(default = "default_cap")]
    pub mismatch_cap: usize,
    #[serde(default)]
    pub work_root: Option<PathBuf>,
}

fn default_cap() -> usize {
    DEFAULT_MISMATCH_CAP
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            compile_command: [
                "iverilog",
                "-g2012",
                "-o",
                "sim.vvp",
                "-DSEED={seed}",
                "{sources}",
            ]
            .map(String::from)
            .to_vec(),
            run_command: ["vvp", "-n", "sim.vvp", "+seed={seed}"]
                .map(String::from)
                .to_vec(),
            default_seed: 0,
            mismatch_cap: DEFAULT_MISMATCH_CAP,
            work_root: None,
        }
    }
}

pub trait Simulator: Send + Sync {
    fn simulate(
        &self,
        verilog_src: &str,
        case: &CaseSpec,
        timeout: Duration,
    ) -> Result<SimResult, ToolError>;
}

/// Event-driven simulator invoked as subprocesses.
#[derive(Debug, Clone)]
pub struct CommandSimulator {
    cfg: SimulatorConfig,
}

impl CommandSimulator {
    pub fn new(cfg: SimulatorConfig) -> Result<Self, ToolError> {
        for cmd in [&cfg.compile_command, &cfg.run_command] {
            let program = cmd
                .first()
                .ok_or_else(|| ToolError::BadContract("empty simulator command".into()))?;
            if find_program(program).is_none() {
                return Err(ToolError::ToolchainMissing(program.clone()));
            }
        }
        Ok(CommandSimulator { cfg })
    }

    fn expand(&self, cmd: &[String], sources: &[PathBuf], seed: u64) -> Vec<String> {
        let mut argv = Vec::new();
        for arg in cmd {
            if arg == "{sources}" {
                argv.extend(sources.iter().map(|s| s.display().to_string()));
            } else {
                argv.push(arg.replace("{seed}", &seed.to_string()));
            }
        }
        argv
    }

    /// Builds and runs an assembled workspace under one overall deadline.
    pub fn simulate_workspace(
        &self,
        ws: &SimWorkspace,
        seed: u64,
        timeout: Duration,
    ) -> Result<SimResult, ToolError> {
        let build = self.expand(&self.cfg.compile_command, &ws.sources, seed);
        let out = run_with_deadline(&build, ws.dir.path(), &[], timeout)?;
        let mut elapsed = out.wall_time;
        if out.timed_out {
            return Ok(SimResult::timeout(out.combined(), elapsed.as_secs_f64()));
        }
        if !out.success() {
            return Ok(SimResult::build_error(
                out.combined(),
                elapsed.as_secs_f64(),
            ));
        }
        let remaining = timeout.saturating_sub(elapsed);
        let run = self.expand(&self.cfg.run_command, &ws.sources, seed);
        let out = run_with_deadline(&run, ws.dir.path(), &[], remaining)?;
        elapsed += out.wall_time;
        if out.timed_out {
            return Ok(SimResult::timeout(out.combined(), elapsed.as_secs_f64()));
        }
        Ok(SimResult::from_log(
            out.combined(),
            out.exit_code,
            self.cfg.mismatch_cap,
            elapsed.as_secs_f64(),
        ))
    }
}

impl Simulator for CommandSimulator {
    fn simulate(
        &self,
        verilog_src: &str,
        case: &CaseSpec,
        timeout: Duration,
    ) -> Result<SimResult, ToolError> {
        let root = self
            .cfg
            .work_root
            .clone()
            .unwrap_or_else(std::env::temp_dir);
        let ws = match assemble_sim(verilog_src, case, &root) {
            Ok(ws) => ws,
            Err(AssembleError::Interface(msg)) => return Ok(SimResult::build_error(msg, 0.0)),
            Err(AssembleError::Io(e)) => return Err(ToolError::Io(e)),
        };
        let seed = case.seed.unwrap_or(self.cfg.default_seed);
        self.simulate_workspace(&ws, seed, timeout)
    }
}
