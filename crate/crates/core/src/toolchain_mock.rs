//! Fake compiler and simulator driven by markers in the candidate source.
//!
//! Used by `--mock` runs and tests; no toolchain is needed. Markers are
//! comment lines:
//!
//! ```text
//! // @compile-error: <message>      diagnostic at this line; "\n" splits lines
//! // @compile-log: <raw line>       verbatim compiler output
//! // @compile-timeout
//! // @sim-fail: <id> IN=<..> EXP=<..> GOT=<..>
//! // @sim-total: <n>                number of test points (default 16)
//! // @sim-timeout
//! ```
//!
//! A candidate without compile markers "emits" a Verilog stub declaring the
//! module named by its `class X extends Module`; sim markers are carried
//! into that stub for the simulator to act on.

use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;

use crate::catalog::Catalog;
use crate::compile::{CompileResult, Compiler, ToolError};
use crate::domain::{Candidate, CaseSpec};
use crate::sim::{declared_modules, SimResult, Simulator, DEFAULT_MISMATCH_CAP};

pub const MOCK_SOURCE_PATH: &str = "/ws/src/main/scala/Candidate.scala";
const DEFAULT_TOTAL: u64 = 16;

fn class_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\bclass\s+([A-Za-z_]\w*)\b[^{\n]*\bextends\s+(?:Raw)?Module\b").unwrap()
    })
}

fn marker<'a>(line: &'a str, name: &str) -> Option<&'a str> {
    let rest = line.trim_start().strip_prefix("//")?.trim_start();
    let rest = rest.strip_prefix('@')?.strip_prefix(name)?;
    if rest.is_empty() {
        return Some("");
    }
    rest.strip_prefix(':').map(str::trim)
}

#[derive(Debug, Clone)]
pub struct ScriptedToolchain {
    catalog: Catalog,
    mismatch_cap: usize,
}

impl Default for ScriptedToolchain {
    fn default() -> Self {
        ScriptedToolchain::new(Catalog::builtin())
    }
}

impl ScriptedToolchain {
    pub fn new(catalog: Catalog) -> Self {
        ScriptedToolchain {
            catalog,
            mismatch_cap: DEFAULT_MISMATCH_CAP,
        }
    }

    pub fn with_mismatch_cap(mut self, cap: usize) -> Self {
        self.mismatch_cap = cap;
        self
    }

    pub fn compile_source(&self, src: &str, case: &CaseSpec) -> CompileResult {
        let mut log = String::new();
        for (idx, line) in src.lines().enumerate() {
            if marker(line, "compile-timeout").is_some() {
                return CompileResult::timeout("[info] elaborating...\n".into(), 0.0);
            }
            if let Some(msg) = marker(line, "compile-error") {
                let mut parts = msg.split("\\n");
                let first = parts.next().unwrap_or("");
                log.push_str(&format!(
                    "[error] {MOCK_SOURCE_PATH}:{}:5: {first}\n",
                    idx + 1
                ));
                for rest in parts {
                    log.push_str(&format!("[error] {rest}\n"));
                }
            } else if let Some(raw) = marker(line, "compile-log") {
                log.push_str(raw);
                log.push('\n');
            }
        }
        if !log.is_empty() {
            log.push_str("[error] Compilation failed\n");
            return CompileResult::failed(log, &self.catalog, 0.0);
        }

        let name = class_re()
            .captures(src)
            .map(|c| c[1].to_string())
            .unwrap_or_else(|| case.module_name.clone());
        let mut verilog = format!("module {name}(\n  input clock,\n  input reset\n);\n");
        for line in src.lines() {
            let t = line.trim_start();
            if t.starts_with("// @sim-") {
                verilog.push_str(t);
                verilog.push('\n');
            }
        }
        verilog.push_str("endmodule\n");
        CompileResult::ok(verilog, "[success] elaborated\n".into(), 0.0)
    }

    pub fn simulate_verilog(&self, verilog: &str, case: &CaseSpec) -> SimResult {
        if !declared_modules(verilog).contains(&case.module_name) {
            return SimResult::build_error(
                format!(
                    "testbench instantiates module `{}` but the emitted Verilog declares {:?}",
                    case.module_name,
                    declared_modules(verilog)
                ),
                0.0,
            );
        }
        let mut fails = Vec::new();
        let mut total = DEFAULT_TOTAL;
        for line in verilog.lines() {
            if marker(line, "sim-timeout").is_some() {
                return SimResult::timeout("simulation running...\n".into(), 0.0);
            }
            if let Some(f) = marker(line, "sim-fail") {
                fails.push(f.to_string());
            }
            if let Some(n) = marker(line, "sim-total").and_then(|n| n.parse().ok()) {
                total = n;
            }
        }
        let total = total.max(fails.len() as u64).max(1);
        let mut log = String::new();
        for f in &fails {
            log.push_str(&format!("CHECK {f} FAIL\n"));
        }
        for i in fails.len() as u64..total {
            log.push_str(&format!("CHECK p{i} IN=n/a EXP=ok GOT=ok PASS\n"));
        }
        let exit = if fails.is_empty() { 0 } else { 1 };
        SimResult::from_log(log, Some(exit), self.mismatch_cap, 0.0)
    }
}

impl Compiler for ScriptedToolchain {
    fn compile(
        &self,
        candidate: &Candidate,
        case: &CaseSpec,
        _timeout: Duration,
    ) -> Result<CompileResult, ToolError> {
        Ok(self.compile_source(&candidate.chisel_src, case))
    }
}

impl Simulator for ScriptedToolchain {
    fn simulate(
        &self,
        verilog: &str,
        case: &CaseSpec,
        _timeout: Duration,
    ) -> Result<SimResult, ToolError> {
        Ok(self.simulate_verilog(verilog, case))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::CompileStatus;
    use crate::sim::SimStatus;

    fn case() -> CaseSpec {
        CaseSpec {
            case_id: "c".into(),
            spec_text: "s".into(),
            testbench_src: "tb".into(),
            reference_src: None,
            module_name: "Adder".into(),
            origin: "t".into(),
            excluded: None,
            seed: None,
        }
    }

    #[test]
    fn compile_markers() {
        let tc = ScriptedToolchain::default();
        let r = tc.compile_source("class Adder extends Module {\n  // @compile-error: value sgnal is not a member of Bundle. Did you mean signal?\n}", &case());
        assert_eq!(r.status, CompileStatus::Failed);
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].catalog_class.as_deref(), Some("A1"));
        assert_eq!(r.entries[0].location.as_ref().unwrap().line, 2);

        let r = tc.compile_source("// @compile-timeout", &case());
        assert_eq!(r.status, CompileStatus::Timeout);

        let r = tc.compile_source(
            "class Adder extends Module {}\n// @sim-fail: 3 IN=a=1 EXP=2 GOT=3",
            &case(),
        );
        assert!(r.is_ok());
        let v = r.verilog_src.unwrap();
        assert!(v.contains("module Adder("));
        let s = tc.simulate_verilog(&v, &case());
        assert_eq!(s.status, SimStatus::Fail);
        assert_eq!((s.failed_count, s.total_count), (1, 16));
        assert_eq!(s.mismatches[0].actual, "3");
    }

    #[test]
    fn passing_and_misnamed_modules() {
        let tc = ScriptedToolchain::default();
        let ok = tc
            .compile_source("class Adder extends Module {}", &case())
            .verilog_src
            .unwrap();
        assert!(tc.simulate_verilog(&ok, &case()).passed());
        let wrong = tc
            .compile_source("class Adderr extends Module {}", &case())
            .verilog_src
            .unwrap();
        assert_eq!(
            tc.simulate_verilog(&wrong, &case()).status,
            SimStatus::BuildError
        );
    }
}
