//! Sample inputs for the hot-path benchmarks, sized like a long run.

use chiselsmith_core::catalog::Catalog;
use chiselsmith_core::diagnostics::{parse_diagnostics, render_diagnostics};
use chiselsmith_core::domain::{
    Candidate, CaseSpec, ErrorEntry, Feedback, IterationRecord, Provenance, RevisionPlan, Trace,
    Verdict,
};

/// Messages that hit a spread of catalog classes, plus one that hits none.
pub const MESSAGES: [&str; 6] = [
    "not found: value sgnal",
    "type mismatch;\n found   : chisel3.UInt\n required: chisel3.Bool",
    "Reference w is not fully initialized.",
    "No implicit clock.",
    "Too many arguments. Found 3, expected 2 for method apply",
    "something the catalog has never seen",
];

/// A compiler log with `n` located errors among sbt chatter.
pub fn compiler_log(n: usize) -> String {
    let mut log = String::from(
        "[info] welcome to sbt 1.9.7\n[info] compiling 1 Scala source to /ws/target\n",
    );
    for i in 0..n {
        let msg = MESSAGES[i % MESSAGES.len()];
        log.push_str(&format!(
            "[error] /ws/src/main/scala/Candidate.scala:{}:{}: {}\n",
            10 + i,
            3 + i % 40,
            msg.replace('\n', "\n[error] ")
        ));
        log.push_str("[error]   val x = io.a +& io.b\n[error]           ^\n");
    }
    log.push_str(&format!(
        "[error] {n} errors found\n[error] (Compile / compileIncremental) Compilation failed\n"
    ));
    log
}

pub fn entries(n: usize, catalog: &Catalog) -> Vec<ErrorEntry> {
    parse_diagnostics(&compiler_log(n), catalog)
}

pub fn case() -> CaseSpec {
    CaseSpec {
        case_id: "adder8".into(),
        spec_text: "Implement an 8-bit adder with carry out. ".repeat(20),
        testbench_src: "module tb; endmodule".into(),
        reference_src: None,
        module_name: "Adder8".into(),
        origin: "bench".into(),
        excluded: None,
        seed: None,
    }
}

/// A trace of `len` failed syntax iterations with `code_lines` of source each.
pub fn trace(len: u32, code_lines: usize, catalog: &Catalog) -> Trace {
    let mut t = Trace::new();
    for i in 0..len {
        let errs = entries(3, catalog);
        let feedback =
            Feedback::syntax(errs.clone(), render_diagnostics(&errs)).expect("non-empty");
        let record = IterationRecord {
            candidate: Candidate {
                iteration: i,
                attempt: i,
                chisel_src: format!(
                    "class Adder8 extends Module {{\n{}}}\n",
                    "  io.sum := io.a +& io.b\n".repeat(code_lines)
                ),
                verilog_src: None,
                provenance: if i == 0 {
                    Provenance::InitialGeneration
                } else {
                    Provenance::Revision
                },
            },
            plan: Some(RevisionPlan::from_feedback(&feedback, String::new())),
            feedback: Some(feedback),
            verdict: Verdict::SyntaxError,
        };
        t = t.append_record(record).expect("consecutive iterations");
    }
    t
}
