#![allow(dead_code)]

use std::sync::Arc;

use chiselsmith_core::catalog::Catalog;
use chiselsmith_core::config::RunConfig;
use chiselsmith_core::domain::CaseSpec;
use chiselsmith_core::engine::{CaseOutcome, Engine, EngineEvent, FrozenClock, VecSink};
use chiselsmith_core::llm::{
    Gateway, PromptSet, RetryPolicy, RoleScript, ScriptedReply, ScriptedTransport,
};
use chiselsmith_core::toolchain_mock::ScriptedToolchain;

pub fn case(id: &str) -> CaseSpec {
    CaseSpec {
        case_id: id.into(),
        spec_text: "Implement an 8-bit adder. Inputs: a (8 bits), b (8 bits). Output: sum (9 bits) = a + b.".into(),
        testbench_src: "module tb; Adder dut(); endmodule".into(),
        reference_src: None,
        module_name: "Adder".into(),
        origin: "fixture".into(),
        excluded: None,
        seed: None,
    }
}

/// A generator reply: one fenced block with `body` inside the module.
pub fn code(body: &str) -> String {
    format!("Here is the module.\n\n```scala\nimport chisel3._\n\nclass Adder extends Module {{\n  val io = IO(new Bundle {{}})\n{body}\n}}\n```\n")
}

pub fn text(s: &str) -> ScriptedReply {
    ScriptedReply::Text(s.to_string())
}

pub const GOOD: &str = "  // adds";

pub fn plan(cause: &str) -> String {
    format!("ITEM 1\nLOCATION: Adder.scala\nCAUSE: {cause}\nSOLUTION: Rewrite the offending construct.\n")
}

pub const AFFIRM_0: &str =
    "IS_LOOP: yes\nMATCHED_ITERATION: 0\nCAUSE: w is never assigned on every path";

pub fn cfg(max_iterations: u32, escape: bool) -> RunConfig {
    let mut c = RunConfig::new("mock/scripted");
    c.max_iterations = max_iterations;
    c.escape_enabled = escape;
    c.trials = 3;
    c.k_values = vec![1, 3];
    c
}

pub struct Ran {
    pub outcome: CaseOutcome,
    pub transport: Arc<ScriptedTransport>,
    pub events: Vec<EngineEvent>,
}

pub fn run(case: &CaseSpec, cfg: &RunConfig, script: RoleScript) -> Ran {
    let transport = Arc::new(ScriptedTransport::new(script));
    let gateway = Gateway::new(transport.clone(), RetryPolicy::immediate(0));
    let catalog = Catalog::builtin();
    let toolchain = ScriptedToolchain::new(catalog.clone());
    let prompts = PromptSet::builtin();
    let sink = VecSink::default();
    let outcome = Engine {
        gateway: &gateway,
        compiler: &toolchain,
        simulator: &toolchain,
        catalog: &catalog,
        prompts: &prompts,
        cfg,
        clock: &FrozenClock,
        events: &sink,
    }
    .run_case(case)
    .expect("engine run");
    Ran {
        outcome,
        transport,
        events: sink.events(),
    }
}

/// The twelve compiler messages from the common-error table, as printed.
pub const TABLE_FEEDBACK: [(&str, &str); 12] = [
    ("A1", "Value sgnal is not a member. Did you mean signal?"),
    ("A2", "class chisel3.UInt cannot be cast to class chisel3.SInt."),
    ("A3", "Too many arguments. Found 2, expected 1 for method apply:(i:Int)"),
    ("B1", "A port rst with abstract reset type was unable to be inferred by InferResets."),
    ("B2", "Clock must be hardware, not a bare Chisel type. Perhaps you forgot to wrap it in Wire(_) or IO(_)?"),
    ("B3", "Reference w not fully initialized."),
    ("B4", "Connection between sink (... OneBdl) and source (... AnotherBdl) failed: .cSource Record missing field (c)."),
    ("B5", "found: chisel3.Bool\nrequired: chisel3.UInt"),
    ("B6", "Value asClock is not a member of chisel3.UInt."),
    ("B7", "-1 is out of bounds. (min 0, max 3)"),
    ("C1", "No implicit clock."),
    ("C2", "Detected combinational cycle in a FIRRTL module. Sample path: {a ← a_T_1 ← … ← a_T ← … ← a}."),
];
