//! Chisel generation with compiler- and simulator-driven repair.
//!
//! A Generator model writes a Chisel module from a specification. The
//! candidate is compiled to Verilog and simulated against a testbench; any
//! failure becomes structured feedback that a Reviewer model turns into a
//! revision plan. An Inspector model watches for repair loops that make no
//! progress and, when it confirms one, the looping iterations are erased
//! from the trace and the plan is redone from the last good point.

pub mod catalog;
pub mod compile;
pub mod config;
pub mod diagnostics;
pub mod domain;
pub mod engine;
pub mod harness;
pub mod llm;
pub mod process;
pub mod setup;
pub mod sim;
pub mod toolchain_mock;

pub use catalog::{Catalog, CatalogEntry, CatalogError};
pub use compile::{
    CompileResult, CompileStatus, Compiler, ScaffoldCompiler, ScaffoldContract, ToolError,
};
pub use config::{RunConfig, Settings};
pub use diagnostics::{parse_diagnostics, render_diagnostics};
pub use domain::*;
pub use engine::{build_feedback, erase_loop, CaseOutcome, Engine, LoopSpan};
pub use setup::{build_runner, Backend, SetupError};
pub use sim::{parse_mismatches, CommandSimulator, SimResult, SimStatus, Simulator};
