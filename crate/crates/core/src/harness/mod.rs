//! Benchmark suites: loading, running many trials, and reporting.

mod cases;
mod report;
mod run;

pub use cases::{
    load_case, load_cases, runnable, LoadError, Manifest, MANIFEST_FILE, REF_FILE, SPEC_FILE,
    TB_FILE,
};
pub use report::{
    error_mix_by_iteration, pass_at_k, pass_at_k_table, success_vs_iterations, write_error_mix_csv,
    write_pass_at_k_csv, write_success_curve_csv, CurvePoint, MixRow, PassAtKError, PassAtKRow,
};
pub use run::{
    read_log, run_bench, AbortMarker, BenchError, BenchOptions, BenchResult, EngineRunner,
    GatewayFactory, LogContents, LogRecord, ResultEnvelope, TrialRunner, LOG_SCHEMA_VERSION,
};
