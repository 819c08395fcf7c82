//! `chiselsmith` command line.
//!
//! Exit codes: 0 success, 1 the model failed to produce a passing design,
//! 2 infrastructure or usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chiselsmith_core::compile::ScaffoldCompiler;
use chiselsmith_core::engine::{EventSink, JsonlSink};
use chiselsmith_core::harness::{
    error_mix_by_iteration, load_case, load_cases, pass_at_k_table, read_log, run_bench, runnable,
    success_vs_iterations, write_error_mix_csv, write_pass_at_k_csv, write_success_curve_csv,
    BenchOptions, BenchResult, CurvePoint, LogRecord, MixRow, PassAtKRow, ResultEnvelope,
    TrialRunner,
};
use chiselsmith_core::llm::{
    AgentRole, ChatMessage, ChatRequest, Gateway, HttpTransport, RetryPolicy,
};
use chiselsmith_core::setup::{build_runner, load_catalog, load_prompts, Backend, SetupError};
use chiselsmith_core::sim::CommandSimulator;
use chiselsmith_core::{CaseOutcome, RunConfig, Settings, Verdict};
use clap::{Args, Parser, Subcommand};

const EXIT_MODEL_FAILURE: u8 = 1;
const EXIT_INFRA: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "chiselsmith",
    version,
    about = "Generate Chisel modules with compiler- and simulator-driven repair",
    after_help = "Exit codes: 0 success, 1 model failure, 2 infrastructure or usage error.\nAPI keys are read from the environment variable named by [provider] api_key_env."
)]
struct Cli {
    /// Log progress to stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the repair loop once on a single case directory.
    Generate(GenerateArgs),
    /// Run every case of a suite for several trials and log the outcomes.
    Bench(BenchArgs),
    /// Summarize a results log as Pass@k, success-vs-iterations and error-mix tables.
    Report(ReportArgs),
    /// Check the scaffold, simulator and provider before a long run.
    Doctor(DoctorArgs),
}

#[derive(Debug, Args)]
struct RunFlags {
    /// Config file; optional with --mock.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replay replies from a playlist file with the built-in fake toolchain.
    /// Needs no network and no toolchain.
    #[arg(long, value_name = "PLAYLIST")]
    mock: Option<PathBuf>,
    /// Revisions after the initial candidate (0 = zero-shot).
    #[arg(long = "max-iters")]
    max_iters: Option<u32>,
    /// Stimulus seed for cases that do not set one.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Case directory holding spec.md, tb.v and manifest.toml.
    #[arg(long = "case")]
    case_dir: PathBuf,
    /// Where to write the final source, Verilog and trace.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Suite root with one directory per case.
    #[arg(long)]
    suite: PathBuf,
    /// Output directory; the results log is `results.jsonl` inside it.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    trials: Option<u32>,
    /// k values for Pass@k, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<u32>>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Continue an existing results log instead of refusing it.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Results log written by `bench`.
    log: PathBuf,
    /// Also write pass_at_k.csv, success_curve.csv and error_mix.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<u32>,
}

#[derive(Debug, Args)]
struct DoctorArgs {
    #[arg(long)]
    config: PathBuf,
    /// Also send one tiny request to the provider.
    #[arg(long)]
    ping: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Report(a) => cmd_report(a),
        Command::Doctor(a) => cmd_doctor(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INFRA)
        }
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

/// Config file plus flag overrides. Without a file only mock runs are allowed.
fn settings_for(flags: &RunFlags) -> Result<(Settings, Backend)> {
    let mut settings = match &flags.config {
        Some(p) => Settings::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None if flags.mock.is_some() => Settings {
            run: RunConfig::new("mock"),
            provider: None,
            toolchain: None,
            simulator: None,
            paths: Default::default(),
        },
        None => bail!("--config is required unless --mock is given"),
    };
    if let Some(n) = flags.max_iters {
        settings.run.max_iterations = n;
    }
    if let Some(s) = flags.seed {
        settings.run.seed = s;
    }
    let backend = match &flags.mock {
        Some(p) => Backend::mock_from(p)?,
        None => Backend::Live,
    };
    Ok((settings, backend))
}

fn runner(
    settings: &Settings,
    backend: Backend,
    events: Arc<dyn EventSink>,
) -> Result<Box<dyn TrialRunner>> {
    match build_runner(settings, backend, events) {
        Ok(r) => Ok(Box::new(r)),
        Err(SetupError::Provider(e)) => Err(anyhow::Error::new(e).context("provider unavailable")),
        Err(SetupError::Tool(e)) => Err(anyhow::Error::new(e).context("toolchain unavailable")),
        Err(e) => Err(e.into()),
    }
}

fn exit_for(verdict: Verdict) -> u8 {
    match verdict {
        Verdict::Success => 0,
        Verdict::SyntaxError | Verdict::FunctionalError | Verdict::Exhausted => EXIT_MODEL_FAILURE,
        Verdict::ToolTimeout | Verdict::ProviderError => EXIT_INFRA,
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<u8> {
    let case = load_case(&a.case_dir).context("malformed case")?;
    if let Some(x) = &case.excluded {
        bail!("case {} is excluded: {}", case.case_id, x.reason);
    }
    let (settings, backend) = settings_for(&a.run)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let events = Arc::new(JsonlSink::append(&a.out.join("events.jsonl"))?);
    let runner = runner(&settings, backend, events)?;
    let outcome = runner.run_trial(&case, 0)?;
    write_artifacts(&a.out, &case.module_name, &outcome)?;

    let used = outcome.iterations_used;
    match outcome.final_verdict {
        Verdict::Success => println!("{}: success after {used} revision(s)", case.case_id),
        v => {
            let last = outcome
                .last_error
                .map(|e| format!(", last error {e}"))
                .unwrap_or_default();
            let detail = outcome
                .detail
                .as_deref()
                .map(|d| format!(": {d}"))
                .unwrap_or_default();
            println!(
                "{}: {v} after {used} revision(s){last}{detail}",
                case.case_id
            );
        }
    }
    println!("artifacts in {}", a.out.display());
    Ok(exit_for(outcome.final_verdict))
}

fn write_artifacts(out: &Path, module: &str, outcome: &CaseOutcome) -> Result<()> {
    if let Some(last) = outcome.trace.last() {
        std::fs::write(
            out.join(format!("{module}.scala")),
            &last.candidate.chisel_src,
        )?;
        if let Some(v) = &last.candidate.verilog_src {
            std::fs::write(out.join(format!("{module}.v")), v)?;
        }
    }
    std::fs::write(
        out.join("trace.json"),
        serde_json::to_string_pretty(&outcome.trace)?,
    )?;
    std::fs::write(
        out.join("outcome.json"),
        serde_json::to_string_pretty(outcome)?,
    )?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<u8> {
    let (mut settings, backend) = settings_for(&a.run)?;
    if let Some(t) = a.trials {
        settings.run.trials = t;
    }
    if let Some(k) = a.k {
        settings.run.k_values = k;
    }
    if let Some(p) = a.parallelism {
        settings.run.parallelism = p;
    }
    settings.validate().context("invalid run settings")?;
    let cases = load_cases(&a.suite).context("loading suite")?;
    let skipped = cases.len() - runnable(&cases).len();
    if skipped > 0 {
        eprintln!("note: {skipped} excluded case(s) skipped");
    }

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let log_path = a.out.join("results.jsonl");
    if !a.resume && log_path.exists() && std::fs::metadata(&log_path)?.len() > 0 {
        bail!(
            "results log {} already exists; pass --resume to continue it",
            log_path.display()
        );
    }
    tracing::info!(
        cases = cases.len() - skipped,
        trials = settings.run.trials,
        max_iterations = settings.run.max_iterations,
        "starting bench"
    );
    let events = Arc::new(JsonlSink::append(&a.out.join("events.jsonl"))?);
    let runner = runner(&settings, backend, events)?;
    let result = run_bench(
        &cases,
        &settings.run,
        runner.as_ref(),
        &BenchOptions {
            log_path: log_path.clone(),
            resume: a.resume,
            ..Default::default()
        },
    )?;
    print_bench_summary(&result, &settings.run);
    write_reports(&a.out, &result.outcomes(), &settings.run.k_values)?;
    println!("results log: {}", log_path.display());
    Ok(if result.aborted { EXIT_INFRA } else { 0 })
}

fn print_bench_summary(r: &BenchResult, cfg: &RunConfig) {
    let outcomes = r.outcomes();
    let solved = outcomes
        .iter()
        .filter(|o| o.outcome.final_verdict == Verdict::Success)
        .count();
    println!(
        "{} trial(s) logged ({} new), {} solved, {} aborted by infrastructure",
        outcomes.len(),
        r.new_records,
        solved,
        r.aborts.len()
    );
    println!(
        "LLM calls: generator {}, reviewer {}, inspector {}",
        r.usage.generator, r.usage.reviewer, r.usage.inspector
    );
    if r.aborted {
        println!("run stopped early; rerun with --resume to finish");
    }
    print_pass_at_k(&pass_at_k_table(&outcomes, &cfg.k_values));
}

fn cmd_report(a: ReportArgs) -> Result<u8> {
    if a.k.contains(&0) {
        bail!("k values must be at least 1");
    }
    let contents = read_log(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
    if contents.skipped > 0 {
        eprintln!(
            "warning: skipped {} unreadable line(s) in {}",
            contents.skipped,
            a.log.display()
        );
    }
    let mut outcomes: Vec<ResultEnvelope> = Vec::new();
    let mut aborts = 0;
    for r in contents.records {
        match r {
            LogRecord::Outcome(e) => {
                let dup = outcomes.iter().any(|o| {
                    o.case_id == e.case_id
                        && o.trial == e.trial
                        && o.model_id == e.model_id
                        && o.max_iterations == e.max_iterations
                });
                if !dup {
                    outcomes.push(e);
                }
            }
            LogRecord::Abort(_) => aborts += 1,
        }
    }
    if aborts > 0 {
        eprintln!("note: {aborts} aborted trial(s) excluded");
    }
    let table = pass_at_k_table(&outcomes, &a.k);
    let curve = success_vs_iterations(&outcomes, &a.k);
    let mix = error_mix_by_iteration(&outcomes);
    print_pass_at_k(&table);
    print_curve(&curve);
    print_mix(&mix);
    if let Some(out) = &a.out {
        write_reports(out, &outcomes, &a.k)?;
        println!("CSV files written to {}", out.display());
    }
    Ok(0)
}

fn write_reports(out: &Path, outcomes: &[ResultEnvelope], k: &[u32]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_pass_at_k_csv(&out.join("pass_at_k.csv"), &pass_at_k_table(outcomes, k))?;
    write_success_curve_csv(
        &out.join("success_curve.csv"),
        &success_vs_iterations(outcomes, k),
    )?;
    write_error_mix_csv(
        &out.join("error_mix.csv"),
        &error_mix_by_iteration(outcomes),
    )?;
    Ok(())
}

fn print_pass_at_k(rows: &[PassAtKRow]) {
    println!("\nPass@k");
    if rows.is_empty() {
        println!("  (no outcomes)");
    }
    for r in rows {
        let values: Vec<String> = r
            .values
            .iter()
            .map(|(k, v, _)| match v {
                Some(v) => format!("Pass@{k} {:.2}%", v * 100.0),
                None => format!("Pass@{k} n/a"),
            })
            .collect();
        println!(
            "  {} n={} escape={} cases={} trials={}: {}",
            r.model_id,
            r.max_iterations,
            if r.escape_enabled { "on" } else { "off" },
            r.cases,
            r.trials,
            values.join(", ")
        );
    }
}

fn print_curve(points: &[CurvePoint]) {
    println!("\nSuccess vs. iteration cap");
    if points.is_empty() {
        println!("  (no outcomes)");
    }
    let mut line = String::new();
    let mut last: Option<(&str, u32)> = None;
    for p in points {
        if last != Some((p.model_id.as_str(), p.k)) {
            if !line.is_empty() {
                println!("{line}");
            }
            line = format!("  {} Pass@{} by cap:", p.model_id, p.k);
            last = Some((p.model_id.as_str(), p.k));
        }
        line.push_str(&format!(" {}:{:.2}%", p.cap, p.pass_at_k * 100.0));
    }
    if !line.is_empty() {
        println!("{line}");
    }
}

fn print_mix(rows: &[MixRow]) {
    println!("\nVerdict mix by attempt");
    if rows.is_empty() {
        println!("  (no outcomes)");
        return;
    }
    println!("  attempt  active  syntax  functional  success  exhausted");
    for r in rows {
        println!(
            "  {:>7}  {:>6}  {:>5.1}%  {:>9.1}%  {:>6.1}%  {:>8.1}%",
            r.iteration,
            r.active,
            r.syntax * 100.0,
            r.functional * 100.0,
            r.success * 100.0,
            r.exhausted * 100.0
        );
    }
}

fn cmd_doctor(a: DoctorArgs) -> Result<u8> {
    let settings = Settings::load(&a.config)
        .with_context(|| format!("loading config {}", a.config.display()))?;
    let mut failures = 0;
    let mut check = |name: &str, r: Result<String>| match r {
        Ok(detail) => println!("ok    {name}: {detail}"),
        Err(e) => {
            failures += 1;
            println!("FAIL  {name}: {e:#}");
        }
    };

    check("config", Ok(format!("model {}", settings.run.model_id)));
    check(
        "catalog",
        load_catalog(&settings)
            .map(|c| format!("{} error classes", c.len()))
            .map_err(Into::into),
    );
    check(
        "templates",
        load_prompts(&settings)
            .map(|_| "loaded".to_string())
            .map_err(Into::into),
    );
    check(
        "scaffold",
        match &settings.toolchain {
            None => Err(anyhow::anyhow!("no [toolchain] section")),
            Some(t) => ScaffoldCompiler::new(t, load_catalog(&settings)?)
                .map(|c| {
                    let pins: Vec<String> = c
                        .contract()
                        .pinned_versions
                        .iter()
                        .map(|(k, v)| format!("{k} {v}"))
                        .collect();
                    format!("{} (pins {})", t.scaffold.display(), pins.join(", "))
                })
                .map_err(Into::into),
        },
    );
    check(
        "simulator",
        CommandSimulator::new(settings.simulator.clone().unwrap_or_default())
            .map(|_| "programs found".to_string())
            .map_err(Into::into),
    );
    let provider = settings.effective_provider();
    check(
        "provider",
        match &provider {
            None => Err(anyhow::anyhow!("no [provider] section")),
            Some(p) => HttpTransport::from_env(p.clone())
                .map(|_| {
                    format!(
                        "{} via {} (key from {})",
                        p.model_id, p.endpoint, p.api_key_env
                    )
                })
                .map_err(Into::into),
        },
    );
    if a.ping {
        check(
            "provider ping",
            match provider {
                None => Err(anyhow::anyhow!("no [provider] section")),
                Some(p) => ping(p),
            },
        );
    }
    Ok(if failures == 0 { 0 } else { EXIT_INFRA })
}

fn ping(cfg: chiselsmith_core::llm::ProviderConfig) -> Result<String> {
    let policy = RetryPolicy::from_config(&cfg);
    let gateway = Gateway::new(Arc::new(HttpTransport::from_env(cfg)?), policy);
    let reply = gateway.complete(&ChatRequest {
        role: AgentRole::Generator,
        messages: vec![
            ChatMessage::system("Reply with the single word: ready"),
            ChatMessage::user("ready?"),
        ],
    })?;
    Ok(format!(
        "replied {:?}",
        reply.chars().take(40).collect::<String>()
    ))
}
