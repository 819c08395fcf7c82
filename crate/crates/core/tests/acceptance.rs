//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Uses a plain `main` so the lines are shown
//! without `--nocapture`.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chiselsmith_core::catalog::Catalog;
use chiselsmith_core::compile::{Compiler, ScaffoldCompiler};
use chiselsmith_core::config::Settings;
use chiselsmith_core::diagnostics::parse_diagnostics;
use chiselsmith_core::domain::{location_signature, CaseSpec, ErrorEntry, Verdict};
use chiselsmith_core::domain::{Candidate, Provenance};
use chiselsmith_core::engine::{EventKind, FrozenClock, NullSink};
use chiselsmith_core::harness::{
    error_mix_by_iteration, load_cases, pass_at_k, pass_at_k_table, read_log, run_bench, runnable,
    success_vs_iterations, BenchOptions, EngineRunner, LogRecord,
};
use chiselsmith_core::llm::{
    AgentRole, Gateway, PromptSet, RetryPolicy, RoleScript, ScriptedTransport,
};
use chiselsmith_core::setup::{build_runner, Backend};
use chiselsmith_core::sim::{CommandSimulator, Simulator};
use chiselsmith_core::toolchain_mock::ScriptedToolchain;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use common::*;

const TOOLCHAIN_ENV: &str = "CHISELSMITH_TOOLCHAIN_CONFIG";
const LIVE_ENV: &str = "CHISELSMITH_LIVE_CONFIG";

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

type Criterion = (u32, &'static str, Duration, fn() -> String);

fn main() {
    let criteria: [Criterion; 6] = [
        (
            1,
            "Pass@k matches exact and Monte-Carlo oracles",
            Duration::from_secs(5),
            pass_at_k_oracles,
        ),
        (
            2,
            "error-table diagnostics classify 12/12",
            Duration::from_secs(1),
            error_table_golden,
        ),
        (
            3,
            "three-stage reflection script",
            Duration::from_secs(1),
            three_stage_pipeline,
        ),
        (
            4,
            "escape differential on a repeated B3 error",
            Duration::from_secs(1),
            escape_differential,
        ),
        (
            5,
            "mock bench, resume, curve and error mix",
            Duration::from_secs(10),
            harness_behaviour,
        ),
        (
            6,
            "baseline mode is a single Generator call",
            Duration::from_secs(1),
            baseline_mode,
        ),
    ];

    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, limit, check) in criteria {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let elapsed = t.elapsed();
        match result {
            Ok(detail) if elapsed <= limit => {
                println!(
                    "PASS criterion {n}: {name} ({detail}; {:.3}s)",
                    elapsed.as_secs_f64()
                )
            }
            Ok(_) => {
                failed += 1;
                println!(
                    "FAIL criterion {n}: {name} (took {:.3}s, limit {:?})",
                    elapsed.as_secs_f64(),
                    limit
                );
            }
            Err(p) => {
                failed += 1;
                println!("FAIL criterion {n}: {name}: {}", panic_text(p));
            }
        }
    }
    type Gated = (u32, &'static str, &'static str, fn(&Path) -> String);
    let gated: [Gated; 2] = [
        (
            7,
            "real toolchain compiles, simulates and classifies",
            TOOLCHAIN_ENV,
            real_toolchain,
        ),
        (8, "live smoke on a 5-case mini-suite", LIVE_ENV, live_smoke),
    ];
    for (n, name, var, check) in gated {
        let Some(config) = std::env::var_os(var) else {
            println!("SKIP criterion {n}: {name} (set {var} to a config file to run)");
            continue;
        };
        let t = Instant::now();
        match catch_unwind(AssertUnwindSafe(|| check(Path::new(&config)))) {
            Ok(detail) => println!(
                "PASS criterion {n}: {name} ({detail}; {:.1}s)",
                t.elapsed().as_secs_f64()
            ),
            Err(p) => {
                failed += 1;
                println!("FAIL criterion {n}: {name}: {}", panic_text(p));
            }
        }
    }
    let _ = std::panic::take_hook();
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn binom(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

fn pass_at_k_oracles() -> String {
    const N: u32 = 10;
    const DRAWS: usize = 1_000_000;
    let ks = [1u32, 5, 10];

    // Shared permutations: successes are items 0..c, so the first k draws
    // contain one iff the minimum of the first k items is below c.
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut perm: Vec<u32> = (0..N).collect();
    let mut hits = [[0u64; N as usize + 1]; 3];
    for _ in 0..DRAWS {
        perm.shuffle(&mut rng);
        for (ki, &k) in ks.iter().enumerate() {
            let min = *perm[..k as usize].iter().min().unwrap();
            for c in (min + 1)..=N {
                hits[ki][c as usize] += 1;
            }
        }
    }

    let mut worst_exact = 0f64;
    let mut worst_mc = 0f64;
    for c in 0..=N {
        for (ki, &k) in ks.iter().enumerate() {
            let got = pass_at_k(N, c, k).unwrap();
            let exact = 1.0 - binom(N - c, k) as f64 / binom(N, k) as f64;
            let mc = hits[ki][c as usize] as f64 / DRAWS as f64;
            assert!(
                (got - exact).abs() <= 1e-12,
                "n={N} c={c} k={k}: {got} vs exact {exact}"
            );
            assert!(
                (got - mc).abs() <= 0.005,
                "n={N} c={c} k={k}: {got} vs Monte-Carlo {mc}"
            );
            worst_exact = worst_exact.max((got - exact).abs());
            worst_mc = worst_mc.max((got - mc).abs());
        }
        assert_eq!(
            pass_at_k(N, c, 1).unwrap(),
            f64::from(c) / f64::from(N),
            "k=1 identity at c={c}"
        );
        if c >= 1 {
            assert_eq!(pass_at_k(N, c, N).unwrap(), 1.0, "k=n identity at c={c}");
        }
    }
    format!("max |exact diff| {worst_exact:.1e}, max |MC diff| {worst_mc:.4}")
}

fn entries_for(log: &str, catalog: &Catalog) -> Vec<ErrorEntry> {
    parse_diagnostics(log, catalog)
}

fn error_table_golden() -> String {
    let catalog = Catalog::builtin();
    let mut classified = 0;
    for (class, message) in TABLE_FEEDBACK {
        let mut lines = message.lines();
        let mut located = format!(
            "[error] /ws/src/main/scala/Top.scala:14:3: {}\n",
            lines.next().unwrap()
        );
        for rest in lines {
            located.push_str(&format!("[error] {rest}\n"));
        }
        located.push_str("[error] one error found\n");
        for log in [message.to_string(), located] {
            let entries = entries_for(&log, &catalog);
            assert_eq!(
                entries.len(),
                1,
                "{class}: expected one entry from {log:?}, got {entries:?}"
            );
            assert_eq!(
                entries[0].catalog_class.as_deref(),
                Some(class),
                "{class}: {log:?}"
            );
        }
        classified += 1;

        let moved = format!(
            "[error] /ws/src/main/scala/Top.scala:97:11: {}\n",
            message.replace('\n', "\n[error] ")
        );
        let a = &entries_for(
            &format!(
                "[error] /ws/src/main/scala/Top.scala:14:3: {}\n",
                message.replace('\n', "\n[error] ")
            ),
            &catalog,
        )[0];
        let b = &entries_for(&moved, &catalog)[0];
        assert_ne!(a.location, b.location);
        assert_eq!(
            location_signature(a),
            location_signature(b),
            "{class}: signature moved with the line"
        );
    }
    format!("{classified}/12 classified, signatures line-invariant")
}

fn three_stage_script() -> RoleScript {
    RoleScript {
        generator: vec![
            text(&code("  val sum = Wire(UInt(9.W))\n  // @compile-error: Value sgnal is not a member. Did you mean signal?")),
            text(&code("  val sum = Wire(UInt(9.W))\n  // @compile-error: type mismatch;\\nfound: chisel3.Bool\\nrequired: chisel3.UInt")),
            text(&code("  io.sum := io.a - io.b\n  // @sim-fail: tp3 IN=a=3,b=4 EXP=7 GOT=255")),
            text(&code("  io.sum := io.a +& io.b")),
        ],
        reviewer: vec![
            text(&plan("misspelled signal name")),
            text(&plan("Bool assigned to a UInt")),
            text(&plan("subtraction used instead of addition")),
        ],
        inspector: vec![],
    }
}

fn three_stage_pipeline() -> String {
    let case = case("adder8");
    let cfg = cfg(10, true);
    let first = run(&case, &cfg, three_stage_script());
    let o = &first.outcome;
    assert_eq!(o.final_verdict, Verdict::Success);
    assert_eq!(o.iterations_used, 3);
    let verdicts: Vec<Verdict> = o.trace.records.iter().map(|r| r.verdict).collect();
    assert_eq!(
        verdicts,
        [
            Verdict::SyntaxError,
            Verdict::SyntaxError,
            Verdict::FunctionalError,
            Verdict::Success
        ]
    );
    assert_eq!(o.llm_calls.inspector, 0);
    assert_eq!(o.escapes_triggered, 0);

    let second = run(&case, &cfg, three_stage_script());
    let a = serde_json::to_string_pretty(&first.outcome.trace).unwrap();
    let b = serde_json::to_string_pretty(&second.outcome.trace).unwrap();
    assert_eq!(a, b, "trace differs between runs");
    let oa = serde_json::to_vec(&first.outcome).unwrap();
    let ob = serde_json::to_vec(&second.outcome).unwrap();
    assert_eq!(oa, ob, "outcome differs between runs");
    format!(
        "Success after 3 iterations, {}-byte trace identical",
        a.len()
    )
}

fn repeated_b3() -> RoleScript {
    RoleScript {
        generator: vec![text(&code(
            "  val w = Wire(UInt(8.W))\n  when (io.in) { w := 0.U }\n  // @compile-error: Reference w not fully initialized.",
        ))],
        reviewer: vec![text(&plan("w has no default assignment"))],
        inspector: vec![text(AFFIRM_0)],
    }
}

fn escape_differential() -> String {
    let case = case("loop");

    let off = run(&case, &cfg(10, false), repeated_b3()).outcome;
    assert_eq!(off.final_verdict, Verdict::Exhausted);
    assert_eq!(off.trace.records.len(), 11);
    let sigs: BTreeSet<Vec<String>> = off
        .trace
        .records
        .iter()
        .map(|r| r.feedback.as_ref().unwrap().signatures())
        .collect();
    assert_eq!(
        sigs.len(),
        1,
        "records do not share one signature: {sigs:?}"
    );
    assert!(off.trace.records[0].feedback.as_ref().unwrap().signatures()[0].starts_with("B3|"));
    assert_eq!(off.llm_calls.inspector, 0);

    let on = run(&case, &cfg(10, true), repeated_b3());
    let first = on
        .events
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::Escaped { span, .. } => Some((e.attempt, span.clone())),
            _ => None,
        })
        .expect("an escape event");
    assert_eq!(first.0, 1, "loop should be caught at the second occurrence");
    assert_eq!((first.1.start_iteration, first.1.end_iteration), (0, 1));
    assert!(first.1.matched_signature.starts_with("B3|"));

    let o = &on.outcome;
    assert!(!o.trace.erasures.is_empty(), "erasure not logged");
    assert!(o.escapes_triggered >= 1);
    let mut seen = BTreeSet::new();
    for r in &o.trace.records {
        for s in r.feedback.iter().flat_map(|f| f.signatures()) {
            assert!(
                seen.insert(s.clone()),
                "signature {s} repeats among surviving records"
            );
        }
    }
    assert_eq!(
        o.iterations_used, 10,
        "budget must not be refunded by erasure"
    );
    format!(
        "off: {} records/1 signature; on: {} escape(s), {} surviving record(s)",
        off.trace.records.len(),
        o.escapes_triggered,
        o.trace.records.len()
    )
}

fn bench_case(id: &str) -> CaseSpec {
    let mut c = case(id);
    c.module_name = "Adder".into();
    c
}

fn script_for(case_id: &str, trial: u32) -> RoleScript {
    let ok = text(&code(GOOD));
    let syntax = text(&code("  // @compile-error: No implicit clock."));
    let functional = text(&code("  // @sim-fail: tp1 IN=a=1 EXP=2 GOT=0"));
    let generator = match (case_id, trial % 3) {
        ("a", _) => vec![ok],
        ("b", 0) => vec![syntax, ok],
        ("b", _) => vec![ok],
        ("c", 2) => vec![functional, syntax, ok],
        ("c", _) => vec![functional],
        _ => vec![syntax, functional, ok],
    };
    RoleScript {
        generator,
        reviewer: vec![text(&plan("fix it"))],
        inspector: vec![text(
            "IS_LOOP: no\nMATCHED_ITERATION: none\nCAUSE: progressing",
        )],
    }
}

fn mock_runner(cfg: &chiselsmith_core::config::RunConfig) -> EngineRunner {
    let toolchain = Arc::new(ScriptedToolchain::default());
    EngineRunner {
        compiler: toolchain.clone(),
        simulator: toolchain,
        catalog: Catalog::builtin(),
        prompts: PromptSet::builtin(),
        cfg: cfg.clone(),
        gateway_for: Box::new(|case, trial| {
            Gateway::new(
                Arc::new(ScriptedTransport::new(script_for(&case.case_id, trial))),
                RetryPolicy::immediate(0),
            )
        }),
        clock: Arc::new(FrozenClock),
        events: Arc::new(NullSink),
    }
}

fn harness_behaviour() -> String {
    let cases: Vec<CaseSpec> = ["a", "b", "c", "d"]
        .iter()
        .map(|id| bench_case(id))
        .collect();
    let mut cfg = cfg(4, true);
    cfg.trials = 3;
    cfg.parallelism = 3;
    let runner = mock_runner(&cfg);
    let dir = tempfile::tempdir().unwrap();

    // Full run.
    let full_log = dir.path().join("full.jsonl");
    let opts = BenchOptions {
        log_path: full_log.clone(),
        ..Default::default()
    };
    let full = run_bench(&cases, &cfg, &runner, &opts).unwrap();
    assert_eq!(full.outcomes().len(), 12);
    let persisted = read_log(&full_log).unwrap();
    assert_eq!(persisted.records.len(), 12);
    assert_eq!(persisted.skipped, 0);

    // Killed after 5 records with a torn sixth line, then resumed.
    let log = dir.path().join("resumed.jsonl");
    let opts = BenchOptions {
        log_path: log.clone(),
        stop_after: Some(5),
        ..Default::default()
    };
    let partial = run_bench(&cases, &cfg, &runner, &opts).unwrap();
    assert!(partial.aborted);
    let mut bytes = std::fs::read(&log).unwrap();
    bytes.extend_from_slice(br#"{"record":"outcome","schema":1,"case_id":"d","tri"#);
    std::fs::write(&log, bytes).unwrap();
    let resumed = run_bench(
        &cases,
        &cfg,
        &runner,
        &BenchOptions {
            log_path: log.clone(),
            resume: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(resumed.new_records, 7);
    let contents = read_log(&log).unwrap();
    assert_eq!(contents.skipped, 0, "torn line survived resume");
    let mut pairs = BTreeSet::new();
    for r in &contents.records {
        let LogRecord::Outcome(e) = r else {
            panic!("unexpected abort record");
        };
        assert!(
            pairs.insert((e.case_id.clone(), e.trial)),
            "duplicate pair ({}, {})",
            e.case_id,
            e.trial
        );
    }
    assert_eq!(pairs.len(), 12);

    let outcomes = resumed.outcomes();
    let verdicts = |o: &[chiselsmith_core::harness::ResultEnvelope]| {
        o.iter()
            .map(|e| ((e.case_id.clone(), e.trial), e.outcome.final_verdict))
            .collect::<Vec<_>>()
    };
    assert_eq!(verdicts(&outcomes), verdicts(&full.outcomes()));

    let curve = success_vs_iterations(&outcomes, &[1, 3]);
    for k in [1, 3] {
        let ys: Vec<f64> = curve
            .iter()
            .filter(|p| p.k == k)
            .map(|p| p.pass_at_k)
            .collect();
        assert_eq!(ys.len(), 5);
        assert!(
            ys.windows(2).all(|w| w[0] <= w[1]),
            "curve not monotone for k={k}: {ys:?}"
        );
    }
    let mix = error_mix_by_iteration(&outcomes);
    assert!(!mix.is_empty());
    for row in &mix {
        let sum = row.syntax + row.functional + row.success + row.exhausted;
        assert!(
            (sum - 1.0).abs() <= 1e-9,
            "mix row {} sums to {sum}",
            row.iteration
        );
    }
    format!(
        "12 outcomes, resume added 7 with no duplicates, {} mix rows",
        mix.len()
    )
}

fn baseline_mode() -> String {
    let cfg = cfg(0, true);
    let mut verdicts = Vec::new();
    for (trial, body) in [
        GOOD,
        "  // @compile-error: No implicit clock.",
        "  // @sim-fail: tp1 IN=a=1 EXP=2 GOT=0",
    ]
    .into_iter()
    .enumerate()
    {
        let script = RoleScript {
            generator: vec![text(&code(body))],
            reviewer: vec![text(&plan("unused"))],
            inspector: vec![text(AFFIRM_0)],
        };
        let r = run(&case(&format!("zs{trial}")), &cfg, script);
        let calls = r.outcome.llm_calls;
        assert_eq!(
            (calls.generator, calls.reviewer, calls.inspector),
            (1, 0, 0),
            "trial {trial}"
        );
        assert_eq!(r.transport.attempts(AgentRole::Generator), 1);
        assert_eq!(r.transport.attempts(AgentRole::Reviewer), 0);
        assert_eq!(r.transport.attempts(AgentRole::Inspector), 0);
        assert_eq!(r.outcome.iterations_used, 0);
        assert_eq!(r.outcome.trace.records.len(), 1);
        verdicts.push(r.outcome.final_verdict);
    }
    assert_eq!(
        verdicts,
        [Verdict::Success, Verdict::Exhausted, Verdict::Exhausted]
    );
    "3 trials, 1 Generator call each, no Reviewer or Inspector calls".into()
}

fn real_toolchain(config: &Path) -> String {
    let settings = Settings::load(config).expect("toolchain config");
    let catalog = Catalog::builtin();
    let compiler = ScaffoldCompiler::new(
        settings.toolchain.as_ref().expect("[toolchain] section"),
        catalog,
    )
    .expect("scaffold is usable");
    let simulator = CommandSimulator::new(settings.simulator.clone().unwrap_or_default())
        .expect("simulator is installed");
    let suite = load_cases(&fixtures().join("suite")).unwrap();
    let adder = suite.iter().find(|c| c.case_id == "adder8").unwrap();
    let source =
        |name: &str| std::fs::read_to_string(fixtures().join("chisel").join(name)).unwrap();
    let candidate = |src: String| Candidate {
        iteration: 0,
        attempt: 0,
        chisel_src: src,
        verilog_src: None,
        provenance: Provenance::InitialGeneration,
    };

    let t = Instant::now();
    let compiled = compiler
        .compile(
            &candidate(source("Adder8.scala")),
            adder,
            settings.run.compile_timeout(),
        )
        .unwrap();
    assert!(
        compiled.is_ok(),
        "adder failed to compile:\n{}",
        compiled.raw_log
    );
    let sim = simulator
        .simulate(
            compiled.verilog_src.as_deref().unwrap(),
            adder,
            settings.run.sim_timeout(),
        )
        .unwrap();
    assert!(sim.passed(), "adder testbench failed:\n{}", sim.raw_log);
    let adder_s = t.elapsed().as_secs_f64();
    assert!(adder_s < 120.0, "adder round trip took {adder_s:.1}s");

    for (file, module, class) in [
        ("NotInit.scala", "NotInit", "B3"),
        ("CombLoop.scala", "CombLoop", "C2"),
    ] {
        let mut case = adder.clone();
        case.module_name = module.into();
        let r = compiler
            .compile(
                &candidate(source(file)),
                &case,
                settings.run.compile_timeout(),
            )
            .unwrap();
        assert!(!r.is_ok(), "{file} compiled");
        assert!(
            r.entries
                .iter()
                .any(|e| e.catalog_class.as_deref() == Some(class)),
            "{file}: no {class} entry in {:?}\n{}",
            r.entries,
            r.raw_log
        );
    }
    format!("adder passed in {adder_s:.1}s, B3 and C2 snippets classified")
}

fn live_smoke(config: &Path) -> String {
    let mut settings = Settings::load(config).expect("live config");
    settings.run.trials = 1;
    settings.run.max_iterations = 10;
    settings.run.k_values = vec![1];
    let runner = build_runner(&settings, Backend::Live, Arc::new(NullSink)).expect("live runner");
    let cases: Vec<CaseSpec> = runnable(&load_cases(&fixtures().join("suite")).unwrap())
        .into_iter()
        .take(5)
        .collect();
    assert_eq!(cases.len(), 5);
    let dir = tempfile::tempdir().unwrap();
    let opts = BenchOptions {
        log_path: dir.path().join("live.jsonl"),
        ..Default::default()
    };
    let result = run_bench(&cases, &settings.run, &runner, &opts).unwrap();
    assert!(
        result.aborts.is_empty(),
        "infrastructure failures: {:?}",
        result.aborts
    );
    let outcomes = result.outcomes();
    assert_eq!(outcomes.len(), 5);
    let table = pass_at_k_table(&outcomes, &[1]);
    assert_eq!(table.len(), 1);
    let (k, v, counted) = table[0].values[0];
    assert_eq!((k, counted), (1, 5));
    let v = v.expect("Pass@1 value");
    assert!((0.0..=1.0).contains(&v));
    format!("Pass@1 = {v:.3} over 5 cases")
}
