mod common;

use chiselsmith_core::catalog::Catalog;
use chiselsmith_core::diagnostics::{parse_diagnostics, render_diagnostics};
use chiselsmith_core::domain::{
    location_signature, Candidate, ErrorEntry, ErrorKind, Feedback, IterationRecord, MismatchEntry,
    Provenance, RevisionPlan, SourceLocation, Trace, Verdict,
};
use chiselsmith_core::harness::pass_at_k;
use chiselsmith_core::llm::{
    parse_code_response, render_inspector_prompt, render_reviewer_prompt, total_chars,
    PromptBudget, PromptSet, ReviewContext, MIN_CONTEXT_BUDGET,
};
use chiselsmith_core::sim::parse_sim_log;
use proptest::prelude::*;

use common::{case, TABLE_FEEDBACK};

fn entry(msg_idx: usize, line: u32, col: u32) -> ErrorEntry {
    let catalog = Catalog::builtin();
    let msg = TABLE_FEEDBACK[msg_idx % TABLE_FEEDBACK.len()].1;
    let class = catalog.match_message(msg).map(|c| c.class_id.clone());
    ErrorEntry::new(
        ErrorKind::Syntax,
        Some(SourceLocation {
            file: "/ws/src/main/scala/Candidate.scala".into(),
            line,
            column: Some(col),
        }),
        msg.to_string(),
        None,
        class,
    )
}

fn record(i: u32, msg_idx: usize, code_len: usize) -> IterationRecord {
    let e = entry(msg_idx, 3 + i, 5);
    IterationRecord {
        candidate: Candidate {
            iteration: i,
            attempt: i,
            chisel_src: format!(
                "class Adder extends Module {{\n{}\n}}",
                "  val x = 1.U\n".repeat(code_len)
            ),
            verilog_src: None,
            provenance: if i == 0 {
                Provenance::InitialGeneration
            } else {
                Provenance::Revision
            },
        },
        feedback: Some(Feedback::syntax(vec![e.clone()], render_diagnostics(&[e])).unwrap()),
        plan: Some(RevisionPlan::from_feedback(
            &Feedback::syntax(vec![entry(msg_idx, 1, 1)], String::new()).unwrap(),
            String::new(),
        )),
        verdict: Verdict::SyntaxError,
    }
}

fn trace_of(msgs: &[usize], code_len: usize) -> Trace {
    msgs.iter()
        .enumerate()
        .try_fold(Trace::new(), |t, (i, &m)| {
            t.append_record(record(i as u32, m, code_len))
        })
        .unwrap()
}

proptest! {
    #[test]
    fn pass_at_k_is_a_probability_monotone_in_c_and_k(n in 1u32..=200, c in 0u32..=200, k in 1u32..=200) {
        let c = c.min(n);
        let k = k.min(n);
        let v = pass_at_k(n, c, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        if c < n {
            prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= v - 1e-12);
        }
        if k < n {
            prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= v - 1e-12);
        }
        prop_assert_eq!(pass_at_k(n, c, 1).unwrap(), f64::from(c) / f64::from(n));
        if c == 0 {
            prop_assert_eq!(v, 0.0);
        }
        if n - c < k {
            prop_assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn pass_at_k_rejects_impossible_inputs(n in 1u32..100, extra in 1u32..10) {
        prop_assert!(pass_at_k(n, n + extra, 1).is_err());
        prop_assert!(pass_at_k(n, 0, n + extra).is_err());
        prop_assert!(pass_at_k(n, 0, 0).is_err());
    }

    #[test]
    fn signature_ignores_line_and_column(idx in 0usize..12, l1 in 1u32..5000, l2 in 1u32..5000, c1 in 1u32..200, c2 in 1u32..200) {
        prop_assert_eq!(location_signature(&entry(idx, l1, c1)), location_signature(&entry(idx, l2, c2)));
    }

    #[test]
    fn signature_ignores_numerals_in_the_message(a in 0u32..1000, b in 0u32..1000) {
        let mk = |x: u32| ErrorEntry::new(ErrorKind::Syntax, None, format!("Too many arguments. Found {x}, expected {b} for method apply"), None, Some("A3".into()));
        prop_assert_eq!(location_signature(&mk(a)), location_signature(&mk(a + 1)));
    }

    #[test]
    fn parse_render_is_idempotent(picks in prop::collection::vec((0usize..12, 1u32..400, 1u32..80), 1..6)) {
        let catalog = Catalog::builtin();
        let entries: Vec<ErrorEntry> = picks.iter().map(|&(i, l, c)| entry(i, l, c)).collect();
        let once = parse_diagnostics(&render_diagnostics(&entries), &catalog);
        let twice = parse_diagnostics(&render_diagnostics(&once), &catalog);
        prop_assert_eq!(&once, &twice);
        prop_assert!(!once.is_empty());
    }

    #[test]
    fn reviewer_prompt_fits_the_budget(
        msgs in prop::collection::vec(0usize..12, 1..14),
        code_len in 0usize..600,
        max_chars in MIN_CONTEXT_BUDGET..40_000,
        window in 0usize..8,
    ) {
        let set = PromptSet::builtin();
        let trace = trace_of(&msgs, code_len);
        let feedback = trace.last().unwrap().feedback.clone().unwrap();
        let budget = PromptBudget { max_chars, window };
        let ctx = ReviewContext {
            case: &case("p"),
            trace: &trace,
            feedback: &feedback,
            guidance: &[],
            escape_note: None,
        };
        let msgs_out = render_reviewer_prompt(&set, &budget, &ctx);
        prop_assert!(total_chars(&msgs_out) <= max_chars, "{} > {}", total_chars(&msgs_out), max_chars);
        let inspector = render_inspector_prompt(&set, &budget, &trace, &feedback, trace.next_iteration());
        prop_assert!(total_chars(&inspector) <= max_chars);
    }

    #[test]
    fn trace_round_trips_and_append_keeps_the_prefix(msgs in prop::collection::vec(0usize..12, 1..10)) {
        let trace = trace_of(&msgs, 2);
        let json = serde_json::to_string(&trace).unwrap();
        let back: Trace = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &trace);

        let before = trace.records.clone();
        let next = record(trace.next_iteration(), 0, 1);
        let longer = trace.clone().append_record(next).unwrap();
        prop_assert_eq!(&longer.records[..before.len()], &before[..]);
        prop_assert!(trace.append_record(record(99, 0, 1)).is_err());
    }

    #[test]
    fn fenced_source_is_recovered_exactly(
        src in "[a-zA-Z0-9 _(){}:=.+\\n-]{1,300}",
        lang in prop::sample::select(vec!["", "scala", "chisel"]),
        prose in "[a-zA-Z .,]{0,80}",
    ) {
        prop_assume!(!src.trim().is_empty());
        let reply = format!("{prose}\n```{lang}\n{src}\n```\n{prose}");
        prop_assert_eq!(parse_code_response(&reply).unwrap(), src);
    }

    #[test]
    fn mismatch_list_is_capped_but_counts_are_exact(fails in 0usize..60, passes in 0usize..20, cap in 1usize..32) {
        let mut log = String::new();
        for i in 0..fails {
            log.push_str(&format!("CHECK tp{i} IN=a={i} EXP={} GOT=0 FAIL\n", i + 1));
        }
        for i in 0..passes {
            log.push_str(&format!("CHECK ok{i} IN=a=0 EXP=0 GOT=0 PASS\n"));
        }
        let r = parse_sim_log(&log, cap);
        prop_assert_eq!(r.mismatches.len(), fails.min(cap));
        prop_assert_eq!(r.failed_count, fails as u64);
        prop_assert_eq!(r.total_count, (fails + passes) as u64);
        let first: Vec<&MismatchEntry> = r.mismatches.iter().take(1).collect();
        if fails > 0 {
            prop_assert_eq!(&first[0].testpoint_id, "tp0");
        }
    }
}
