use std::hint::black_box;

use chiselsmith_bench::{case, compiler_log, entries, trace, MESSAGES};
use chiselsmith_core::catalog::Catalog;
use chiselsmith_core::diagnostics::parse_diagnostics;
use chiselsmith_core::domain::location_signature;
use chiselsmith_core::harness::pass_at_k;
use chiselsmith_core::llm::{render_reviewer_prompt, PromptBudget, PromptSet, ReviewContext};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_pass_at_k(c: &mut Criterion) {
    let mut g = c.benchmark_group("pass_at_k");
    for n in [10u32, 100, 1000] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| pass_at_k(black_box(n), black_box(n / 3), black_box(n / 2)).unwrap())
        });
    }
    g.finish();
}

fn bench_parse_diagnostics(c: &mut Criterion) {
    let catalog = Catalog::builtin();
    let mut g = c.benchmark_group("parse_diagnostics");
    for n in [1usize, 20, 200] {
        let log = compiler_log(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &log, |b, log| {
            b.iter(|| parse_diagnostics(black_box(log), &catalog))
        });
    }
    g.finish();
}

fn bench_match_catalog(c: &mut Criterion) {
    let catalog = Catalog::builtin();
    c.bench_function("match_catalog/all_messages", |b| {
        b.iter(|| {
            MESSAGES
                .iter()
                .filter(|m| catalog.match_message(black_box(m)).is_some())
                .count()
        })
    });
}

fn bench_location_signature(c: &mut Criterion) {
    let catalog = Catalog::builtin();
    let errs = entries(MESSAGES.len(), &catalog);
    c.bench_function("location_signature/batch", |b| {
        b.iter(|| errs.iter().map(location_signature).collect::<Vec<_>>())
    });
}

fn bench_reviewer_prompt(c: &mut Criterion) {
    let catalog = Catalog::builtin();
    let set = PromptSet::builtin();
    let spec = case();
    let budget = PromptBudget::default();
    let mut g = c.benchmark_group("render_reviewer_prompt");
    for len in [1u32, 6, 11] {
        let t = trace(len, 80, &catalog);
        let feedback = t.last().unwrap().feedback.clone().unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(len), &t, |b, t| {
            b.iter(|| {
                let ctx = ReviewContext {
                    case: &spec,
                    trace: t,
                    feedback: &feedback,
                    guidance: &[],
                    escape_note: None,
                };
                render_reviewer_prompt(&set, &budget, black_box(&ctx))
            })
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    bench_pass_at_k,
    bench_parse_diagnostics,
    bench_match_catalog,
    bench_location_signature,
    bench_reviewer_prompt
);
criterion_main!(benches);
