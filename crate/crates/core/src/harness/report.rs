use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::run::ResultEnvelope;
use crate::domain::Verdict;

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum PassAtKError {
    #[error("successes {c} exceed trials {n}")]
    TooManySuccesses { n: u32, c: u32 },
    #[error("k = {k} is outside 1..={n}")]
    BadK { n: u32, k: u32 },
}

/// Probability that at least one of `k` draws (without replacement) from
/// `n` trials with `c` successes is a success: 1 - C(n-c, k) / C(n, k).
///
/// Evaluated as 1 - prod_{i=n-c+1..=n} (1 - k/i), which never forms a
/// binomial coefficient.
pub fn pass_at_k(n: u32, c: u32, k: u32) -> Result<f64, PassAtKError> {
    if c > n {
        return Err(PassAtKError::TooManySuccesses { n, c });
    }
    if k == 0 || k > n {
        return Err(PassAtKError::BadK { n, k });
    }
    if c == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    if k == 1 {
        return Ok(f64::from(c) / f64::from(n));
    }
    let kf = f64::from(k);
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - kf / f64::from(i)).product();
    Ok(1.0 - miss)
}

/// Mean Pass@k over the cases of one (model, cap, escape) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKRow {
    pub model_id: String,
    pub max_iterations: u32,
    pub escape_enabled: bool,
    pub cases: usize,
    pub trials: usize,
    /// k, mean Pass@k, and cases with at least k trials.
    pub values: Vec<(u32, Option<f64>, usize)>,
}

type GroupKey = (String, u32, bool);

fn group(results: &[ResultEnvelope]) -> BTreeMap<GroupKey, BTreeMap<&str, Vec<&ResultEnvelope>>> {
    let mut groups: BTreeMap<GroupKey, BTreeMap<&str, Vec<&ResultEnvelope>>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.model_id.clone(), r.max_iterations, r.escape_enabled))
            .or_default()
            .entry(r.case_id.as_str())
            .or_default()
            .push(r);
    }
    groups
}

fn mean_pass_at_k(cases: impl Iterator<Item = (u32, u32)>, k: u32) -> (Option<f64>, usize) {
    let vals: Vec<f64> = cases.filter_map(|(n, c)| pass_at_k(n, c, k).ok()).collect();
    if vals.is_empty() {
        (None, 0)
    } else {
        (
            Some(vals.iter().sum::<f64>() / vals.len() as f64),
            vals.len(),
        )
    }
}

pub fn pass_at_k_table(results: &[ResultEnvelope], k_values: &[u32]) -> Vec<PassAtKRow> {
    group(results)
        .into_iter()
        .map(|((model_id, max_iterations, escape_enabled), cases)| {
            let counts: Vec<(u32, u32)> = cases
                .values()
                .map(|ts| {
                    let c = ts
                        .iter()
                        .filter(|t| t.outcome.final_verdict == Verdict::Success)
                        .count();
                    (ts.len() as u32, c as u32)
                })
                .collect();
            let values = k_values
                .iter()
                .map(|&k| {
                    let (v, n) = mean_pass_at_k(counts.iter().copied(), k);
                    (k, v, n)
                })
                .collect();
            PassAtKRow {
                model_id,
                max_iterations,
                escape_enabled,
                cases: cases.len(),
                trials: counts.iter().map(|(n, _)| *n as usize).sum(),
                values,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub model_id: String,
    pub k: u32,
    pub cap: u32,
    pub pass_at_k: f64,
}

/// Pass@k had the run been capped at each `cap <= max_iterations`: a trial
/// counts as solved at `cap` when it succeeded within `cap` revisions.
pub fn success_vs_iterations(results: &[ResultEnvelope], k_values: &[u32]) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for ((model_id, max_iterations, _), cases) in group(results) {
        for &k in k_values {
            for cap in 0..=max_iterations {
                let counts = cases.values().map(|ts| {
                    let c = ts
                        .iter()
                        .filter(|t| {
                            t.outcome.final_verdict == Verdict::Success
                                && t.outcome.iterations_used <= cap
                        })
                        .count();
                    (ts.len() as u32, c as u32)
                });
                if let (Some(v), _) = mean_pass_at_k(counts, k) {
                    out.push(CurvePoint {
                        model_id: model_id.clone(),
                        k,
                        cap,
                        pass_at_k: v,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRow {
    /// Attempt index; erased attempts keep their position.
    pub iteration: u32,
    pub active: usize,
    pub syntax: f64,
    pub functional: f64,
    pub success: f64,
    pub exhausted: f64,
}

/// Share of each verdict among trials that evaluated a candidate at each
/// attempt index. Rows sum to 1.
pub fn error_mix_by_iteration(results: &[ResultEnvelope]) -> Vec<MixRow> {
    let mut tally: BTreeMap<u32, [usize; 4]> = BTreeMap::new();
    for r in results {
        for rec in r.outcome.trace.all_attempts() {
            let slot = match rec.verdict {
                Verdict::SyntaxError => 0,
                Verdict::FunctionalError => 1,
                Verdict::Success => 2,
                Verdict::Exhausted => 3,
                Verdict::ToolTimeout | Verdict::ProviderError => continue,
            };
            tally.entry(rec.candidate.attempt).or_default()[slot] += 1;
        }
    }
    tally
        .into_iter()
        .map(|(iteration, t)| {
            let active: usize = t.iter().sum();
            let share = |i: usize| t[i] as f64 / active as f64;
            MixRow {
                iteration,
                active,
                syntax: share(0),
                functional: share(1),
                success: share(2),
                exhausted: share(3),
            }
        })
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_pass_at_k_csv(path: &Path, rows: &[PassAtKRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model_id",
        "max_iterations",
        "escape_enabled",
        "cases",
        "trials",
        "k",
        "pass_at_k",
        "cases_counted",
    ])?;
    for r in rows {
        for (k, v, counted) in &r.values {
            w.write_record([
                r.model_id.clone(),
                r.max_iterations.to_string(),
                r.escape_enabled.to_string(),
                r.cases.to_string(),
                r.trials.to_string(),
                k.to_string(),
                v.map(fmt).unwrap_or_default(),
                counted.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_success_curve_csv(path: &Path, points: &[CurvePoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model_id", "k", "cap", "pass_at_k"])?;
    for p in points {
        w.write_record([
            p.model_id.clone(),
            p.k.to_string(),
            p.cap.to_string(),
            fmt(p.pass_at_k),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_error_mix_csv(path: &Path, rows: &[MixRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iteration",
        "active",
        "syntax",
        "functional",
        "success",
        "exhausted",
    ])?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.active.to_string(),
            fmt(r.syntax),
            fmt(r.functional),
            fmt(r.success),
            fmt(r.exhausted),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_values() {
        assert_eq!(pass_at_k(10, 10, 1), Ok(1.0));
        assert_eq!(pass_at_k(10, 0, 5), Ok(0.0));
        assert_eq!(pass_at_k(10, 3, 1), Ok(0.3));
        assert!((pass_at_k(10, 5, 5).unwrap() - (1.0 - 1.0 / 252.0)).abs() < 1e-12);
        assert_eq!(
            pass_at_k(10, 11, 1),
            Err(PassAtKError::TooManySuccesses { n: 10, c: 11 })
        );
        assert_eq!(pass_at_k(10, 1, 0), Err(PassAtKError::BadK { n: 10, k: 0 }));
        assert_eq!(
            pass_at_k(10, 1, 11),
            Err(PassAtKError::BadK { n: 10, k: 11 })
        );
    }

    #[test]
    fn no_overflow_for_large_n() {
        let v = pass_at_k(2000, 7, 100).unwrap();
        assert!(v > 0.0 && v < 1.0);
    }
}
