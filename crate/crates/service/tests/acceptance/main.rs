//! Acceptance suite: one PASS/FAIL line per criterion. Pass a substring as an
//! argument to run only matching criteria.

mod benchmark;
mod calibration;
mod numerics;
mod service;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

pub type Outcome = Result<String, String>;

/// Fail with `msg` unless `cond` holds.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

struct Criterion {
    name: &'static str,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "tfidf_oracle", run: numerics::tfidf_oracle },
        Criterion { name: "lsa_oracle", run: numerics::lsa_oracle },
        Criterion { name: "gradient_checks", run: numerics::gradient_checks },
        Criterion { name: "attention_correctness", run: numerics::attention_correctness },
        Criterion { name: "segmentation", run: numerics::segmentation },
        Criterion { name: "max_pooling_inference", run: numerics::max_pooling },
        Criterion { name: "calibration", run: calibration::calibration },
        Criterion { name: "statistical_sanity", run: calibration::uniform_scorer },
        Criterion { name: "end_to_end_benchmark", run: benchmark::end_to_end },
        Criterion { name: "service", run: service::service },
        Criterion { name: "throughput", run: service::throughput },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:<24} {detail} [{secs:.1}s]", c.name),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:<24} {reason} [{secs:.1}s]", c.name);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
