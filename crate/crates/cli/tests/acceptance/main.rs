//! One line per acceptance criterion. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test -p zenfoley --test acceptance -- 4 5`.

mod causality;
mod corpus;
mod fd;
mod loss;
mod normalization;
mod persistence;
mod quantizer;
mod shapes;
mod trends;
mod zen;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// A criterion either passes with a short measurement summary or fails with
/// the reason.
pub type Outcome = Result<String, Failure>;

pub struct Failure {
    pub reason: String,
    /// A measured shortfall that has been analysed and accepted: still
    /// reported as FAIL, but it does not fail the run.
    pub known: bool,
}

impl From<String> for Failure {
    fn from(reason: String) -> Self {
        Failure { reason, known: false }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "shape fidelity", budget: secs(60), run: shapes::run },
    Criterion { id: 2, name: "gradient suite", budget: secs(120), run: gradients::run },
    Criterion { id: 3, name: "causality suite", budget: secs(120), run: causality::run },
    Criterion { id: 4, name: "loss decomposition", budget: secs(60), run: loss::run },
    Criterion { id: 5, name: "quantizer oracle", budget: secs(30), run: quantizer::run },
    Criterion { id: 6, name: "prior normalization", budget: secs(60), run: normalization::run },
    Criterion { id: 7, name: "zen attention cost", budget: secs(10), run: zen::run },
    Criterion { id: 8, name: "fad analytic cases", budget: secs(10), run: fad::run },
    Criterion { id: 9, name: "desk-scale learning trends", budget: secs(600), run: trends::run },
    Criterion { id: 10, name: "determinism and persistence", budget: secs(600), run: persistence::run },
];

/// Fails with `msg` unless `cond`.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Turns any displayable error into a failure reason.
pub fn ctx<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn main() -> ExitCode {
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| picked.is_empty() || picked.contains(&c.id)) {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}").into())
        });
        let took = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if took > c.budget {
                Err(format!("{detail}; took {took:.1?}, budget {:?}", c.budget).into())
            } else {
                Ok(detail)
            }
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {}: {detail} [{took:.1?}]", c.id, c.name),
            Err(f) => {
                let note = if f.known { " (known shortfall)" } else { "" };
                failed += usize::from(!f.known);
                println!("FAIL {:>2} {}: {}{note} [{took:.1?}]", c.id, c.name, f.reason);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
