//! Reporting for the acceptance run: one line per criterion, nonzero exit if
//! any criterion fails.

use std::panic::{catch_unwind, UnwindSafe};
use std::time::Instant;

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

impl Verdict {
    pub fn from_bool(ok: bool, detail: String) -> Self {
        if ok {
            Verdict::Pass(detail)
        } else {
            Verdict::Fail(detail)
        }
    }
}

/// Runs every check, prints `<id> PASS|FAIL|SKIP (<seconds> s) <detail>`
/// and returns the number of failures. A panicking check counts as failed.
pub fn run_checks<F>(checks: Vec<(&str, F)>) -> usize
where
    F: FnOnce() -> Verdict + UnwindSafe,
{
    let mut failures = 0;
    for (id, check) in checks {
        let start = Instant::now();
        let verdict = catch_unwind(check)
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Verdict::Fail(format!("panicked: {msg}"))
            });
        let secs = start.elapsed().as_secs_f64();
        let (label, detail) = match &verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failures += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{id} {label} ({secs:.2} s) {detail}");
    }
    failures
}
