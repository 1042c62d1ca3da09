//! Pass/fail bookkeeping for the acceptance gate (`tests/acceptance.rs`).
//!
//! Each criterion runs once, is timed against its budget, and prints exactly
//! one line. A panic inside a check counts as a failure.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {} ({:.2} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

#[derive(Debug, Default)]
pub struct Gate {
    verdicts: Vec<Verdict>,
}

impl Gate {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `check`, which returns whether it passed and a one-line detail.
    /// Exceeding `budget` fails the criterion.
    pub fn check(
        &mut self,
        id: u32,
        name: &'static str,
        budget: Option<Duration>,
        check: impl FnOnce() -> (bool, String),
    ) -> &Verdict {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let (mut passed, mut detail) = match outcome {
            Ok(r) => r,
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".into());
                (false, format!("panicked: {msg}"))
            }
        };
        if let Some(b) = budget {
            if elapsed > b {
                passed = false;
                detail += &format!("; over the {:.0} s budget", b.as_secs_f64());
            }
        }
        let verdict = Verdict {
            id,
            name,
            passed,
            detail,
            elapsed,
        };
        println!("{verdict}");
        self.verdicts.push(verdict);
        self.verdicts.last().expect("just pushed")
    }

    pub fn verdicts(&self) -> &[Verdict] {
        &self.verdicts
    }

    /// Prints the tally; failure if any criterion failed.
    pub fn finish(&self) -> ExitCode {
        let passed = self.verdicts.iter().filter(|v| v.passed).count();
        println!("acceptance: {passed}/{} criteria passed", self.verdicts.len());
        if passed == self.verdicts.len() {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }
    }
}
