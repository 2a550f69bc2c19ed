//! Runs every named check at full size and prints one line per check.
//!
//! Uses its own `main` so the verdict lines always reach the test output.
//! `SUPERSIM_ACCEPTANCE=quick` switches to the smaller sample sizes.

use std::process::ExitCode;
use std::time::Instant;

use supersim_core::verify::{self, Context, Mode};

fn main() -> ExitCode {
    let mode = match std::env::var("SUPERSIM_ACCEPTANCE").as_deref() {
        Ok("quick") => Mode::Quick,
        _ => Mode::Full,
    };
    let ctx = Context::new(mode, verify::DEFAULT_SEED);
    let start = Instant::now();
    let mut failed = Vec::new();
    for (i, name) in verify::check_names().enumerate() {
        let t = Instant::now();
        let v = verify::run_or_fail(name, &ctx);
        println!("[{:>2}] {} ({:.1}s)", i + 1, v.line(), t.elapsed().as_secs_f64());
        if !v.passed {
            for p in v.parts.iter().filter(|p| !p.passed) {
                println!(
                    "       failing part {}: observed {} expected {} tolerance {}",
                    p.name, p.observed, p.expected, p.tolerance
                );
            }
            failed.push(name);
        }
    }
    let total = verify::CHECKS.len();
    println!(
        "acceptance: {}/{total} passed in {:.1}s ({mode:?} mode)",
        total - failed.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
