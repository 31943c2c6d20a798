//! Acceptance suite. Runs every numbered criterion at its stated tolerance
//! and prints one PASS/FAIL line each; exits non-zero if any fails.
//!
//! `cargo test --test acceptance` (or `rydberg check`).

use std::process::ExitCode;

use rydberg_core::experiments::checks;

fn main() -> ExitCode {
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for &(id, _, _) in checks::CHECKS.iter() {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let out = checks::run_check(id).expect("listed check exists");
        println!("{out}");
        if !out.passed {
            failed += 1;
        }
    }
    println!("acceptance: {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
