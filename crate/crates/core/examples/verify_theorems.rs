//! Runs the oracle suite: exact tabular checks of the barrier-function
//! properties, score-function identities and finite-difference gradients.
//!
//! `cargo run --release --example verify_theorems -- [--no-gradients]`

use std::time::Instant;

use dgppo::oracles::suite::{run_suite, SuiteConfig};

fn main() -> dgppo::Result<()> {
    let gradients = !std::env::args().any(|a| a == "--no-gradients");
    let clock = Instant::now();
    let report = run_suite(&SuiteConfig {
        gradients,
        ..SuiteConfig::default()
    })?;
    for r in &report.results {
        println!(
            "{:<40} {:>5} instances (min {:>3})  worst {:.3e}  {}",
            r.name,
            r.instances,
            r.minimum_instances,
            r.worst,
            if r.passed { "pass" } else { "FAIL" }
        );
        if let Some(f) = &r.failure {
            println!("    {f}");
        }
    }
    println!(
        "{} in {:.1}s",
        if report.passed { "all properties hold" } else { "suite failed" },
        clock.elapsed().as_secs_f64()
    );
    std::process::exit(if report.passed { 0 } else { 1 });
}
