use std::process::ExitCode;

use bundlecalc_verify::suite::{run_all, CRITERIA};

fn main() -> ExitCode {
    let results = run_all();
    for r in &results {
        println!("{r}");
        for c in &r.checks {
            let mark = if c.passed() { "ok" } else { "FAILED" };
            println!("    [{mark}] {c}");
        }
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} {}", r.id, r.name))
        .collect();
    if results.len() != CRITERIA.len() {
        eprintln!(
            "expected {} criteria, ran {}",
            CRITERIA.len(),
            results.len()
        );
        return ExitCode::FAILURE;
    }
    if !failed.is_empty() {
        eprintln!("failing criteria: {failed:?}");
        return ExitCode::FAILURE;
    }
    println!(
        "acceptance: {} of {} criteria passed",
        results.len(),
        CRITERIA.len()
    );
    ExitCode::SUCCESS
}
