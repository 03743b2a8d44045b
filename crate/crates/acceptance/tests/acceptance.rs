//! Runs every acceptance criterion and prints one line per criterion.
//! Exits nonzero if any criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- 1 7`.

use std::time::Instant;

use onoff_tomo_acceptance::CRITERIA;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (k, (name, _)) in CRITERIA.iter().enumerate() {
            println!("criterion {}: {name}: test", k + 1);
        }
        return;
    }
    let selected: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (k, (name, check)) in CRITERIA.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{verdict}] {name}: {} ({:.1} s)",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        if !outcome.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
