//! Trains on a generated KG pair and prints the test report.
//!
//! ```text
//! cargo run --release --example synthetic_alignment -- max_epochs=5 aligner=mlm
//! ```
//! Arguments are `key=value` config overrides.

use std::time::Instant;

use kg_entail::experiment::{run_in_memory, ExperimentConfig};

fn main() -> kg_entail::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let cfg = ExperimentConfig::from_toml_str("", &overrides)?;
    let t = Instant::now();
    let out = run_in_memory(&cfg)?;
    println!("chosen kind: {}", out.outcome.best_kind);
    println!(
        "reranked: {} / {}",
        out.results.iter().filter(|r| r.reranked).count(),
        out.results.len()
    );
    println!("{}", out.report);
    println!("elapsed: {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
