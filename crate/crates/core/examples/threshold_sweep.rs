//! Trains once on a small generated pair, then sweeps the confidence
//! threshold and the candidate count over the same checkpoint.
//!
//! ```text
//! cargo run --release --example threshold_sweep -- synth_entities=100
//! ```

use kg_entail::experiment::{run_in_memory, sweep_model, sweep_table, ExperimentConfig, SweepAxis};

fn main() -> kg_entail::Result<()> {
    let mut overrides = vec!["synth_entities=60".to_string(), "max_epochs=4".to_string()];
    overrides.extend(std::env::args().skip(1));
    let cfg = ExperimentConfig::from_toml_str("", &overrides)?;
    let out = run_in_memory(&cfg)?;
    let model = &out.outcome.model;
    let kind = out.outcome.best_kind;
    let rows = sweep_model(
        &cfg,
        &out.data,
        model,
        kind,
        SweepAxis::Threshold,
        &[0.0, 0.8, 0.9, 0.95, 1.0],
    )?;
    print!("{}", sweep_table(SweepAxis::Threshold, &rows, &cfg.hash()));
    let rows = sweep_model(
        &cfg,
        &out.data,
        model,
        kind,
        SweepAxis::Candidates,
        &[1.0, 4.0, 16.0, 64.0],
    )?;
    print!("{}", sweep_table(SweepAxis::Candidates, &rows, &cfg.hash()));
    Ok(())
}
