//! Saves a trained model, reloads it and checks that it scores a pair
//! exactly as before.

use kg_entail::encoder::checkpoint::{self, Checkpoint};
use kg_entail::experiment::{run_in_memory, ExperimentConfig};
use kg_entail::sequence::{build_sequence, InfoKind};

fn main() -> kg_entail::Result<()> {
    let cfg = ExperimentConfig {
        synth_entities: 40,
        max_epochs: 2,
        ..ExperimentConfig::default()
    };
    let out = run_in_memory(&cfg)?;
    let model = out.outcome.model;
    let (a, b) = &out.data.split.test.pairs()[0];
    let s1 = build_sequence(a, &out.data.kg1, InfoKind::Relational, cfg.max_units)?;
    let s2 = build_sequence(b, &out.data.kg2, InfoKind::Relational, cfg.max_units)?;
    let before = model.score(&model.pair_input(&s1, &s2)?)?;

    let dir = tempfile::tempdir().expect("temporary directory");
    let path = dir.path().join("model.ckpt");
    checkpoint::save(
        &path,
        &Checkpoint {
            model,
            optimizer: None,
            state: None,
        },
    )?;
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    let loaded = checkpoint::load(&path)?.model;
    let after = loaded.score(&loaded.pair_input(&s1, &s2)?)?;

    println!("{a} / {b}");
    println!("checkpoint: {size} bytes");
    println!(
        "p+ before {:.12}, after {:.12}",
        before.prob_positive, after.prob_positive
    );
    assert_eq!(before, after);
    Ok(())
}
