//! Writes a tiny pair of graphs in the tab-separated benchmark layout, loads
//! it back and splits the gold links into train, validation and test.
//!
//! ```text
//! cargo run --example load_dataset -- path/to/dir   # or a temporary dir
//! ```

use std::fs;

use kg_entail::kg::{load_kg, load_links, split_seeds};

fn main() -> kg_entail::Result<()> {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().to_path_buf());
    fs::create_dir_all(&dir).expect("create data directory");
    let write = |name: &str, body: &str| fs::write(dir.join(name), body).expect("write fixture");
    write(
        "rel_triples_1",
        "a1\tborn_in\tc1\nb1\tborn_in\tc1\nb1\tborn_in\tc1\n",
    );
    write(
        "attr_triples_1",
        "a1\tyear\t1950\nb1\tyear\t1961\nc1\tpopulation\t12000\n",
    );
    write("rel_triples_2", "a2\tbirthplace\tc2\nb2\tbirthplace\tc2\n");
    write("attr_triples_2", "a2\tbirth\t1950\nb2\tbirth\t1961\n");
    write("ent_links", "a1\ta2\nb1\tb2\nc1\tc2\n");

    let kg1 = load_kg(dir.join("rel_triples_1"), dir.join("attr_triples_1"))?;
    let kg2 = load_kg(dir.join("rel_triples_2"), dir.join("attr_triples_2"))?;
    println!(
        "KG1: {} entities, {} relational triples (duplicate dropped), {} attribute triples",
        kg1.num_entities(),
        kg1.relational_triples().len(),
        kg1.attribute_triples().len()
    );
    println!("KG2: {} entities", kg2.num_entities());

    let links = load_links(dir.join("ent_links"))?;
    let split = split_seeds(&links, 0.67, 0.0, 7)?;
    println!("train {:?}", split.train.pairs());
    println!("test  {:?}", split.test.pairs());
    Ok(())
}
