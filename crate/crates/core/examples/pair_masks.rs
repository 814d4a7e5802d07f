//! Builds a templated pair input by hand and prints its three attention masks.
//!
//! `m0` sees the whole pair, `m1` only `[CLS]` plus the first entity and `m2`
//! only `[CLS]` plus the second.

use kg_entail::kg::{AttrTriple, KnowledgeGraph, RelTriple};
use kg_entail::sequence::{build_pair_input, build_sequence, InfoKind, Mask, Template};
use kg_entail::tokenizer::Tokenizer;

fn show(name: &str, m: &Mask) {
    println!("{name}:");
    for i in 0..m.len() {
        let row: String = (0..m.len())
            .map(|j| if m.get(i, j) { '#' } else { '.' })
            .collect();
        println!("  {row}");
    }
}

fn main() -> kg_entail::Result<()> {
    let kg1 = KnowledgeGraph::from_triples(
        [RelTriple::new("The Rolling Stones", "genre", "Rock")],
        [
            AttrTriple::new("The Rolling Stones", "website", "Rollingstones.com"),
            AttrTriple::new("The Rolling Stones", "years_active", "1962"),
        ],
        [],
    );
    let kg2 = KnowledgeGraph::from_triples(
        [RelTriple::new("Rolling Stones", "genre", "Rock music")],
        [AttrTriple::new("Rolling Stones", "active", "1962")],
        [],
    );
    let template: Template = "hard:? {MASK} . I know that".parse()?;
    let s1 = build_sequence("The Rolling Stones", &kg1, InfoKind::Attribute, 4)?;
    let s2 = build_sequence("Rolling Stones", &kg2, InfoKind::Attribute, 4)?;
    println!("units 1: {:?}", s1.text_units);
    println!("units 2: {:?}", s2.text_units);

    let texts = s1
        .text_units
        .iter()
        .chain(&s2.text_units)
        .map(String::as_str);
    let tok = Tokenizer::builder()
        .min_count(1)
        .force(template.words())
        .fit(texts);
    let pair = build_pair_input(&s1, &s2, &template, &tok, 64)?;
    let tokens: Vec<&str> = pair
        .tokens
        .iter()
        .map(|&t| tok.token(t).unwrap_or("?"))
        .collect();
    println!("tokens: {}", tokens.join(" "));
    println!(
        "entity 1 {:?}, template {:?}, entity 2 {:?}, mask at {:?}",
        pair.span_e1, pair.span_template, pair.span_e2, pair.mask_token_index
    );
    show("m0", &pair.masks.m0);
    show("m1", &pair.masks.m1);
    show("m2", &pair.masks.m2);
    Ok(())
}
