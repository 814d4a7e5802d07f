//! Synthetic paired knowledge graphs with a known gold alignment.
//!
//! The first graph is random: entity names are short phrases over a shared
//! pseudo-word pool (so names overlap), relational triples connect random
//! entity pairs and attribute triples carry years, numbers, codes and URLs.
//! The second graph is a noisy copy: names may receive a character edit,
//! triples may be dropped and attribute values may be rewritten. Every
//! second-graph name carries [`KG2_SUFFIX`].

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{AlignmentSeeds, AttrTriple, KnowledgeGraph, RelTriple, SplitTag};

/// Appended to every entity name of the second graph.
pub const KG2_SUFFIX: &str = " #2";

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

const RELATIONS: &[&str] = &[
    "affiliation",
    "birthPlace",
    "capital",
    "country",
    "founder",
    "genre",
    "location",
    "member",
    "partner",
    "predecessor",
    "successor",
    "team",
];

#[derive(Debug, Clone, Copy)]
enum ValueKind {
    Year,
    Number,
    Code,
    Url,
}

const ATTRIBUTES: &[(&str, ValueKind)] = &[
    ("activeYears", ValueKind::Year),
    ("code", ValueKind::Code),
    ("foundingYear", ValueKind::Year),
    ("population", ValueKind::Number),
    ("website", ValueKind::Url),
    ("motto", ValueKind::Code),
    ("area", ValueKind::Number),
    ("homepage", ValueKind::Url),
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Probability that a second-graph name receives one character edit.
    pub name_perturbation: f64,
    /// Probability that a triple is missing from the second graph.
    pub triple_dropout: f64,
    /// Probability that a kept attribute value receives one character edit.
    pub value_rewrite: f64,
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig {
        name_perturbation: 0.0,
        triple_dropout: 0.0,
        value_rewrite: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("name_perturbation", self.name_perturbation),
            ("triple_dropout", self.triple_dropout),
            ("value_rewrite", self.value_rewrite),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_entities: usize,
    /// Relational triples per entity.
    pub rel_density: f64,
    /// Attribute triples per entity.
    pub attr_density: f64,
    pub noise: NoiseConfig,
    /// Size of the pseudo-word pool names are drawn from; `None` picks
    /// `max(12, n_entities / 4)`.
    pub word_pool: Option<usize>,
    pub words_per_name: usize,
    pub n_relations: usize,
    pub n_attributes: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_entities: 200,
            rel_density: 3.0,
            attr_density: 3.0,
            noise: NoiseConfig::NONE,
            word_pool: None,
            words_per_name: 2,
            n_relations: 8,
            n_attributes: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub gold: AlignmentSeeds,
}

/// Generates a graph pair with the default shape parameters.
pub fn generate_synthetic_pair(
    n_entities: usize,
    rel_density: f64,
    attr_density: f64,
    noise: NoiseConfig,
    rng_seed: u64,
) -> Result<SyntheticPair> {
    generate(
        &SyntheticConfig {
            n_entities,
            rel_density,
            attr_density,
            noise,
            ..SyntheticConfig::default()
        },
        rng_seed,
    )
}

pub fn generate(cfg: &SyntheticConfig, rng_seed: u64) -> Result<SyntheticPair> {
    let n = cfg.n_entities;
    if n < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 entities, got {n}"
        )));
    }
    if !(cfg.rel_density > 0.0 && cfg.attr_density > 0.0) {
        return Err(Error::Argument("triple densities must be positive".into()));
    }
    if cfg.words_per_name == 0 {
        return Err(Error::Argument("words_per_name must be at least 1".into()));
    }
    cfg.noise.validate()?;
    let n_relations = cfg.n_relations.clamp(1, RELATIONS.len());
    let n_attributes = cfg.n_attributes.clamp(1, ATTRIBUTES.len());

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pool_size = cfg.word_pool.unwrap_or((n / 4).max(12)).max(2);
    let words = word_pool(&mut rng, pool_size);

    // unique names
    let mut taken = HashSet::new();
    let mut names = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while names.len() < n {
        let mut parts: Vec<String> = (0..cfg.words_per_name)
            .map(|_| words[rng.gen_range(0..words.len())].clone())
            .collect();
        attempts += 1;
        if attempts > 50 * n {
            // pool too small for unique phrases; disambiguate with a number
            parts.push(names.len().to_string());
        }
        let name = parts.join(" ");
        if taken.insert(name.clone()) {
            names.push(name);
        }
    }

    let n_rel = (cfg.rel_density * n as f64).round() as usize;
    let max_rel = n * (n - 1) * n_relations;
    let n_rel = n_rel.min(max_rel);
    let mut seen = HashSet::new();
    let mut rel: Vec<(usize, usize, usize)> = Vec::with_capacity(n_rel);
    while rel.len() < n_rel {
        let h = rng.gen_range(0..n);
        let t = rng.gen_range(0..n);
        if h == t {
            continue;
        }
        let r = rng.gen_range(0..n_relations);
        if seen.insert((h, r, t)) {
            rel.push((h, r, t));
        }
    }

    let n_attr = (cfg.attr_density * n as f64).round() as usize;
    let max_attr = n * n_attributes;
    let n_attr = n_attr.min(max_attr);
    let mut seen = HashSet::new();
    let mut attr: Vec<(usize, usize, String)> = Vec::with_capacity(n_attr);
    while attr.len() < n_attr {
        let e = rng.gen_range(0..n);
        let a = rng.gen_range(0..n_attributes);
        if seen.insert((e, a)) {
            let v = attribute_value(&mut rng, ATTRIBUTES[a].1, &words);
            attr.push((e, a, v));
        }
    }

    // second-graph names
    let mut taken2 = HashSet::new();
    let mut names2 = Vec::with_capacity(n);
    for name in &names {
        let mut candidate = name.clone();
        if rng.gen_bool(cfg.noise.name_perturbation) {
            for _ in 0..8 {
                let edited = perturb_phrase(&mut rng, name);
                if !taken.contains(&edited) && !taken2.contains(&edited) {
                    candidate = edited;
                    break;
                }
            }
        }
        let full = format!("{candidate}{KG2_SUFFIX}");
        taken2.insert(candidate);
        names2.push(full);
    }

    let kg1 = KnowledgeGraph::from_triples(
        rel.iter()
            .map(|&(h, r, t)| RelTriple::new(&names[h], RELATIONS[r], &names[t])),
        attr.iter()
            .map(|(e, a, v)| AttrTriple::new(&names[*e], ATTRIBUTES[*a].0, v)),
        names.iter().cloned(),
    );

    let mut rel2 = Vec::new();
    for &(h, r, t) in &rel {
        if !rng.gen_bool(cfg.noise.triple_dropout) {
            rel2.push(RelTriple::new(&names2[h], RELATIONS[r], &names2[t]));
        }
    }
    let mut attr2 = Vec::new();
    for (e, a, v) in &attr {
        if rng.gen_bool(cfg.noise.triple_dropout) {
            continue;
        }
        let value = if rng.gen_bool(cfg.noise.value_rewrite) {
            perturb_word(&mut rng, v)
        } else {
            v.clone()
        };
        attr2.push(AttrTriple::new(&names2[*e], ATTRIBUTES[*a].0, value));
    }
    let kg2 = KnowledgeGraph::from_triples(rel2, attr2, names2.iter().cloned());

    let gold = AlignmentSeeds::new(names.into_iter().zip(names2).collect(), SplitTag::Test)?;
    Ok(SyntheticPair { kg1, kg2, gold })
}

fn word_pool(rng: &mut ChaCha8Rng, size: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(*CONSONANTS.choose(rng).unwrap() as char);
            w.push(*VOWELS.choose(rng).unwrap() as char);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn attribute_value(rng: &mut ChaCha8Rng, kind: ValueKind, words: &[String]) -> String {
    match kind {
        ValueKind::Year => rng.gen_range(1800..2024).to_string(),
        ValueKind::Number => rng.gen_range(100..100_000).to_string(),
        ValueKind::Code => {
            let w = words.choose(rng).unwrap();
            format!("{}{}", w, rng.gen_range(1..100))
        }
        ValueKind::Url => format!("{}.com", words.choose(rng).unwrap()),
    }
}

fn perturb_phrase(rng: &mut ChaCha8Rng, phrase: &str) -> String {
    let mut parts: Vec<String> = phrase.split(' ').map(str::to_string).collect();
    let i = rng.gen_range(0..parts.len());
    parts[i] = perturb_word(rng, &parts[i]);
    parts.join(" ")
}

/// One random character edit (substitute, delete, insert or swap) that keeps
/// digits as digits and letters as letters.
fn perturb_word(rng: &mut ChaCha8Rng, word: &str) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return "x".to_string();
    }
    let replacement = |rng: &mut ChaCha8Rng, like: char| -> char {
        if like.is_ascii_digit() {
            (b'0' + rng.gen_range(0..10)) as char
        } else {
            (b'a' + rng.gen_range(0..26)) as char
        }
    };
    let i = rng.gen_range(0..chars.len());
    match rng.gen_range(0..4) {
        0 => {
            let old = chars[i];
            let mut c = replacement(rng, old);
            while c == old {
                c = replacement(rng, old);
            }
            chars[i] = c;
        }
        1 if chars.len() > 2 => {
            chars.remove(i);
        }
        2 if i + 1 < chars.len() && chars[i] != chars[i + 1] => chars.swap(i, i + 1),
        _ => {
            let c = replacement(rng, chars[i]);
            chars.insert(i, c);
        }
    }
    chars.into_iter().collect()
}
