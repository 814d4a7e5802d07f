//! Entity sequences, templated pair inputs and attention masks.
//!
//! A pair input is laid out as
//!
//! ```text
//! [CLS] | S(e) ... [SEP] | template | S(e') ... [SEP]
//!   0   |    span_e1     | span_tpl |     span_e2
//! ```
//!
//! and carries three visibility masks: `m0` over the whole pair, `m1` over
//! `[CLS]` plus the first entity, `m2` over `[CLS]` plus the second entity.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::tokenizer::{self, Tokenizer};

/// Which triples a sequence is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoKind {
    Relational,
    Attribute,
}

impl InfoKind {
    pub const BOTH: [InfoKind; 2] = [InfoKind::Relational, InfoKind::Attribute];

    pub fn other(self) -> InfoKind {
        match self {
            InfoKind::Relational => InfoKind::Attribute,
            InfoKind::Attribute => InfoKind::Relational,
        }
    }
}

impl fmt::Display for InfoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InfoKind::Relational => "relational",
            InfoKind::Attribute => "attribute",
        })
    }
}

impl FromStr for InfoKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relational" | "rel" => Ok(InfoKind::Relational),
            "attribute" | "attr" => Ok(InfoKind::Attribute),
            _ => Err(Error::Config(format!("unknown info kind {s:?}"))),
        }
    }
}

/// The entity name followed by its neighbours (relational) or attribute
/// values, ordered by relation/attribute name and then by the unit itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextSequence {
    pub entity: String,
    pub kind: InfoKind,
    pub text_units: Vec<String>,
    pub terminated: bool,
}

pub fn build_sequence(
    entity: &str,
    kg: &KnowledgeGraph,
    kind: InfoKind,
    max_units: usize,
) -> Result<TextSequence> {
    if max_units == 0 {
        return Err(Error::Argument("max_units must be at least 1".into()));
    }
    let idx = kg
        .entity_index(entity)
        .ok_or_else(|| Error::UnknownEntity(entity.to_string()))?;
    let mut keyed: Vec<(&str, &str)> = match kind {
        InfoKind::Relational => kg
            .outgoing(idx)
            .map(|t| (t.relation.as_str(), t.tail.as_str()))
            .collect(),
        InfoKind::Attribute => kg
            .attribute_facts(idx)
            .map(|t| (t.attribute.as_str(), t.value.as_str()))
            .collect(),
    };
    keyed.sort_unstable();

    let mut text_units = Vec::with_capacity(keyed.len().min(max_units - 1) + 1);
    text_units.push(entity.to_string());
    text_units.extend(
        keyed
            .into_iter()
            .take(max_units - 1)
            .map(|(_, u)| u.to_string()),
    );
    Ok(TextSequence {
        entity: entity.to_string(),
        kind,
        text_units,
        terminated: true,
    })
}

/// The connective inserted between the two entity sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    /// A lone `[SEP]`; no mask slot.
    None,
    /// Literal text with exactly one `{MASK}` placeholder.
    Hard { text: String },
    /// `[MASK]` followed by `length` learnable prompt tokens.
    Soft { length: usize },
}

pub const MASK_PLACEHOLDER: &str = "{MASK}";

impl Default for Template {
    fn default() -> Self {
        Template::Soft { length: 1 }
    }
}

impl Template {
    pub fn hard(text: impl Into<String>) -> Result<Self> {
        let t = Template::Hard { text: text.into() };
        t.validate()?;
        Ok(t)
    }

    pub fn has_mask(&self) -> bool {
        !matches!(self, Template::None)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Template::None => Ok(()),
            Template::Hard { text } => {
                let n = normalized_hard(text).matches(MASK_PLACEHOLDER).count();
                if n != 1 {
                    return Err(Error::Argument(format!(
                        "hard template needs exactly one {MASK_PLACEHOLDER} slot, found {n} in {text:?}"
                    )));
                }
                Ok(())
            }
            Template::Soft { length } => {
                if *length < 1 {
                    return Err(Error::Argument(
                        "soft template length must be at least 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Words of a hard template, for forcing them into the vocabulary.
    pub fn words(&self) -> Vec<String> {
        match self {
            Template::Hard { text } => normalized_hard(text)
                .split_whitespace()
                .filter(|w| *w != MASK_PLACEHOLDER)
                .map(str::to_string)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Template token ids and the offset of the mask slot within them.
    pub fn encode(&self, tok: &Tokenizer) -> Result<(Vec<u32>, Option<usize>)> {
        self.validate()?;
        match self {
            Template::None => Ok((vec![tokenizer::SEP], None)),
            Template::Soft { length } => {
                let mut ids = vec![tokenizer::MASK];
                for i in 0..*length {
                    ids.push(tok.prompt_id(i).ok_or_else(|| {
                        Error::Argument(format!(
                            "soft template length {length} exceeds the {} reserved prompt tokens",
                            tok.n_prompts()
                        ))
                    })?);
                }
                Ok((ids, Some(0)))
            }
            Template::Hard { text } => {
                let mut ids = Vec::new();
                let mut slot = None;
                for w in normalized_hard(text).split_whitespace() {
                    if w == MASK_PLACEHOLDER {
                        slot = Some(ids.len());
                        ids.push(tokenizer::MASK);
                    } else {
                        tok.tokenize_word(w, &mut ids);
                    }
                }
                Ok((ids, slot))
            }
        }
    }
}

// "[MASK]" is accepted as an alias; the slot is split off from adjacent
// punctuation so "? {MASK}." tokenizes as "?", slot, ".".
fn normalized_hard(text: &str) -> String {
    text.replace("[MASK]", MASK_PLACEHOLDER)
        .replace(MASK_PLACEHOLDER, &format!(" {MASK_PLACEHOLDER} "))
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Template::None => f.write_str("none"),
            Template::Hard { text } => write!(f, "hard:{text}"),
            Template::Soft { length } => write!(f, "soft:{length}"),
        }
    }
}

impl FromStr for Template {
    type Err = Error;
    /// `none`, `soft:<l>` or `hard:<text with {MASK}>`.
    fn from_str(s: &str) -> Result<Self> {
        let t = if s == "none" {
            Template::None
        } else if let Some(l) = s.strip_prefix("soft:") {
            Template::Soft {
                length: l
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad soft template length in {s:?}")))?,
            }
        } else if let Some(text) = s.strip_prefix("hard:") {
            Template::Hard {
                text: text.to_string(),
            }
        } else {
            return Err(Error::Config(format!("unknown template spec {s:?}")));
        };
        t.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(t)
    }
}

/// Square boolean visibility matrix; `true` means attention is allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    len: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn full(len: usize) -> Self {
        Self {
            len,
            allowed: vec![true; len * len],
        }
    }

    /// Allows attention among exactly the positions in `set`.
    pub fn among(len: usize, set: &[usize]) -> Self {
        let mut allowed = vec![false; len * len];
        for &i in set {
            for &j in set {
                allowed[i * len + j] = true;
            }
        }
        Self { len, allowed }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.len + j]
    }

    pub fn count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    /// Positions that may attend to at least one position.
    pub fn active_rows(&self) -> Vec<usize> {
        (0..self.len)
            .filter(|&i| {
                self.allowed[i * self.len..(i + 1) * self.len]
                    .iter()
                    .any(|&a| a)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    pub m0: Mask,
    pub m1: Mask,
    pub m2: Mask,
}

impl MaskMatrix {
    pub fn get(&self, which: MaskKind) -> &Mask {
        match which {
            MaskKind::Pair => &self.m0,
            MaskKind::First => &self.m1,
            MaskKind::Second => &self.m2,
        }
    }
}

/// The three masks of a pair input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskKind {
    /// `m0`: whole pair visible.
    Pair,
    /// `m1`: classification token and first entity.
    First,
    /// `m2`: classification token and second entity.
    Second,
}

impl MaskKind {
    pub const ALL: [MaskKind; 3] = [MaskKind::Pair, MaskKind::First, MaskKind::Second];
}

fn check_span(name: &str, r: &Range<usize>, len: usize) -> Result<()> {
    if r.start > r.end || r.end > len {
        return Err(Error::Argument(format!("{name} {r:?} outside [0, {len})")));
    }
    if r.contains(&0) {
        return Err(Error::Argument(format!(
            "{name} {r:?} overlaps the classification token"
        )));
    }
    Ok(())
}

fn overlaps(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.start < b.end && b.start < a.end
}

/// Builds the three masks. The template span is visible only under `m0`.
pub fn build_masks(
    span_e1: Range<usize>,
    span_template: Range<usize>,
    span_e2: Range<usize>,
    len: usize,
) -> Result<MaskMatrix> {
    check_span("span_e1", &span_e1, len)?;
    check_span("span_template", &span_template, len)?;
    check_span("span_e2", &span_e2, len)?;
    if overlaps(&span_e1, &span_template)
        || overlaps(&span_e1, &span_e2)
        || overlaps(&span_template, &span_e2)
    {
        return Err(Error::Argument(format!(
            "overlapping spans {span_e1:?}, {span_template:?}, {span_e2:?}"
        )));
    }
    let first: Vec<usize> = std::iter::once(0).chain(span_e1).collect();
    let second: Vec<usize> = std::iter::once(0).chain(span_e2).collect();
    Ok(MaskMatrix {
        m0: Mask::full(len),
        m1: Mask::among(len, &first),
        m2: Mask::among(len, &second),
    })
}

/// A tokenized `[CLS] S(e) [T] S(e')` input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairInput {
    pub tokens: Vec<u32>,
    pub span_e1: Range<usize>,
    pub span_template: Range<usize>,
    pub span_e2: Range<usize>,
    pub mask_token_index: Option<usize>,
    pub masks: MaskMatrix,
}

impl PairInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Segment ids under the full-pair mask: 1 on the second entity, else 0.
    pub fn segments(&self) -> Vec<usize> {
        (0..self.tokens.len())
            .map(|i| usize::from(self.span_e2.contains(&i)))
            .collect()
    }
}

struct Encoded {
    tokens: Vec<u32>,
    // tokens that truncation must keep (name plus terminator)
    protected: usize,
    terminated: bool,
}

impl Encoded {
    fn new(seq: &TextSequence, tok: &Tokenizer) -> Self {
        let (tokens, head) = tok.encode_units(&seq.text_units, seq.terminated);
        Self {
            tokens,
            protected: head + usize::from(seq.terminated),
            terminated: seq.terminated,
        }
    }

    fn truncated(&self, keep: usize) -> Vec<u32> {
        if keep >= self.tokens.len() {
            return self.tokens.clone();
        }
        if self.terminated {
            let mut v = self.tokens[..keep - 1].to_vec();
            v.push(tokenizer::SEP);
            v
        } else {
            self.tokens[..keep].to_vec()
        }
    }
}

pub const MIN_PAIR_LEN: usize = 8;

/// Joins two sequences with `template` into a pair input of at most
/// `max_len` tokens. Over budget, each side is cut in proportion to its
/// untruncated length, never into the entity name.
pub fn build_pair_input(
    s1: &TextSequence,
    s2: &TextSequence,
    template: &Template,
    tok: &Tokenizer,
    max_len: usize,
) -> Result<PairInput> {
    if max_len < MIN_PAIR_LEN {
        return Err(Error::Argument(format!(
            "max_len must be at least {MIN_PAIR_LEN}, got {max_len}"
        )));
    }
    let (tpl, slot) = template.encode(tok)?;
    let a = Encoded::new(s1, tok);
    let b = Encoded::new(s2, tok);

    let budget = max_len.saturating_sub(1 + tpl.len());
    if a.protected + b.protected > budget {
        return Err(Error::InputTooLong(format!(
            "entity names of {:?} and {:?} need {} tokens, budget is {budget}",
            s1.entity,
            s2.entity,
            a.protected + b.protected
        )));
    }
    let (ka, kb) = split_budget(
        a.tokens.len(),
        a.protected,
        b.tokens.len(),
        b.protected,
        budget,
    );
    let ta = a.truncated(ka);
    let tb = b.truncated(kb);

    let mut tokens = Vec::with_capacity(1 + ta.len() + tpl.len() + tb.len());
    tokens.push(tokenizer::CLS);
    let span_e1 = 1..1 + ta.len();
    tokens.extend(ta);
    let span_template = span_e1.end..span_e1.end + tpl.len();
    tokens.extend(tpl);
    let span_e2 = span_template.end..span_template.end + tb.len();
    tokens.extend(tb);

    let masks = build_masks(
        span_e1.clone(),
        span_template.clone(),
        span_e2.clone(),
        tokens.len(),
    )?;
    Ok(PairInput {
        mask_token_index: slot.map(|s| span_template.start + s),
        tokens,
        span_e1,
        span_template,
        span_e2,
        masks,
    })
}

/// Token counts `(keep_a, keep_b)` that fit `budget`, proportional to the
/// untruncated lengths and never below the protected prefixes.
fn split_budget(
    len_a: usize,
    min_a: usize,
    len_b: usize,
    min_b: usize,
    budget: usize,
) -> (usize, usize) {
    if len_a + len_b <= budget {
        return (len_a, len_b);
    }
    let share = budget * len_a / (len_a + len_b);
    let mut ka = share.clamp(min_a, len_a).min(budget - min_b);
    let mut kb = (budget - ka).min(len_b);
    if kb < min_b {
        kb = min_b;
        ka = budget - min_b;
    }
    // hand rounding slack back to the first side
    ka = (ka + (budget - ka - kb)).min(len_a);
    (ka, kb)
}

/// `[CLS] S(e)` for single-entity embedding, truncated to `max_len`.
pub fn build_single_input(seq: &TextSequence, tok: &Tokenizer, max_len: usize) -> Result<Vec<u32>> {
    let e = Encoded::new(seq, tok);
    let budget = max_len.saturating_sub(1);
    if e.protected > budget {
        return Err(Error::InputTooLong(format!(
            "entity name of {:?} needs {} tokens, budget is {budget}",
            seq.entity, e.protected
        )));
    }
    let mut tokens = vec![tokenizer::CLS];
    tokens.extend(e.truncated(budget));
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{AttrTriple, RelTriple};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stones() -> KnowledgeGraph {
        KnowledgeGraph::from_triples(
            vec![
                RelTriple::new("The Rolling Stones", "genre", "Rock"),
                RelTriple::new("The Rolling Stones", "bandMember", "Mick Jagger"),
                RelTriple::new("The Rolling Stones", "bandMember", "Keith Richards"),
            ],
            vec![
                AttrTriple::new("The Rolling Stones", "website", "Rollingstones.com"),
                AttrTriple::new("The Rolling Stones", "years_active", "1962"),
            ],
            vec!["Nobody".to_string()],
        )
    }

    fn tok_for(kg: &KnowledgeGraph) -> Tokenizer {
        let mut texts: Vec<String> = kg.entities().iter().cloned().collect();
        texts.extend(kg.attribute_triples().iter().map(|t| t.value.clone()));
        Tokenizer::builder()
            .min_count(1)
            .fit(texts.iter().map(String::as_str))
    }

    #[test]
    fn attribute_sequence_follows_attribute_order() {
        let s = build_sequence("The Rolling Stones", &stones(), InfoKind::Attribute, 10).unwrap();
        assert_eq!(
            s.text_units,
            ["The Rolling Stones", "Rollingstones.com", "1962"]
        );
        assert!(s.terminated);
    }

    #[test]
    fn relational_sequence_sorts_by_relation_then_unit() {
        let s = build_sequence("The Rolling Stones", &stones(), InfoKind::Relational, 10).unwrap();
        assert_eq!(
            s.text_units,
            [
                "The Rolling Stones",
                "Keith Richards",
                "Mick Jagger",
                "Rock"
            ]
        );
        let cut = build_sequence("The Rolling Stones", &stones(), InfoKind::Relational, 2).unwrap();
        assert_eq!(cut.text_units, ["The Rolling Stones", "Keith Richards"]);
    }

    #[test]
    fn empty_neighbourhood_is_name_only() {
        let s = build_sequence("Nobody", &stones(), InfoKind::Relational, 10).unwrap();
        assert_eq!(s.text_units, ["Nobody"]);
    }

    #[test]
    fn unknown_entity_is_an_error() {
        assert!(matches!(
            build_sequence("Beatles", &stones(), InfoKind::Relational, 4),
            Err(Error::UnknownEntity(_))
        ));
    }

    #[test]
    fn sequence_order_matches_naive_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let mut rel = Vec::new();
            for _ in 0..40 {
                let h = format!("e{}", rng.gen_range(0..6));
                let t = format!("e{}", rng.gen_range(0..6));
                let r = format!("r{}", rng.gen_range(0..4));
                rel.push(RelTriple::new(h, r, t));
            }
            let kg = KnowledgeGraph::from_triples(rel, vec![], std::iter::empty());
            for e in kg.entities() {
                let seq = build_sequence(e, &kg, InfoKind::Relational, 100).unwrap();
                // oracle: stable sort of (relation, neighbour) pairs
                let mut pairs: Vec<(String, String)> = kg
                    .relational_triples()
                    .iter()
                    .filter(|t| &t.head == e)
                    .map(|t| (t.relation.clone(), t.tail.clone()))
                    .collect();
                pairs.sort();
                let expected: Vec<String> = std::iter::once(e.clone())
                    .chain(pairs.into_iter().map(|p| p.1))
                    .collect();
                assert_eq!(seq.text_units, expected);
            }
        }
    }

    fn seq(units: &[&str]) -> TextSequence {
        TextSequence {
            entity: units[0].to_string(),
            kind: InfoKind::Relational,
            text_units: units.iter().map(|s| s.to_string()).collect(),
            terminated: true,
        }
    }

    #[test]
    fn none_template_is_a_lone_separator() {
        let kg = stones();
        let tok = tok_for(&kg);
        let p = build_pair_input(
            &seq(&["Rock"]),
            &seq(&["Nobody"]),
            &Template::None,
            &tok,
            32,
        )
        .unwrap();
        assert_eq!(p.span_template.len(), 1);
        assert_eq!(p.tokens[p.span_template.start], tokenizer::SEP);
        assert_eq!(p.mask_token_index, None);
    }

    #[test]
    fn hard_template_has_one_mask() {
        let kg = stones();
        let tok = tok_for(&kg);
        let t = Template::hard("? {MASK}. I know that").unwrap();
        let p = build_pair_input(&seq(&["Rock"]), &seq(&["Nobody"]), &t, &tok, 32).unwrap();
        let masks: Vec<usize> = p
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == tokenizer::MASK)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(masks.len(), 1);
        assert_eq!(p.mask_token_index, Some(masks[0]));
        assert!(p.span_e1.end <= masks[0] && masks[0] < p.span_e2.start);
        // "?", mask, ".", "I", "know", "that"
        assert_eq!(p.span_template.len(), 6);
    }

    #[test]
    fn bad_templates_are_rejected() {
        assert!(Template::hard("no slot").is_err());
        assert!(Template::hard("{MASK} and [MASK]").is_err());
        let kg = stones();
        let tok = tok_for(&kg);
        let r = build_pair_input(
            &seq(&["Rock"]),
            &seq(&["Rock"]),
            &Template::Soft { length: 0 },
            &tok,
            32,
        );
        assert!(matches!(r, Err(Error::Argument(_))));
        assert!("soft:0".parse::<Template>().is_err());
        assert_eq!(
            "soft:2".parse::<Template>().unwrap(),
            Template::Soft { length: 2 }
        );
        assert_eq!(
            "hard:? {MASK}. I know that"
                .parse::<Template>()
                .unwrap()
                .to_string(),
            "hard:? {MASK}. I know that"
        );
    }

    #[test]
    fn untruncated_length_is_sum_of_parts() {
        let kg = stones();
        let tok = tok_for(&kg);
        let s1 = seq(&["Mick Jagger"]);
        let s2 = seq(&["The Rolling Stones"]);
        let t = Template::Soft { length: 1 };
        let p = build_pair_input(&s1, &s2, &t, &tok, 32).unwrap();
        // oracle: re-tokenize each piece and count
        let n1 = tok.tokenize("Mick Jagger").len() + 1;
        let n2 = tok.tokenize("The Rolling Stones").len() + 1;
        let nt = 2;
        assert_eq!(p.len(), 1 + n1 + nt + n2);
        assert_eq!(p.span_e1.len(), n1);
        assert_eq!(p.span_e2.len(), n2);
    }

    #[test]
    fn truncation_keeps_names_and_budget() {
        let kg = stones();
        let tok = tok_for(&kg);
        let long1 = seq(&[
            "Mick Jagger",
            "Rock",
            "Rock",
            "Rock",
            "Rock",
            "Rock",
            "Rock",
            "Rock",
        ]);
        let long2 = seq(&["Nobody", "Rock", "Rock", "Rock"]);
        let p = build_pair_input(&long1, &long2, &Template::None, &tok, 12).unwrap();
        assert_eq!(p.len(), 12);
        let name = tok.tokenize("Mick Jagger");
        assert_eq!(&p.tokens[1..1 + name.len()], &name[..]);
        assert_eq!(p.tokens[p.span_e1.end - 1], tokenizer::SEP);
        assert_eq!(*p.tokens.last().unwrap(), tokenizer::SEP);
        // the longer side gives up more
        assert!(p.span_e1.len() >= p.span_e2.len());

        let long_name = seq(&["Mick Jagger Keith Richards Rock", "Rock"]);
        let r = build_pair_input(&long_name, &long2, &Template::None, &tok, 8);
        assert!(matches!(r, Err(Error::InputTooLong(_))));
        assert!(build_pair_input(&long1, &long2, &Template::None, &tok, 7).is_err());
    }

    #[test]
    fn minimal_mask_layout() {
        let m = build_masks(1..2, 2..3, 3..4, 4).unwrap();
        assert_eq!(m.m0.count(), 16);
        assert_eq!(m.m1.count(), 4);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.m1.get(i, j), i < 2 && j < 2);
            }
        }
        assert!(build_masks(1..3, 2..3, 3..4, 4).is_err());
        assert!(build_masks(1..2, 2..3, 3..5, 4).is_err());
    }

    #[test]
    fn swapping_sequences_swaps_span_lengths() {
        let kg = stones();
        let tok = tok_for(&kg);
        let a = seq(&["Mick Jagger", "Rock"]);
        let b = seq(&["The Rolling Stones"]);
        let t = Template::default();
        let p = build_pair_input(&a, &b, &t, &tok, 64).unwrap();
        let q = build_pair_input(&b, &a, &t, &tok, 64).unwrap();
        assert_eq!(p.span_e1.len(), q.span_e2.len());
        assert_eq!(p.span_e2.len(), q.span_e1.len());
    }

    #[test]
    fn single_input_starts_with_cls() {
        let kg = stones();
        let tok = tok_for(&kg);
        let s = build_sequence("The Rolling Stones", &kg, InfoKind::Attribute, 8).unwrap();
        let t = build_single_input(&s, &tok, 64).unwrap();
        assert_eq!(t[0], tokenizer::CLS);
        assert_eq!(*t.last().unwrap(), tokenizer::SEP);
        let p = build_pair_input(&s, &s, &Template::None, &tok, 64).unwrap();
        assert_eq!(&p.tokens[..p.span_e1.end], &t[..]);
    }

    proptest! {
        #[test]
        fn masks_match_set_product(len in 4usize..16, cuts in proptest::collection::vec(0usize..16, 3)) {
            let mut c: Vec<usize> = cuts.into_iter().map(|x| 1 + x % (len - 1)).collect();
            c.sort();
            let (a, b, d) = (c[0], c[1], c[2]);
            let e1 = 1..a;
            let tp = a..b;
            let e2 = b..d.max(b);
            let m = build_masks(e1.clone(), tp.clone(), e2.clone(), len).unwrap();
            // oracle: allow-set product built independently
            let allow1: std::collections::HashSet<usize> = std::iter::once(0).chain(e1.clone()).collect();
            let allow2: std::collections::HashSet<usize> = std::iter::once(0).chain(e2.clone()).collect();
            for i in 0..len {
                for j in 0..len {
                    prop_assert!(m.m0.get(i, j));
                    prop_assert_eq!(m.m1.get(i, j), allow1.contains(&i) && allow1.contains(&j));
                    prop_assert_eq!(m.m2.get(i, j), allow2.contains(&i) && allow2.contains(&j));
                    prop_assert_eq!(m.m1.get(i, j), m.m1.get(j, i));
                }
                if tp.contains(&i) {
                    for j in 0..len {
                        prop_assert!(!m.m1.get(i, j) && !m.m2.get(i, j));
                    }
                }
            }
        }

        #[test]
        fn pair_budget_and_layout(n1 in 1usize..12, n2 in 1usize..12, max_len in 8usize..40) {
            let kg = stones();
            let tok = tok_for(&kg);
            let a: Vec<&str> = std::iter::once("Rock").chain(std::iter::repeat("Nobody").take(n1)).collect();
            let b: Vec<&str> = std::iter::once("Rock").chain(std::iter::repeat("1962").take(n2)).collect();
            let p = build_pair_input(&seq(&a), &seq(&b), &Template::default(), &tok, max_len).unwrap();
            prop_assert!(p.len() <= max_len);
            prop_assert_eq!(p.span_e1.start, 1);
            prop_assert_eq!(p.span_e1.end, p.span_template.start);
            prop_assert_eq!(p.span_template.end, p.span_e2.start);
            prop_assert_eq!(p.span_e2.end, p.len());
            prop_assert_eq!(p.tokens[1], tok.id("Rock").unwrap());
            prop_assert_eq!(p.tokens[p.span_e2.start], tok.id("Rock").unwrap());
            // outside {cls} u span_e1, m1 rows and columns are empty
            for i in 0..p.len() {
                if i != 0 && !p.span_e1.contains(&i) {
                    for j in 0..p.len() {
                        prop_assert!(!p.masks.m1.get(i, j) && !p.masks.m1.get(j, i));
                    }
                }
            }
        }
    }
}
