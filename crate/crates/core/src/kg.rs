//! Knowledge-graph data model, tab-separated dataset I/O and seed splitting.
//!
//! Files follow the layout of the public DBP15K / SRPRS distributions:
//! relational triples as `head<TAB>relation<TAB>tail`, attribute triples as
//! `entity<TAB>attribute<TAB>value` and alignment links as `ent1<TAB>ent2`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttrTriple {
    pub entity: String,
    pub attribute: String,
    pub value: String,
}

impl RelTriple {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

impl AttrTriple {
    pub fn new(
        entity: impl Into<String>,
        attribute: impl Into<String>,
        value: impl Into<String>,
    ) -> Self {
        Self {
            entity: entity.into(),
            attribute: attribute.into(),
            value: value.into(),
        }
    }
}

/// One knowledge graph: entities, relation and attribute vocabularies and the
/// two deduplicated triple lists.
///
/// Entities are identified by their surface name. The entity index used for
/// deterministic tie-breaking elsewhere is the order of first appearance.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: IndexSet<String>,
    relations: BTreeSet<String>,
    attributes: BTreeSet<String>,
    relational_triples: Vec<RelTriple>,
    attribute_triples: Vec<AttrTriple>,
    // per-entity indices into the triple lists
    outgoing: Vec<Vec<usize>>,
    described: Vec<Vec<usize>>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        // entity order is part of the identity since it drives tie-breaking
        self.entities.iter().eq(other.entities.iter())
            && self.relations == other.relations
            && self.attributes == other.attributes
            && self.relational_triples == other.relational_triples
            && self.attribute_triples == other.attribute_triples
    }
}

impl KnowledgeGraph {
    /// Builds a graph from triples, dropping exact duplicates while keeping
    /// first-occurrence order. `extra_entities` adds entities that may have no
    /// triples at all; they are placed after the ones seen in triples.
    pub fn from_triples(
        relational: impl IntoIterator<Item = RelTriple>,
        attribute: impl IntoIterator<Item = AttrTriple>,
        extra_entities: impl IntoIterator<Item = String>,
    ) -> Self {
        let mut entities = IndexSet::new();
        let mut relations = BTreeSet::new();
        let mut attributes = BTreeSet::new();

        let mut seen = HashSet::new();
        let mut relational_triples = Vec::new();
        for t in relational {
            if seen.insert(t.clone()) {
                entities.insert(t.head.clone());
                entities.insert(t.tail.clone());
                relations.insert(t.relation.clone());
                relational_triples.push(t);
            }
        }
        let mut seen = HashSet::new();
        let mut attribute_triples = Vec::new();
        for t in attribute {
            if seen.insert(t.clone()) {
                entities.insert(t.entity.clone());
                attributes.insert(t.attribute.clone());
                attribute_triples.push(t);
            }
        }
        for e in extra_entities {
            entities.insert(e);
        }

        let mut outgoing = vec![Vec::new(); entities.len()];
        for (i, t) in relational_triples.iter().enumerate() {
            outgoing[entities.get_index_of(&t.head).unwrap()].push(i);
        }
        let mut described = vec![Vec::new(); entities.len()];
        for (i, t) in attribute_triples.iter().enumerate() {
            described[entities.get_index_of(&t.entity).unwrap()].push(i);
        }

        Self {
            entities,
            relations,
            attributes,
            relational_triples,
            attribute_triples,
            outgoing,
            described,
        }
    }

    pub fn entities(&self) -> &IndexSet<String> {
        &self.entities
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entities.get_index_of(name)
    }

    pub fn entity_name(&self, index: usize) -> Option<&str> {
        self.entities.get_index(index).map(String::as_str)
    }

    pub fn relations(&self) -> &BTreeSet<String> {
        &self.relations
    }

    pub fn attributes(&self) -> &BTreeSet<String> {
        &self.attributes
    }

    pub fn relational_triples(&self) -> &[RelTriple] {
        &self.relational_triples
    }

    pub fn attribute_triples(&self) -> &[AttrTriple] {
        &self.attribute_triples
    }

    /// Relational triples with `entity` as head.
    pub fn outgoing(&self, entity: usize) -> impl Iterator<Item = &RelTriple> {
        self.outgoing[entity]
            .iter()
            .map(move |&i| &self.relational_triples[i])
    }

    /// Attribute triples describing `entity`.
    pub fn attribute_facts(&self, entity: usize) -> impl Iterator<Item = &AttrTriple> {
        self.described[entity]
            .iter()
            .map(move |&i| &self.attribute_triples[i])
    }

    /// Returns a copy with `extra` entities added to the entity set.
    pub fn with_entities(&self, extra: impl IntoIterator<Item = String>) -> Self {
        let extra: Vec<String> = self.entities.iter().cloned().chain(extra).collect();
        Self::from_triples(
            self.relational_triples.clone(),
            self.attribute_triples.clone(),
            extra,
        )
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

impl fmt::Display for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "|E|={} |R|={} |A|={} |Tr|={} |Ta|={}",
            self.entities.len(),
            self.relations.len(),
            self.attributes.len(),
            self.relational_triples.len(),
            self.attribute_triples.len()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

/// A one-to-one set of aligned entity pairs `(kg1 entity, kg2 entity)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentSeeds {
    pairs: Vec<(String, String)>,
    split: SplitTag,
}

impl AlignmentSeeds {
    pub fn new(pairs: Vec<(String, String)>, split: SplitTag) -> Result<Self> {
        check_one_to_one(&pairs)?;
        Ok(Self { pairs, split })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Map from kg1 entity to its aligned kg2 entity.
    pub fn as_map(&self) -> HashMap<&str, &str> {
        self.pairs
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect()
    }
}

fn check_one_to_one(pairs: &[(String, String)]) -> Result<()> {
    let mut left = HashSet::new();
    let mut right = HashSet::new();
    for (a, b) in pairs {
        if !left.insert(a) {
            return Err(Error::Argument(format!(
                "entity {a:?} appears in more than one pair"
            )));
        }
        if !right.insert(b) {
            return Err(Error::Argument(format!(
                "entity {b:?} appears in more than one pair"
            )));
        }
    }
    Ok(())
}

fn read_tsv<const N: usize>(path: &Path) -> Result<Vec<[String; N]>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != N {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected {N} tab-separated fields, found {}", fields.len()),
            });
        }
        rows.push(std::array::from_fn(|k| fields[k].to_string()));
    }
    Ok(rows)
}

/// Loads one graph from its relational and attribute triple files.
pub fn load_kg(
    rel_triples_path: impl AsRef<Path>,
    attr_triples_path: impl AsRef<Path>,
) -> Result<KnowledgeGraph> {
    let rel_path = rel_triples_path.as_ref();
    let attr_path = attr_triples_path.as_ref();
    let rel = read_tsv::<3>(rel_path)?;
    let attr = read_tsv::<3>(attr_path)?;
    if rel.is_empty() && attr.is_empty() {
        return Err(Error::EmptyKg(format!(
            "{} and {} contain no triples",
            rel_path.display(),
            attr_path.display()
        )));
    }
    Ok(KnowledgeGraph::from_triples(
        rel.into_iter().map(|[h, r, t]| RelTriple {
            head: h,
            relation: r,
            tail: t,
        }),
        attr.into_iter().map(|[e, a, v]| AttrTriple {
            entity: e,
            attribute: a,
            value: v,
        }),
        std::iter::empty(),
    ))
}

fn check_field(s: &str, what: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::Argument(format!(
            "{what} {s:?} contains a tab or newline"
        )));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

/// Writes a graph in the same layout [`load_kg`] reads.
pub fn write_kg(
    kg: &KnowledgeGraph,
    rel_triples_path: impl AsRef<Path>,
    attr_triples_path: impl AsRef<Path>,
) -> Result<()> {
    let rel_path = rel_triples_path.as_ref();
    let mut w = create(rel_path)?;
    for t in kg.relational_triples() {
        check_field(&t.head, "entity")?;
        check_field(&t.relation, "relation")?;
        check_field(&t.tail, "entity")?;
        writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail)
            .map_err(|e| Error::io(rel_path, e))?;
    }
    w.flush().map_err(|e| Error::io(rel_path, e))?;

    let attr_path = attr_triples_path.as_ref();
    let mut w = create(attr_path)?;
    for t in kg.attribute_triples() {
        check_field(&t.entity, "entity")?;
        check_field(&t.attribute, "attribute")?;
        check_field(&t.value, "value")?;
        writeln!(w, "{}\t{}\t{}", t.entity, t.attribute, t.value)
            .map_err(|e| Error::io(attr_path, e))?;
    }
    w.flush().map_err(|e| Error::io(attr_path, e))
}

/// Reads a two-column alignment link file.
pub fn load_links(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    Ok(read_tsv::<2>(path.as_ref())?
        .into_iter()
        .map(|[a, b]| (a, b))
        .collect())
}

pub fn write_links(pairs: &[(String, String)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for (a, b) in pairs {
        check_field(a, "entity")?;
        check_field(b, "entity")?;
        writeln!(w, "{a}\t{b}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Train / validation / test partition of a seed list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSplit {
    pub train: AlignmentSeeds,
    pub validation: AlignmentSeeds,
    pub test: AlignmentSeeds,
}

/// Shuffles `pairs` with a seeded generator and cuts it into train,
/// validation and test. `round(train_ratio * n)` pairs go to training, of
/// which `round(val_ratio_of_train * n_train)` are held out for validation.
pub fn split_seeds(
    pairs: &[(String, String)],
    train_ratio: f64,
    val_ratio_of_train: f64,
    rng_seed: u64,
) -> Result<SeedSplit> {
    if !(train_ratio > 0.0 && train_ratio <= 1.0) {
        return Err(Error::Argument(format!(
            "train_ratio must be in (0, 1], got {train_ratio}"
        )));
    }
    if !(0.0..1.0).contains(&val_ratio_of_train) {
        return Err(Error::Argument(format!(
            "val_ratio_of_train must be in [0, 1), got {val_ratio_of_train}"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Argument("no alignment pairs to split".into()));
    }
    check_one_to_one(pairs)?;

    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));

    let n_train_total = ((train_ratio * pairs.len() as f64).round() as usize).min(pairs.len());
    let n_val = ((val_ratio_of_train * n_train_total as f64).round() as usize).min(n_train_total);
    let test = shuffled.split_off(n_train_total);
    let train = shuffled.split_off(n_val);
    let validation = shuffled;

    Ok(SeedSplit {
        train: AlignmentSeeds {
            pairs: train,
            split: SplitTag::Train,
        },
        validation: AlignmentSeeds {
            pairs: validation,
            split: SplitTag::Validation,
        },
        test: AlignmentSeeds {
            pairs: test,
            split: SplitTag::Test,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn dedups_and_unions_entities() {
        let dir = tempfile::tempdir().unwrap();
        let rel_body = "a\tr1\tb\nb\tr2\tc\na\tr1\tb\n";
        let rel = write(dir.path(), "rel", rel_body);
        let attr = write(dir.path(), "attr", "d\tage\t12\n");
        let kg = load_kg(&rel, &attr).unwrap();
        assert_eq!(kg.relational_triples().len(), 2);

        // oracle: naive set union over entity columns of both files
        let mut naive = BTreeSet::new();
        for line in rel_body.lines() {
            let f: Vec<&str> = line.split('\t').collect();
            naive.insert(f[0].to_string());
            naive.insert(f[2].to_string());
        }
        naive.insert("d".to_string());
        assert_eq!(kg.num_entities(), naive.len());
        assert_eq!(kg.num_entities(), 4);
    }

    #[test]
    fn empty_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rel = write(dir.path(), "rel", "");
        let attr = write(dir.path(), "attr", "");
        assert!(matches!(load_kg(&rel, &attr), Err(Error::EmptyKg(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let rel = write(dir.path(), "rel", "a\tr\tb\na\tr\n");
        let attr = write(dir.path(), "attr", "");
        match load_kg(&rel, &attr) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let r = load_kg(dir.path().join("nope"), dir.path().join("nada"));
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn round_trip_preserves_graph() {
        let kg = KnowledgeGraph::from_triples(
            vec![
                RelTriple::new("x y", "r", "z"),
                RelTriple::new("z", "q", "x y"),
            ],
            vec![
                AttrTriple::new("z", "born", "1962"),
                AttrTriple::new("w", "site", "w.com"),
            ],
            std::iter::empty(),
        );
        let dir = tempfile::tempdir().unwrap();
        let (r, a) = (dir.path().join("r"), dir.path().join("a"));
        write_kg(&kg, &r, &a).unwrap();
        assert_eq!(load_kg(&r, &a).unwrap(), kg);
    }

    #[test]
    fn extra_entities_are_kept() {
        let kg = KnowledgeGraph::from_triples(
            vec![RelTriple::new("a", "r", "b")],
            vec![],
            vec!["lonely".to_string()],
        );
        assert_eq!(kg.num_entities(), 3);
        assert_eq!(kg.outgoing(kg.entity_index("lonely").unwrap()).count(), 0);
    }

    fn pairs(n: usize) -> Vec<(String, String)> {
        (0..n).map(|i| (format!("a{i}"), format!("b{i}"))).collect()
    }

    #[test]
    fn split_thirty_seventy() {
        let s = split_seeds(&pairs(15_000), 0.3, 0.0, 7).unwrap();
        assert_eq!(s.train.len(), 4_500);
        assert_eq!(s.validation.len(), 0);
        assert_eq!(s.test.len(), 10_500);
    }

    #[test]
    fn split_all_train() {
        let s = split_seeds(&pairs(10), 1.0, 0.0, 1).unwrap();
        assert_eq!(s.train.len(), 10);
        assert!(s.test.is_empty());
    }

    #[test]
    fn split_is_seeded() {
        let p = pairs(100);
        let a = split_seeds(&p, 0.3, 0.1, 5).unwrap();
        let b = split_seeds(&p, 0.3, 0.1, 5).unwrap();
        let c = split_seeds(&p, 0.3, 0.1, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train.pairs(), c.train.pairs());
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let p = pairs(4);
        assert!(split_seeds(&p, 0.0, 0.0, 1).is_err());
        assert!(split_seeds(&p, 1.5, 0.0, 1).is_err());
        assert!(split_seeds(&p, 0.5, 1.0, 1).is_err());
        assert!(split_seeds(&[], 0.5, 0.0, 1).is_err());
    }

    #[test]
    fn seeds_must_be_one_to_one() {
        let p = vec![
            ("a".to_string(), "x".to_string()),
            ("b".to_string(), "x".to_string()),
        ];
        assert!(AlignmentSeeds::new(p, SplitTag::Train).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..200, tr in 0.01f64..=1.0, va in 0.0f64..0.99, seed in any::<u64>()) {
            let p = pairs(n);
            let s = split_seeds(&p, tr, va, seed).unwrap();
            let expected_train = ((tr * n as f64).round() as usize).min(n);
            prop_assert_eq!(s.train.len() + s.validation.len(), expected_train);
            let mut all: Vec<_> = s.train.pairs().iter()
                .chain(s.validation.pairs())
                .chain(s.test.pairs())
                .cloned()
                .collect();
            prop_assert_eq!(all.len(), n);
            all.sort();
            let mut orig = p.clone();
            orig.sort();
            prop_assert_eq!(all, orig);
        }
    }
}
