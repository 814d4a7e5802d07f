//! Candidate selection, confidence-gated re-ranking and ranking metrics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::kg::{AlignmentSeeds, KnowledgeGraph};
use crate::sequence::{build_sequence, InfoKind};

/// Entity embeddings, stored unit-normalised for cosine scoring.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    names: Vec<String>,
    index: HashMap<String, usize>,
    unit: Array2<f64>,
}

fn normalise(v: ArrayView1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v.mapv(|x| x / n)
    } else {
        v.to_owned()
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    normalise(a).dot(&normalise(b))
}

impl EmbeddingTable {
    pub fn new(names: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if names.len() != vectors.nrows() {
            return Err(Error::Shape(format!(
                "{} names for {} vectors",
                names.len(),
                vectors.nrows()
            )));
        }
        let mut unit = vectors;
        for mut row in unit.rows_mut() {
            let n = normalise(row.view());
            row.assign(&n);
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(Self { names, index, unit })
    }

    /// Single-entity embeddings of `names` built from `kind` sequences of `kg`.
    pub fn compute(
        model: &Model,
        kg: &KnowledgeGraph,
        names: &[String],
        kind: InfoKind,
        max_units: usize,
    ) -> Result<Self> {
        let rows: Vec<Array1<f64>> = names
            .par_iter()
            .map(|n| model.embed_sequence(&build_sequence(n, kg, kind, max_units)?))
            .collect::<Result<_>>()?;
        let dim = model.config.emb_size;
        let mut m = Array2::zeros((names.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).assign(r);
        }
        Self::new(names.to_vec(), m)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Unit-length embedding of row `i`.
    pub fn unit(&self, i: usize) -> ArrayView1<'_, f64> {
        self.unit.row(i)
    }

    pub fn get(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        self.index_of(name).map(|i| self.unit(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Row in the candidate table; breaks ties.
    pub index: usize,
    pub entity: String,
    pub cosine: f64,
}

/// The `k` rows of `table` most cosine-similar to `query`, best first, ties
/// by row. Rows for which `skip` holds are passed over.
pub fn top_k(
    query: ArrayView1<f64>,
    table: &EmbeddingTable,
    k: usize,
    skip: impl Fn(usize) -> bool,
) -> Vec<Candidate> {
    let q = normalise(query);
    let mut all: Vec<(usize, f64)> = (0..table.len())
        .filter(|&i| !skip(i))
        .map(|i| (i, q.dot(&table.unit(i))))
        .collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < all.len() {
        all.select_nth_unstable_by(k, order);
        all.truncate(k);
    }
    all.sort_by(order);
    all.into_iter()
        .map(|(i, c)| Candidate {
            index: i,
            entity: table.names[i].clone(),
            cosine: c,
        })
        .collect()
}

/// Exact top-`c_size` candidates by cosine.
pub fn select_candidates(
    query: ArrayView1<f64>,
    table: &EmbeddingTable,
    c_size: usize,
) -> Result<Vec<Candidate>> {
    if c_size == 0 {
        return Err(Error::Argument("c_size must be at least 1".into()));
    }
    if table.is_empty() {
        return Err(Error::Argument("no candidate entities".into()));
    }
    // one warning per process; the same oversize applies to every query
    static OVERSIZE: std::sync::Once = std::sync::Once::new();
    if c_size > table.len() {
        OVERSIZE.call_once(|| {
            log::warn!(
                "c_size {c_size} exceeds {} candidate entities; returning all",
                table.len()
            )
        });
    }
    Ok(top_k(query, table, c_size, |_| false))
}

/// Ranking for one query, before and after re-ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub query: String,
    /// Embedding order.
    pub candidates: Vec<Candidate>,
    pub confidence: f64,
    pub reranked: bool,
    pub final_order: Vec<String>,
    /// Positive-class probabilities aligned with `candidates`.
    pub entailment_scores: Option<Vec<f64>>,
}

/// Orders `candidates` by `scorer` if the best cosine is below `delta`,
/// ties broken by cosine and then by row. `scorer` is only called when
/// re-ranking happens.
pub fn rerank(
    query: &str,
    candidates: Vec<Candidate>,
    delta: f64,
    mut scorer: impl FnMut(&Candidate) -> Result<f64>,
) -> Result<RankingResult> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Argument(format!("threshold {delta} outside [0, 1]")));
    }
    let confidence = candidates
        .iter()
        .map(|c| c.cosine)
        .fold(f64::NEG_INFINITY, f64::max);
    let reranked = confidence < delta;
    let (final_order, entailment_scores) = if reranked {
        let scores: Vec<f64> = candidates.iter().map(&mut scorer).collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then(candidates[b].cosine.total_cmp(&candidates[a].cosine))
                .then(candidates[a].index.cmp(&candidates[b].index))
        });
        (
            order
                .iter()
                .map(|&i| candidates[i].entity.clone())
                .collect(),
            Some(scores),
        )
    } else {
        (candidates.iter().map(|c| c.entity.clone()).collect(), None)
    };
    Ok(RankingResult {
        query: query.to_string(),
        candidates,
        confidence,
        reranked,
        final_order,
        entailment_scores,
    })
}

/// A query with its candidates in final order.
pub trait RankedList {
    fn query(&self) -> &str;
    fn ranked(&self) -> &[String];
}

impl RankedList for RankingResult {
    fn query(&self) -> &str {
        &self.query
    }

    fn ranked(&self) -> &[String] {
        &self.final_order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hits_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub n_queries: usize,
}

impl EvalReport {
    pub fn hits(&self, k: usize) -> f64 {
        self.hits_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8}", "metric", "value")?;
        for (k, v) in &self.hits_at {
            writeln!(f, "{:<10} {:>8.4}", format!("Hits@{k}"), v)?;
        }
        writeln!(f, "{:<10} {:>8.4}", "MRR", self.mrr)?;
        write!(f, "{:<10} {:>8}", "queries", self.n_queries)
    }
}

/// Hits@K and MRR over the gold pairs. A gold entity missing from a
/// ranking counts as reciprocal rank 0.
pub fn evaluate<R: RankedList>(
    results: &[R],
    gold: &AlignmentSeeds,
    ks: &[usize],
) -> Result<EvalReport> {
    evaluate_pairs(results, gold.pairs(), ks)
}

pub fn evaluate_pairs<R: RankedList>(
    results: &[R],
    gold: &[(String, String)],
    ks: &[usize],
) -> Result<EvalReport> {
    if gold.is_empty() {
        return Err(Error::Evaluation("no gold pairs to evaluate".into()));
    }
    if ks.contains(&0) {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    let by_query: HashMap<&str, &[String]> =
        results.iter().map(|r| (r.query(), r.ranked())).collect();
    let mut ranks = Vec::with_capacity(gold.len());
    for (q, target) in gold {
        let ranked = by_query
            .get(q.as_str())
            .ok_or_else(|| Error::Evaluation(format!("no ranking for query {q:?}")))?;
        ranks.push(ranked.iter().position(|c| c == target).map(|p| p + 1));
    }
    let n = gold.len() as f64;
    let hits_at = ks
        .iter()
        .map(|&k| {
            (
                k,
                ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / n,
            )
        })
        .collect();
    // summed in a fixed order so the mean does not depend on query order
    let mut rr: Vec<f64> = ranks
        .iter()
        .map(|r| r.map_or(0.0, |r| 1.0 / r as f64))
        .collect();
    rr.sort_by(f64::total_cmp);
    let mrr = rr.iter().sum::<f64>() / n;
    Ok(EvalReport {
        hits_at,
        mrr,
        n_queries: gold.len(),
    })
}

/// How queries are aligned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignSettings {
    pub kind: InfoKind,
    pub c_size: usize,
    pub delta: f64,
    pub max_units: usize,
    /// Skip re-ranking altogether.
    pub embedding_only: bool,
    /// Score with the mean of both pair directions.
    pub symmetric: bool,
}

impl Default for AlignSettings {
    fn default() -> Self {
        Self {
            kind: InfoKind::Relational,
            c_size: 64,
            delta: 0.9,
            max_units: 32,
            embedding_only: false,
            symmetric: false,
        }
    }
}

/// The two graphs and which of their entities take part in alignment.
#[derive(Debug, Clone, Copy)]
pub struct AlignTask<'a> {
    pub kg1: &'a KnowledgeGraph,
    pub kg2: &'a KnowledgeGraph,
    pub queries: &'a [String],
    /// KG2 entities that may be returned.
    pub universe: &'a [String],
}

/// Candidate lists for every query, in embedding order.
pub fn candidate_lists(
    model: &Model,
    task: &AlignTask,
    s: &AlignSettings,
) -> Result<Vec<(String, Vec<Candidate>)>> {
    let q = EmbeddingTable::compute(model, task.kg1, task.queries, s.kind, s.max_units)?;
    let t = EmbeddingTable::compute(model, task.kg2, task.universe, s.kind, s.max_units)?;
    task.queries
        .iter()
        .enumerate()
        .map(|(i, name)| Ok((name.clone(), select_candidates(q.unit(i), &t, s.c_size)?)))
        .collect()
}

/// Positive-class probability of the pair `(query, candidate)`.
pub fn pair_score(
    model: &Model,
    task: &AlignTask,
    s: &AlignSettings,
    query: &str,
    candidate: &str,
) -> Result<f64> {
    let a = build_sequence(query, task.kg1, s.kind, s.max_units)?;
    let b = build_sequence(candidate, task.kg2, s.kind, s.max_units)?;
    let forward = model.positive_prob(&model.pair_input(&a, &b)?)?;
    if !s.symmetric {
        return Ok(forward);
    }
    let backward = model.positive_prob(&model.pair_input(&b, &a)?)?;
    Ok(0.5 * (forward + backward))
}

/// Scores of every candidate of the queries whose confidence is below
/// `delta`; other queries get `None`.
pub fn score_lists(
    model: &Model,
    task: &AlignTask,
    s: &AlignSettings,
    lists: &[(String, Vec<Candidate>)],
    delta: f64,
) -> Result<Vec<Option<Vec<f64>>>> {
    let jobs: Vec<(usize, usize)> = lists
        .iter()
        .enumerate()
        .filter(|(_, (_, c))| c.iter().map(|c| c.cosine).fold(f64::NEG_INFINITY, f64::max) < delta)
        .flat_map(|(qi, (_, c))| (0..c.len()).map(move |ci| (qi, ci)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(qi, ci)| pair_score(model, task, s, &lists[qi].0, &lists[qi].1[ci].entity))
        .collect::<Result<_>>()?;
    let mut out: Vec<Option<Vec<f64>>> = vec![None; lists.len()];
    for (&(qi, _), v) in jobs.iter().zip(scores) {
        out[qi].get_or_insert_with(Vec::new).push(v);
    }
    Ok(out)
}

/// Re-ranks precomputed lists at threshold `delta`, keeping the first
/// `c_size` candidates of each.
pub fn apply_threshold(
    lists: &[(String, Vec<Candidate>)],
    scores: &[Option<Vec<f64>>],
    delta: f64,
    c_size: usize,
) -> Result<Vec<RankingResult>> {
    lists
        .iter()
        .zip(scores)
        .map(|((q, cands), sc)| {
            let cands: Vec<Candidate> = cands.iter().take(c_size).cloned().collect();
            let mut k = 0;
            rerank(q, cands, delta, |_| {
                let v = sc.as_ref().and_then(|s| s.get(k).copied()).ok_or_else(|| {
                    Error::Evaluation(format!("no entailment score for query {q:?}"))
                });
                k += 1;
                v
            })
        })
        .collect()
}

/// Full inference: embedding candidates, then confidence-gated re-ranking.
pub fn align(model: &Model, task: &AlignTask, s: &AlignSettings) -> Result<Vec<RankingResult>> {
    let lists = candidate_lists(model, task, s)?;
    let delta = if s.embedding_only { 0.0 } else { s.delta };
    let scores = score_lists(model, task, s, &lists, delta)?;
    apply_threshold(&lists, &scores, delta, s.c_size)
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub query: String,
    pub rank: usize,
    pub candidate: String,
    pub score: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Emb,
    Rerank,
}

impl Stage {
    fn as_str(self) -> &'static str {
        match self {
            Stage::Emb => "emb",
            Stage::Rerank => "rerank",
        }
    }
}

/// Rankings read back from a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRanking {
    pub query: String,
    pub ranked: Vec<String>,
}

impl RankedList for StoredRanking {
    fn query(&self) -> &str {
        &self.query
    }

    fn ranked(&self) -> &[String] {
        &self.ranked
    }
}

pub fn prediction_rows(results: &[RankingResult]) -> Vec<PredictionRow> {
    let mut rows = Vec::new();
    for r in results {
        let by_name: HashMap<&str, usize> = r
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (c.entity.as_str(), i))
            .collect();
        for (rank, cand) in r.final_order.iter().enumerate() {
            let i = by_name[cand.as_str()];
            let (score, stage) = match &r.entailment_scores {
                Some(s) => (s[i], Stage::Rerank),
                None => (r.candidates[i].cosine, Stage::Emb),
            };
            rows.push(PredictionRow {
                query: r.query.clone(),
                rank: rank + 1,
                candidate: cand.clone(),
                score,
                stage,
            });
        }
    }
    rows
}

pub const CONFIG_HASH_PREFIX: &str = "# config_hash=";

/// Writes `query  rank  candidate  score  stage` rows after a config-hash line.
pub fn write_predictions(
    path: impl AsRef<Path>,
    config_hash: &str,
    results: &[RankingResult],
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(w, "{CONFIG_HASH_PREFIX}{config_hash}").map_err(io)?;
    for row in prediction_rows(results) {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            row.query,
            row.rank,
            row.candidate,
            row.score,
            row.stage.as_str()
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a predictions file; returns its config hash and the rankings.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<(String, Vec<StoredRanking>)> {
    let path = path.as_ref();
    let parse = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let r = BufReader::new(fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let mut hash = None;
    let mut out: Vec<StoredRanking> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let n = i + 1;
        if let Some(h) = line.strip_prefix(CONFIG_HASH_PREFIX) {
            hash = Some(h.to_string());
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(parse(n, format!("expected 5 fields, found {}", f.len())));
        }
        let rank: usize = f[1]
            .parse()
            .map_err(|_| parse(n, format!("bad rank {:?}", f[1])))?;
        f[3].parse::<f64>()
            .map_err(|_| parse(n, format!("bad score {:?}", f[3])))?;
        if f[4] != "emb" && f[4] != "rerank" {
            return Err(parse(n, format!("bad stage {:?}", f[4])));
        }
        match out.last_mut() {
            Some(last) if last.query == f[0] => {
                if rank != last.ranked.len() + 1 {
                    return Err(parse(n, format!("rank {rank} out of sequence")));
                }
                last.ranked.push(f[2].to_string());
            }
            _ => {
                if rank != 1 {
                    return Err(parse(
                        n,
                        format!("ranking for {:?} starts at rank {rank}", f[0]),
                    ));
                }
                out.push(StoredRanking {
                    query: f[0].to_string(),
                    ranked: vec![f[2].to_string()],
                });
            }
        }
    }
    let hash = hash.ok_or_else(|| parse(1, "missing config hash header".into()))?;
    Ok((hash, out))
}
