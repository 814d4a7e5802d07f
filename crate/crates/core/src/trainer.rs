//! Hard-negative sampling and the cooperated, bi-directional training loop.
//!
//! Each training triple `(e, e+, e-)` is encoded as four pair inputs:
//! `T(e,e+)`, `T(e+,e)`, `T(e,e-)` and `T(e-,e)`. The embedding loss reads
//! `e` and `e+` from `T(e,e+)` under `m1`/`m2` and `e-` from `T(e,e-)`
//! under `m2`; the entailment losses read all four under `m0`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::checkpoint::{self, Checkpoint, OptimizerState};
use crate::encoder::heads::{self, positive_probability, positive_probability_grad};
use crate::encoder::{pair_view, transformer, Model, Weights};
use crate::error::{Error, Result};
use crate::inference::{align, evaluate_pairs, top_k, AlignSettings, AlignTask, EmbeddingTable};
use crate::kg::KnowledgeGraph;
use crate::objectives::{
    entailment_bce, entailment_bce_grad, margin_ranking_grad, prompt_margin_grad,
    prompt_margin_loss, total_loss, LossBreakdown, LossConfig, PromptScore, Reduction,
    TrainingTriple,
};
use crate::sequence::{build_sequence, InfoKind, MaskKind, PairInput};

/// Which sequence kinds the epochs use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KindSchedule {
    /// Relational and attribute epochs alternate.
    Cooperated,
    Only(InfoKind),
}

impl KindSchedule {
    pub fn kinds(self) -> Vec<InfoKind> {
        match self {
            KindSchedule::Cooperated => InfoKind::BOTH.to_vec(),
            KindSchedule::Only(k) => vec![k],
        }
    }
}

impl fmt::Display for KindSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KindSchedule::Cooperated => f.write_str("cooperated"),
            KindSchedule::Only(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for KindSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cooperated" {
            return Ok(KindSchedule::Cooperated);
        }
        s.parse().map(KindSchedule::Only).map_err(|_| {
            Error::Config(format!(
                "unknown schedule {s:?}, expected cooperated, relational or attribute"
            ))
        })
    }
}

impl TryFrom<String> for KindSchedule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<KindSchedule> for String {
    fn from(k: KindSchedule) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Global gradient-norm bound.
    pub grad_clip: Option<f64>,
    pub pool_size: usize,
    /// Rebuild negative pools from the current encoder every this many epochs.
    pub pool_refresh: Option<usize>,
    pub max_units: usize,
    pub loss: LossConfig,
    pub schedule: KindSchedule,
    /// Train with the embedding loss only and validate without re-ranking.
    pub embedding_only: bool,
    /// Tensor-name prefixes excluded from updates.
    pub freeze: Vec<String>,
    pub seed: u64,
    pub val_c_size: usize,
    pub val_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            max_epochs: 20,
            patience: 3,
            grad_clip: Some(1.0),
            pool_size: 50,
            pool_refresh: None,
            max_units: 32,
            loss: LossConfig::default(),
            schedule: KindSchedule::Cooperated,
            embedding_only: false,
            freeze: Vec::new(),
            seed: 0,
            val_c_size: 64,
            val_delta: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if self.batch_size == 0
            || self.pool_size == 0
            || self.max_units == 0
            || self.val_c_size == 0
        {
            return bad("batch_size, pool_size, max_units and c_size must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.val_delta) {
            return bad("delta must lie in [0, 1]");
        }
        self.loss.validate()
    }
}

/// Progress of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub info_kind_this_epoch: InfoKind,
    pub best_val_hits1: Option<f64>,
    pub epochs_since_improvement: usize,
    pub rng_seed: u64,
    pub best_epoch: Option<usize>,
}

impl TrainState {
    pub fn new(rng_seed: u64, first: InfoKind) -> Self {
        Self {
            epoch: 0,
            info_kind_this_epoch: first,
            best_val_hits1: None,
            epochs_since_improvement: 0,
            rng_seed,
            best_epoch: None,
        }
    }

    /// Whether the latest check improved on every earlier epoch.
    pub fn improved(&self) -> bool {
        self.best_epoch == Some(self.epoch)
    }
}

/// Records `val_hits1` for the epoch just finished; `stop` once `patience`
/// epochs in a row failed to improve.
pub fn check_early_stop(
    mut state: TrainState,
    val_hits1: f64,
    patience: usize,
) -> Result<(TrainState, bool)> {
    if !(0.0..=1.0).contains(&val_hits1) {
        return Err(Error::Argument(format!(
            "validation Hits@1 {val_hits1} outside [0, 1]"
        )));
    }
    if state.best_val_hits1.is_none_or(|b| val_hits1 > b) {
        state.best_val_hits1 = Some(val_hits1);
        state.best_epoch = Some(state.epoch);
        state.epochs_since_improvement = 0;
    } else {
        state.epochs_since_improvement += 1;
    }
    let stop = state.epochs_since_improvement >= patience;
    Ok((state, stop))
}

/// Per-anchor hard negatives, most similar first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativePool {
    pub k: usize,
    pub lists: BTreeMap<String, Vec<String>>,
}

/// Exact top-`k` KG2 entities by cosine to each anchor, gold excluded, ties
/// by row of `targets`.
pub fn build_negative_pool(
    seeds: &[(String, String)],
    anchors: &EmbeddingTable,
    targets: &EmbeddingTable,
    k: usize,
) -> Result<NegativePool> {
    if k == 0 {
        return Err(Error::Argument("pool size must be positive".into()));
    }
    if k >= targets.len() {
        log::warn!(
            "pool size {k} leaves no choice among {} entities; truncating",
            targets.len()
        );
    }
    let lists = seeds
        .iter()
        .map(|(a, p)| {
            let q = anchors.get(a).ok_or_else(|| {
                Error::UnknownEntity(format!("no frozen embedding for anchor {a:?}"))
            })?;
            let gold = targets.index_of(p);
            let list = top_k(q, targets, k, |i| Some(i) == gold);
            Ok((a.clone(), list.into_iter().map(|c| c.entity).collect()))
        })
        .collect::<Result<_>>()?;
    Ok(NegativePool { k, lists })
}

/// One triple per seed, negative drawn uniformly from the anchor's pool.
pub fn sample_training_set(
    seeds: &[(String, String)],
    pool: &NegativePool,
    rng_seed: u64,
) -> Result<Vec<TrainingTriple>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    seeds
        .iter()
        .map(|(a, p)| {
            let list = pool
                .lists
                .get(a)
                .filter(|l| !l.is_empty())
                .ok_or_else(|| Error::Sampling(format!("empty negative pool for {a:?}")))?;
            let n = &list[rng.gen_range(0..list.len())];
            TrainingTriple::new(a.clone(), p.clone(), n.clone())
        })
        .collect()
}

/// Mixes `base` with a stream tag and an index into a fresh seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The four pair inputs of a triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleInputs {
    /// `T(e, e+)`
    pub pos: PairInput,
    /// `T(e+, e)`
    pub pos_rev: PairInput,
    /// `T(e, e-)`
    pub neg: PairInput,
    /// `T(e-, e)`
    pub neg_rev: PairInput,
}

pub fn triple_inputs(
    model: &Model,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    t: &TrainingTriple,
    kind: InfoKind,
    max_units: usize,
) -> Result<TripleInputs> {
    let e = build_sequence(&t.anchor, kg1, kind, max_units)?;
    let p = build_sequence(&t.positive, kg2, kind, max_units)?;
    let n = build_sequence(&t.negative, kg2, kind, max_units)?;
    Ok(TripleInputs {
        pos: model.pair_input(&e, &p)?,
        pos_rev: model.pair_input(&p, &e)?,
        neg: model.pair_input(&e, &n)?,
        neg_rev: model.pair_input(&n, &e)?,
    })
}

fn row_gradient(rows: usize, cols: usize, row: usize, g: &ndarray::Array1<f64>) -> Array2<f64> {
    let mut d = Array2::zeros((rows, cols));
    d.row_mut(row).assign(g);
    d
}

fn triple_pass(
    model: &Model,
    x: &TripleInputs,
    loss: &LossConfig,
    embedding_only: bool,
    mut grads: Option<&mut Weights>,
) -> Result<LossBreakdown> {
    let cfg = &model.config;
    let w = &model.weights;
    let d = cfg.hidden;

    let views = [
        pair_view(&x.pos, MaskKind::First),
        pair_view(&x.pos, MaskKind::Second),
        pair_view(&x.neg, MaskKind::Second),
    ];
    let mut emb = Vec::with_capacity(3);
    let mut caches = Vec::with_capacity(3);
    for v in &views {
        let (h, c) = transformer::forward(cfg, w, v)?;
        emb.push(heads::embed(&w.heads, h.row(0)));
        caches.push((h, c));
    }
    let (l_mr, ge) =
        margin_ranking_grad(emb[0].view(), emb[1].view(), emb[2].view(), loss.margin_emb)?;
    if let Some(g) = grads.as_deref_mut() {
        if l_mr > 0.0 {
            for ((h, c), gi) in caches.iter().zip(&ge) {
                let dh = heads::embed_backward(&w.heads, h.row(0), gi, &mut g.heads);
                transformer::backward(cfg, w, c, &row_gradient(h.nrows(), d, 0, &dh), g);
            }
        }
    }
    if embedding_only {
        return Ok(LossBreakdown {
            l_mr,
            ..Default::default()
        });
    }

    // order: T(e,e+), T(e+,e), T(e,e-), T(e-,e)
    let pairs = [&x.pos, &x.pos_rev, &x.neg, &x.neg_rev];
    let mut passes = Vec::with_capacity(4);
    for p in pairs {
        let (h, c) = transformer::forward(cfg, w, &pair_view(p, MaskKind::Pair))?;
        let hp = model.head_forward(&h, p)?;
        passes.push((h, c, hp));
    }
    let q: Vec<f64> = passes
        .iter()
        .map(|(_, _, hp)| positive_probability(hp.logits))
        .collect();
    let s: Vec<f64> = match loss.prompt_score {
        PromptScore::Probability => q.clone(),
        PromptScore::Logit => passes.iter().map(|(_, _, hp)| hp.logits[0]).collect(),
    };
    let l_be = entailment_bce(q[0], q[2]) + entailment_bce(q[1], q[3]);
    let l_bm = prompt_margin_loss(s[0], s[2], loss.margin_prompt)
        + prompt_margin_loss(s[1], s[3], loss.margin_prompt);

    if let Some(g) = grads {
        let mut dq = [0.0; 4];
        let mut ds = [0.0; 4];
        for (a, b) in [(0, 2), (1, 3)] {
            let be = entailment_bce_grad(q[a], q[b]);
            dq[a] += be[0];
            dq[b] += be[1];
            let bm = prompt_margin_grad(s[a], s[b], loss.margin_prompt);
            ds[a] += bm[0];
            ds[b] += bm[1];
        }
        for (i, (h, c, hp)) in passes.iter().enumerate() {
            let dp = positive_probability_grad(hp.logits);
            let mut dz = [dq[i] * dp[0], dq[i] * dp[1]];
            match loss.prompt_score {
                PromptScore::Probability => {
                    dz[0] += ds[i] * dp[0];
                    dz[1] += ds[i] * dp[1];
                }
                PromptScore::Logit => dz[0] += ds[i],
            }
            if dz == [0.0, 0.0] {
                continue;
            }
            let dh = model.head_backward(h.row(hp.row), hp, dz, g);
            transformer::backward(cfg, w, c, &row_gradient(h.nrows(), d, hp.row, &dh), g);
        }
    }
    Ok(LossBreakdown { l_mr, l_be, l_bm })
}

/// Losses of one triple.
pub fn triple_loss(
    model: &Model,
    x: &TripleInputs,
    loss: &LossConfig,
    embedding_only: bool,
) -> Result<LossBreakdown> {
    triple_pass(model, x, loss, embedding_only, None)
}

/// Losses of one triple and the gradient of their sum.
pub fn triple_gradient(
    model: &Model,
    x: &TripleInputs,
    loss: &LossConfig,
    embedding_only: bool,
) -> Result<(LossBreakdown, Weights)> {
    let mut g = model.weights.zeros_like();
    let l = triple_pass(model, x, loss, embedding_only, Some(&mut g))?;
    Ok((l, g))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: OptimizerState,
}

impl Adam {
    pub fn new(lr: f64, like: &Weights) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: OptimizerState {
                step: 0,
                m: like.zeros_like(),
                v: like.zeros_like(),
            },
        }
    }

    /// Updates the tensors flagged in `trainable`.
    pub fn step(&mut self, w: &mut Weights, g: &Weights, trainable: &[bool]) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let tensors = w
            .tensors_mut()
            .into_iter()
            .zip(g.tensors())
            .zip(self.state.m.tensors_mut())
            .zip(self.state.v.tensors_mut());
        for ((((p, gr), m), v), &on) in tensors.zip(trainable) {
            if !on {
                continue;
            }
            ndarray::Zip::from(p)
                .and(gr)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// Which tensors of `w` are updated, given frozen name prefixes.
pub fn trainable_mask(w: &Weights, freeze: &[String]) -> Result<Vec<bool>> {
    let names = w.named();
    for f in freeze {
        if !names.iter().any(|(n, _)| n.starts_with(f.as_str())) {
            return Err(Error::Config(format!(
                "freeze prefix {f:?} matches no parameter"
            )));
        }
    }
    Ok(names
        .iter()
        .map(|(n, _)| !freeze.iter().any(|f| n.starts_with(f.as_str())))
        .collect())
}

/// Inputs of a training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub kg1: &'a KnowledgeGraph,
    pub kg2: &'a KnowledgeGraph,
    pub train: &'a [(String, String)],
    pub validation: &'a [(String, String)],
    /// KG2 entities that validation may rank.
    pub universe: &'a [String],
}

/// Validation Hits@1 per measured kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub hits1: BTreeMap<InfoKind, f64>,
    pub best_kind: InfoKind,
}

impl Validation {
    pub fn best(&self) -> f64 {
        self.hits1[&self.best_kind]
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub kind: InfoKind,
    pub l_mr: f64,
    pub l_be: f64,
    pub l_bm: f64,
    pub total: f64,
    pub val_hits1: Option<f64>,
    pub val_kind: Option<InfoKind>,
}

#[derive(Serialize, Deserialize)]
struct ResumeState {
    state: TrainState,
    history: Vec<EpochRecord>,
    pools: BTreeMap<InfoKind, NegativePool>,
    best_kind: InfoKind,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// Result of [`Trainer::run`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: Model,
    /// Kind to use at inference.
    pub best_kind: InfoKind,
    pub state: TrainState,
    pub history: Vec<EpochRecord>,
}

pub struct Trainer<'a> {
    pub model: Model,
    pub optimizer: Adam,
    pub state: TrainState,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    data: TrainData<'a>,
    pools: BTreeMap<InfoKind, NegativePool>,
    trainable: Vec<bool>,
    best: Model,
    best_kind: InfoKind,
}

impl<'a> Trainer<'a> {
    /// Starts a run; negative pools come from `model` as passed in.
    pub fn new(model: Model, data: TrainData<'a>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.train.is_empty() {
            return Err(Error::Argument("no training seeds".into()));
        }
        let kinds = config.schedule.kinds();
        let mut pools = BTreeMap::new();
        for &kind in &kinds {
            pools.insert(kind, Self::pool_for(&model, &data, &config, kind)?);
        }
        let trainable = trainable_mask(&model.weights, &config.freeze)?;
        Ok(Self {
            optimizer: Adam::new(config.lr, &model.weights),
            state: TrainState::new(config.seed, kinds[0]),
            history: Vec::new(),
            best: model.clone(),
            best_kind: kinds[0],
            model,
            config,
            data,
            pools,
            trainable,
        })
    }

    /// Continues the run saved in `dir`.
    pub fn resume(dir: &Path, data: TrainData<'a>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let last = checkpoint::load(dir.join(LAST_CHECKPOINT))?;
        let best = checkpoint::load(dir.join(BEST_CHECKPOINT))?.model;
        let saved: ResumeState = serde_json::from_value(
            last.state
                .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut optimizer = Adam::new(config.lr, &last.model.weights);
        optimizer.state = last
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        let trainable = trainable_mask(&last.model.weights, &config.freeze)?;
        Ok(Self {
            model: last.model,
            optimizer,
            state: saved.state,
            config,
            history: saved.history,
            data,
            pools: saved.pools,
            trainable,
            best,
            best_kind: saved.best_kind,
        })
    }

    fn pool_for(
        model: &Model,
        data: &TrainData,
        config: &TrainConfig,
        kind: InfoKind,
    ) -> Result<NegativePool> {
        let anchors: Vec<String> = data.train.iter().map(|(a, _)| a.clone()).collect();
        let a = EmbeddingTable::compute(model, data.kg1, &anchors, kind, config.max_units)?;
        let all2: Vec<String> = data.kg2.entities().iter().cloned().collect();
        let t = EmbeddingTable::compute(model, data.kg2, &all2, kind, config.max_units)?;
        build_negative_pool(data.train, &a, &t, config.pool_size)
    }

    pub fn pool(&self, kind: InfoKind) -> Option<&NegativePool> {
        self.pools.get(&kind)
    }

    /// Triples for the coming epoch.
    pub fn sample(&self) -> Result<Vec<TrainingTriple>> {
        let kind = self.state.info_kind_this_epoch;
        let pool = &self.pools[&kind];
        sample_training_set(
            self.data.train,
            pool,
            derive_seed(self.state.rng_seed, 1, self.state.epoch as u64),
        )
    }

    /// One pass over `triples` with the current info kind; returns the mean
    /// per-triple losses.
    pub fn train_epoch(&mut self, triples: &[TrainingTriple]) -> Result<LossBreakdown> {
        let kind = self.state.info_kind_this_epoch;
        let mut order: Vec<&TrainingTriple> = triples.iter().collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.state.rng_seed, 2, self.state.epoch as u64));
        order.shuffle(&mut rng);

        let mut sum = LossBreakdown::default();
        for batch in order.chunks(self.config.batch_size) {
            let model = &self.model;
            let cfg = &self.config;
            let per: Vec<(LossBreakdown, Weights)> = batch
                .par_iter()
                .map(|t| {
                    let x =
                        triple_inputs(model, self.data.kg1, self.data.kg2, t, kind, cfg.max_units)?;
                    triple_gradient(model, &x, &cfg.loss, cfg.embedding_only)
                })
                .collect::<Result<_>>()?;
            let mut grad = self.model.weights.zeros_like();
            let mut batch_loss = LossBreakdown::default();
            for (l, g) in &per {
                total_loss(l.l_mr, l.l_be, l.l_bm)?;
                batch_loss += *l;
                grad.add_assign(g);
            }
            sum += batch_loss;
            if self.config.loss.reduction == Reduction::Mean {
                grad.scale(1.0 / batch.len() as f64);
            }
            for (t, on) in grad.tensors_mut().into_iter().zip(&self.trainable) {
                if !on {
                    t.fill(0.0);
                }
            }
            if let Some(c) = self.config.grad_clip {
                let norm = grad.sq_norm().sqrt();
                if !norm.is_finite() {
                    return Err(Error::Diverged("non-finite gradient".into()));
                }
                if norm > c {
                    grad.scale(c / norm);
                }
            }
            self.optimizer
                .step(&mut self.model.weights, &grad, &self.trainable);
            if !self.model.weights.all_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite parameters in epoch {}",
                    self.state.epoch + 1
                )));
            }
        }
        self.state.epoch += 1;
        if self.config.schedule == KindSchedule::Cooperated {
            self.state.info_kind_this_epoch = kind.other();
        }
        Ok(sum.scaled(1.0 / triples.len().max(1) as f64))
    }

    fn align_settings(&self, kind: InfoKind) -> AlignSettings {
        AlignSettings {
            kind,
            c_size: self.config.val_c_size,
            delta: self.config.val_delta,
            max_units: self.config.max_units,
            embedding_only: self.config.embedding_only,
            symmetric: false,
        }
    }

    /// Hits@1 on the validation seeds for every scheduled kind.
    pub fn validate(&self) -> Result<Option<Validation>> {
        if self.data.validation.is_empty() {
            return Ok(None);
        }
        let queries: Vec<String> = self
            .data
            .validation
            .iter()
            .map(|(a, _)| a.clone())
            .collect();
        let task = AlignTask {
            kg1: self.data.kg1,
            kg2: self.data.kg2,
            queries: &queries,
            universe: self.data.universe,
        };
        let mut hits1 = BTreeMap::new();
        for kind in self.config.schedule.kinds() {
            let results = align(&self.model, &task, &self.align_settings(kind))?;
            hits1.insert(
                kind,
                evaluate_pairs(&results, self.data.validation, &[1])?.hits(1),
            );
        }
        // ties go to the first kind in schedule order
        let mut best_kind = self.config.schedule.kinds()[0];
        for (&k, &v) in &hits1 {
            if v > hits1[&best_kind] {
                best_kind = k;
            }
        }
        Ok(Some(Validation { hits1, best_kind }))
    }

    fn save(&self, dir: &Path, improved: bool) -> Result<()> {
        let resume = ResumeState {
            state: self.state.clone(),
            history: self.history.clone(),
            pools: self.pools.clone(),
            best_kind: self.best_kind,
        };
        let state = serde_json::to_value(&resume).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if improved {
            checkpoint::save(
                dir.join(BEST_CHECKPOINT),
                &Checkpoint {
                    model: self.best.clone(),
                    optimizer: None,
                    state: Some(
                        serde_json::json!({ "epoch": self.state.epoch, "kind": self.best_kind }),
                    ),
                },
            )?;
        }
        checkpoint::save(
            dir.join(LAST_CHECKPOINT),
            &Checkpoint {
                model: self.model.clone(),
                optimizer: Some(self.optimizer.state.clone()),
                state: Some(state),
            },
        )
    }

    /// Trains until early stopping or `max_epochs`. With `dir`, appends to
    /// `metrics.jsonl` and keeps `best.ckpt` and `last.ckpt` there.
    pub fn run(mut self, dir: Option<&Path>) -> Result<TrainOutcome> {
        if let Some(d) = dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        while self.state.epoch < self.config.max_epochs {
            let kind = self.state.info_kind_this_epoch;
            if let Some(n) = self
                .config
                .pool_refresh
                .filter(|&n| n > 0 && self.state.epoch > 0)
            {
                if self.state.epoch % n == 0 {
                    let pool = Self::pool_for(&self.model, &self.data, &self.config, kind)?;
                    self.pools.insert(kind, pool);
                }
            }
            let triples = self.sample()?;
            let losses = self.train_epoch(&triples)?;
            total_loss(losses.l_mr, losses.l_be, losses.l_bm)?;
            let val = self.validate()?;
            let (stop, improved) = match &val {
                Some(v) => {
                    let (state, stop) =
                        check_early_stop(self.state.clone(), v.best(), self.config.patience)?;
                    self.state = state;
                    (stop, self.state.improved())
                }
                None => (false, true),
            };
            if improved {
                self.best = self.model.clone();
                if let Some(v) = &val {
                    self.best_kind = v.best_kind;
                }
            }
            let rec = EpochRecord {
                epoch: self.state.epoch,
                kind,
                l_mr: losses.l_mr,
                l_be: losses.l_be,
                l_bm: losses.l_bm,
                total: losses.total(),
                val_hits1: val.as_ref().map(Validation::best),
                val_kind: val.as_ref().map(|v| v.best_kind),
            };
            log::info!(
                "epoch {} ({kind}): loss {:.4} (mr {:.4}, be {:.4}, bm {:.4}) val_hits1 {:?}",
                rec.epoch,
                rec.total,
                rec.l_mr,
                rec.l_be,
                rec.l_bm,
                rec.val_hits1
            );
            if let Some(d) = dir {
                let path = d.join(METRICS_FILE);
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                let line = serde_json::to_string(&rec).expect("record serialises");
                writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
            }
            self.history.push(rec);
            if let Some(d) = dir {
                self.save(d, improved)?;
            }
            if stop {
                break;
            }
        }
        Ok(TrainOutcome {
            model: self.best,
            best_kind: self.best_kind,
            state: self.state,
            history: self.history,
        })
    }
}
