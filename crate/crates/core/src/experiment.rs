//! Experiment configuration and the prepare / train / align / evaluate /
//! sweep pipeline behind the command-line tool.
//!
//! A run directory holds everything a run produced:
//!
//! ```text
//! config.toml          config snapshot
//! data/                prepared graphs and seed splits
//! train/               metrics.jsonl, best.ckpt, last.ckpt
//! predictions.tsv      ranked candidates per test query
//! report.json          evaluation report (also report.txt)
//! sweep_<axis>.tsv     sweep table (and .svg plot)
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::checkpoint;
use crate::encoder::{Aligner, EncoderConfig, Model, Verbalizer};
use crate::error::{Error, Result};
use crate::inference::{
    apply_threshold, candidate_lists, evaluate_pairs, read_predictions, score_lists,
    write_predictions, AlignSettings, AlignTask, EvalReport, RankingResult,
};
use crate::kg::{
    load_kg, load_links, split_seeds, write_kg, write_links, AlignmentSeeds, KnowledgeGraph,
    SeedSplit, SplitTag,
};
use crate::objectives::{LossConfig, PromptScore, Reduction};
use crate::sequence::{InfoKind, Template};
use crate::synth::{generate, NoiseConfig, SyntheticConfig};
use crate::tokenizer::Tokenizer;
use crate::trainer::{
    KindSchedule, TrainConfig, TrainData, TrainOutcome, Trainer, BEST_CHECKPOINT,
};

/// Names the artifact root directory.
pub const ARTIFACT_ROOT_ENV: &str = "KG_ENTAIL_ARTIFACTS";

/// Flat run configuration. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_name: String,

    /// Directory with `rel_triples_{1,2}`, `attr_triples_{1,2}` and
    /// `ent_links`; when absent a synthetic pair is generated.
    pub data_dir: Option<PathBuf>,
    pub synth_entities: usize,
    pub synth_rel_density: f64,
    pub synth_attr_density: f64,
    pub name_noise: f64,
    pub triple_dropout: f64,
    pub value_rewrite: f64,
    pub synth_seed: u64,
    pub train_ratio: f64,
    pub val_ratio_of_train: f64,
    pub split_seed: u64,

    /// `reference`, or `external` for a user-supplied language model.
    pub encoder: String,
    pub encoder_checkpoint: Option<PathBuf>,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub emb_size: usize,
    /// Leading layers whose key projection is initialised equal to the query projection.
    pub tied_qk_layers: usize,
    pub position_std: f64,
    pub max_len: usize,
    pub min_count: usize,
    pub n_prompts: usize,
    pub init_seed: u64,
    pub aligner: Aligner,
    /// `none`, `soft:<l>` or `hard:<text with {MASK}>`.
    pub template: String,
    pub positive_word: String,
    pub negative_word: String,

    pub margin_emb: f64,
    pub margin_prompt: f64,
    pub prompt_score: PromptScore,
    pub reduction: Reduction,

    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Zero disables clipping.
    pub grad_clip: f64,
    pub pool_size: usize,
    /// Zero keeps the pools from the untrained encoder.
    pub pool_refresh: usize,
    pub max_units: usize,
    pub schedule: KindSchedule,
    pub embedding_only: bool,
    pub freeze: Vec<String>,
    pub seed: u64,

    pub c_size: usize,
    pub delta: f64,
    /// Threshold used when scoring validation seeds; `delta` when unset.
    pub val_delta: Option<f64>,
    pub symmetric: bool,
    pub ks: Vec<usize>,
    pub plot: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let l = LossConfig::default();
        let a = AlignSettings::default();
        Self {
            run_name: "run".into(),
            data_dir: None,
            synth_entities: 200,
            synth_rel_density: 3.0,
            synth_attr_density: 3.0,
            name_noise: 0.3,
            triple_dropout: 0.2,
            value_rewrite: 0.1,
            synth_seed: 0,
            train_ratio: 0.3,
            val_ratio_of_train: 0.1,
            split_seed: 0,
            encoder: "reference".into(),
            encoder_checkpoint: None,
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
            emb_size: 300,
            tied_qk_layers: 1,
            position_std: 0.25,
            max_len: 128,
            min_count: 2,
            n_prompts: 8,
            init_seed: 0,
            aligner: Aligner::Nsp,
            template: Template::default().to_string(),
            positive_word: "Yes".into(),
            negative_word: "No".into(),
            margin_emb: l.margin_emb,
            margin_prompt: l.margin_prompt,
            prompt_score: l.prompt_score,
            reduction: l.reduction,
            lr: t.lr,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            grad_clip: t.grad_clip.unwrap_or(0.0),
            pool_size: t.pool_size,
            pool_refresh: 0,
            max_units: t.max_units,
            schedule: t.schedule,
            embedding_only: false,
            freeze: Vec::new(),
            seed: 0,
            c_size: a.c_size,
            delta: a.delta,
            val_delta: None,
            symmetric: false,
            ks: vec![1, 10],
            plot: false,
        }
    }
}

fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    let k = k.trim().to_string();
    let v = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k, value))
}

impl ExperimentConfig {
    /// Parses a flat TOML document, then applies `key=value` overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            table.insert(k, v);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Short digest of the canonical serialisation.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn template(&self) -> Result<Template> {
        self.template.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.encoder.as_str() {
            "reference" => {}
            "external" => return bad(
                "external language-model encoders must be supplied through the PairEncoder trait; \
                     the command-line tool only runs the reference encoder"
                    .into(),
            ),
            other => return bad(format!("unknown encoder {other:?}")),
        }
        let template = self.template()?;
        if self.aligner == Aligner::Mlm && !template.has_mask() {
            return bad("aligner mlm requires a template with a mask slot".into());
        }
        if let Template::Soft { length } = template {
            if length > self.n_prompts {
                return bad(format!(
                    "soft template needs {length} prompt tokens, n_prompts is {}",
                    self.n_prompts
                ));
            }
        }
        if let Some(d) = &self.data_dir {
            if !d.is_dir() {
                return bad(format!("data_dir {} does not exist", d.display()));
            }
        }
        if let Some(p) = &self.encoder_checkpoint {
            if !p.is_file() {
                return bad(format!("encoder_checkpoint {} does not exist", p.display()));
            }
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be a non-empty list of positive integers".into());
        }
        if self.max_len < crate::sequence::MIN_PAIR_LEN {
            return bad(format!(
                "max_len must be at least {}",
                crate::sequence::MIN_PAIR_LEN
            ));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0)
            || !(0.0..1.0).contains(&self.val_ratio_of_train)
        {
            return bad("train_ratio must be in (0, 1] and val_ratio_of_train in [0, 1)".into());
        }
        self.noise()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.encoder_config(1).validate()?;
        self.train_config().validate()
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            name_perturbation: self.name_noise,
            triple_dropout: self.triple_dropout,
            value_rewrite: self.value_rewrite,
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_entities: self.synth_entities,
            rel_density: self.synth_rel_density,
            attr_density: self.synth_attr_density,
            noise: self.noise(),
            ..SyntheticConfig::default()
        }
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            ffn: self.ffn,
            emb_size: self.emb_size,
            tied_qk_layers: self.tied_qk_layers,
            position_std: self.position_std,
            ..EncoderConfig::new(vocab_size, self.max_len)
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin_emb: self.margin_emb,
            margin_prompt: self.margin_prompt,
            prompt_score: self.prompt_score,
            reduction: self.reduction,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            pool_size: self.pool_size,
            pool_refresh: (self.pool_refresh > 0).then_some(self.pool_refresh),
            max_units: self.max_units,
            loss: self.loss_config(),
            schedule: self.schedule,
            embedding_only: self.embedding_only,
            freeze: self.freeze.clone(),
            seed: self.seed,
            val_c_size: self.c_size,
            val_delta: self.val_delta.unwrap_or(self.delta),
        }
    }

    pub fn align_settings(&self, kind: InfoKind) -> AlignSettings {
        AlignSettings {
            kind,
            c_size: self.c_size,
            delta: self.delta,
            max_units: self.max_units,
            embedding_only: self.embedding_only,
            symmetric: self.symmetric,
        }
    }
}

/// Two graphs and a seed split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub split: SeedSplit,
}

const REL1: &str = "rel_triples_1";
const REL2: &str = "rel_triples_2";
const ATTR1: &str = "attr_triples_1";
const ATTR2: &str = "attr_triples_2";
const LINKS: &str = "ent_links";
const TRAIN_LINKS: &str = "train_links";
const VALID_LINKS: &str = "valid_links";
const TEST_LINKS: &str = "test_links";

impl Dataset {
    /// Loads `cfg.data_dir` or generates a synthetic pair, then splits seeds.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let (kg1, kg2, pairs) = match &cfg.data_dir {
            Some(d) => (
                load_kg(d.join(REL1), d.join(ATTR1))?,
                load_kg(d.join(REL2), d.join(ATTR2))?,
                load_links(d.join(LINKS))?,
            ),
            None => {
                let p = generate(&cfg.synthetic_config(), cfg.synth_seed)?;
                (p.kg1, p.kg2, p.gold.pairs().to_vec())
            }
        };
        for (a, b) in &pairs {
            if kg1.entity_index(a).is_none() || kg2.entity_index(b).is_none() {
                return Err(Error::UnknownEntity(format!(
                    "link ({a}, {b}) names an entity outside the graphs"
                )));
            }
        }
        let split = split_seeds(
            &pairs,
            cfg.train_ratio,
            cfg.val_ratio_of_train,
            cfg.split_seed,
        )?;
        Ok(Self { kg1, kg2, split })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_kg(&self.kg1, dir.join(REL1), dir.join(ATTR1))?;
        write_kg(&self.kg2, dir.join(REL2), dir.join(ATTR2))?;
        write_links(self.split.train.pairs(), dir.join(TRAIN_LINKS))?;
        write_links(self.split.validation.pairs(), dir.join(VALID_LINKS))?;
        write_links(self.split.test.pairs(), dir.join(TEST_LINKS))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        // graphs written by `write` may lack isolated entities; links add them back
        let train = load_links(dir.join(TRAIN_LINKS))?;
        let validation = load_links(dir.join(VALID_LINKS))?;
        let test = load_links(dir.join(TEST_LINKS))?;
        let all: Vec<&(String, String)> = train.iter().chain(&validation).chain(&test).collect();
        let kg1 = load_kg(dir.join(REL1), dir.join(ATTR1))?
            .with_entities(all.iter().map(|p| p.0.clone()));
        let kg2 = load_kg(dir.join(REL2), dir.join(ATTR2))?
            .with_entities(all.iter().map(|p| p.1.clone()));
        Ok(Self {
            kg1,
            kg2,
            split: SeedSplit {
                train: AlignmentSeeds::new(train, SplitTag::Train)?,
                validation: AlignmentSeeds::new(validation, SplitTag::Validation)?,
                test: AlignmentSeeds::new(test, SplitTag::Test)?,
            },
        })
    }

    /// KG2 entities that may be returned: all but the training targets.
    pub fn universe(&self) -> Vec<String> {
        let used: HashSet<&str> = self
            .split
            .train
            .pairs()
            .iter()
            .map(|(_, b)| b.as_str())
            .collect();
        self.kg2
            .entities()
            .iter()
            .filter(|e| !used.contains(e.as_str()))
            .cloned()
            .collect()
    }

    pub fn test_queries(&self) -> Vec<String> {
        self.split
            .test
            .pairs()
            .iter()
            .map(|(a, _)| a.clone())
            .collect()
    }

    fn texts(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for kg in [&self.kg1, &self.kg2] {
            out.extend(kg.entities().iter().map(String::as_str));
            out.extend(kg.attribute_triples().iter().map(|t| t.value.as_str()));
        }
        out
    }
}

/// Fits the tokenizer on `data` and builds an untrained model.
pub fn build_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<Model> {
    let template = cfg.template()?;
    let tok = Tokenizer::builder()
        .min_count(cfg.min_count)
        .prompts(cfg.n_prompts)
        .force(template.words())
        .force([cfg.positive_word.clone(), cfg.negative_word.clone()])
        .fit(data.texts());
    let verbalizer = Verbalizer::from_words(&tok, &cfg.positive_word, &cfg.negative_word)?;
    let enc = cfg.encoder_config(tok.vocab_size());
    Model::new(enc, tok, template, cfg.aligner, verbalizer, cfg.init_seed)
}

/// Trains a fresh model on `data`, optionally logging into `dir`.
pub fn train_model(
    cfg: &ExperimentConfig,
    data: &Dataset,
    dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let model = build_model(cfg, data)?;
    let universe = data.universe();
    let td = TrainData {
        kg1: &data.kg1,
        kg2: &data.kg2,
        train: data.split.train.pairs(),
        validation: data.split.validation.pairs(),
        universe: &universe,
    };
    Trainer::new(model, td, cfg.train_config())?.run(dir)
}

/// Ranks every test query.
pub fn align_test(
    cfg: &ExperimentConfig,
    data: &Dataset,
    model: &Model,
    kind: InfoKind,
) -> Result<Vec<RankingResult>> {
    let queries = data.test_queries();
    let universe = data.universe();
    let task = AlignTask {
        kg1: &data.kg1,
        kg2: &data.kg2,
        queries: &queries,
        universe: &universe,
    };
    crate::inference::align(model, &task, &cfg.align_settings(kind))
}

/// Everything an in-memory run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub data: Dataset,
    pub outcome: TrainOutcome,
    pub results: Vec<RankingResult>,
    pub report: EvalReport,
}

/// Prepare, train, align and evaluate without touching the disk.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = Dataset::prepare(cfg)?;
    let outcome = train_model(cfg, &data, None)?;
    let results = align_test(cfg, &data, &outcome.model, outcome.best_kind)?;
    let report = evaluate_pairs(&results, data.split.test.pairs(), &cfg.ks)?;
    Ok(RunOutput {
        data,
        outcome,
        results,
        report,
    })
}

/// Locations inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// `$KG_ENTAIL_ARTIFACTS/<run_name>`, defaulting the root to `artifacts`.
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        let root = std::env::var_os(ARTIFACT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("artifacts"));
        Self {
            root: root.join(&cfg.run_name),
        }
    }

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.train().join(BEST_CHECKPOINT)
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.tsv")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn sweep_table(&self, axis: SweepAxis) -> PathBuf {
        self.root.join(format!("sweep_{axis}.tsv"))
    }

    pub fn sweep_plot(&self, axis: SweepAxis) -> PathBuf {
        self.root.join(format!("sweep_{axis}.svg"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads or generates the data, writes it and the config snapshot.
pub fn prepare(cfg: &ExperimentConfig, run: &RunDir) -> Result<Dataset> {
    cfg.validate()?;
    let data = Dataset::prepare(cfg)?;
    data.write(&run.data())?;
    write_text(
        &run.config(),
        &format!("# config_hash={}\n{}", cfg.hash(), cfg.to_toml()),
    )?;
    log::info!(
        "prepared {} / {} entities, {} train / {} validation / {} test seeds",
        data.kg1.num_entities(),
        data.kg2.num_entities(),
        data.split.train.len(),
        data.split.validation.len(),
        data.split.test.len()
    );
    Ok(data)
}

fn prepared(cfg: &ExperimentConfig, run: &RunDir) -> Result<Dataset> {
    if run.data().join(TEST_LINKS).is_file() {
        Dataset::read(&run.data())
    } else {
        prepare(cfg, run)
    }
}

/// Trains on the prepared data (preparing it first if needed).
pub fn train(cfg: &ExperimentConfig, run: &RunDir) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = prepared(cfg, run)?;
    let train_dir = run.train();
    if train_dir.join(crate::trainer::METRICS_FILE).exists() {
        fs::remove_file(train_dir.join(crate::trainer::METRICS_FILE))
            .map_err(|e| Error::io(&train_dir, e))?;
    }
    train_model(cfg, &data, Some(&train_dir))
}

/// Continues an interrupted training run.
pub fn resume(cfg: &ExperimentConfig, run: &RunDir) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = Dataset::read(&run.data())?;
    let universe = data.universe();
    let td = TrainData {
        kg1: &data.kg1,
        kg2: &data.kg2,
        train: data.split.train.pairs(),
        validation: data.split.validation.pairs(),
        universe: &universe,
    };
    Trainer::resume(&run.train(), td, cfg.train_config())?.run(Some(&run.train()))
}

/// The best checkpoint and the sequence kind chosen on validation.
pub fn load_best(cfg: &ExperimentConfig, run: &RunDir) -> Result<(Model, InfoKind)> {
    let ck = checkpoint::load(run.best_checkpoint())?;
    let m = ck.model;
    if m.aligner != cfg.aligner || m.template != cfg.template()? {
        return Err(Error::Config(format!(
            "checkpoint was trained with aligner {} and template {}, config asks for {} and {}",
            m.aligner, m.template, cfg.aligner, cfg.template
        )));
    }
    let kind = ck
        .state
        .as_ref()
        .and_then(|s| s.get("kind"))
        .and_then(|k| serde_json::from_value(k.clone()).ok())
        .unwrap_or(InfoKind::Relational);
    Ok((m, kind))
}

/// Ranks the test queries with the best checkpoint and writes predictions.
pub fn align(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<RankingResult>> {
    cfg.validate()?;
    let data = Dataset::read(&run.data())?;
    let (model, kind) = load_best(cfg, run)?;
    let results = align_test(cfg, &data, &model, kind)?;
    write_predictions(run.predictions(), &cfg.hash(), &results)?;
    Ok(results)
}

/// Scores stored predictions against the test links.
pub fn evaluate(cfg: &ExperimentConfig, run: &RunDir) -> Result<EvalReport> {
    let (hash, rankings) = read_predictions(run.predictions())?;
    if hash != cfg.hash() {
        log::warn!(
            "predictions were written under config {hash}, current config is {}",
            cfg.hash()
        );
    }
    let test = load_links(run.data().join(TEST_LINKS))?;
    let report = evaluate_pairs(&rankings, &test, &cfg.ks)?;
    let json = serde_json::json!({ "config_hash": hash, "report": report });
    write_text(
        &run.report_json(),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&json).expect("report serialises")
        ),
    )?;
    write_text(
        &run.report_txt(),
        &format!("# config_hash={hash}\n{report}\n"),
    )?;
    Ok(report)
}

/// Prepare, train, align and evaluate on disk.
pub fn run_experiment(cfg: &ExperimentConfig, run: &RunDir) -> Result<EvalReport> {
    prepare(cfg, run)?;
    train(cfg, run)?;
    align(cfg, run)?;
    evaluate(cfg, run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Vary the confidence threshold.
    Threshold,
    /// Vary the candidate count.
    Candidates,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Threshold => "threshold",
            SweepAxis::Candidates => "candidates",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(SweepAxis::Threshold),
            "candidates" => Ok(SweepAxis::Candidates),
            _ => Err(Error::Argument(format!(
                "unknown sweep axis {s:?}, expected threshold or candidates"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub hits_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub reranked_count: usize,
}

/// Evaluates `values` of one axis with the other held at its configured
/// value. Entailment scores are computed once and shared by all rows.
pub fn sweep_model(
    cfg: &ExperimentConfig,
    data: &Dataset,
    model: &Model,
    kind: InfoKind,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Argument("sweep needs at least one value".into()));
    }
    let mut settings = cfg.align_settings(kind);
    let (max_c, max_delta) = match axis {
        SweepAxis::Threshold => {
            if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Argument(format!("threshold {v} outside [0, 1]")));
            }
            (cfg.c_size, values.iter().copied().fold(0.0, f64::max))
        }
        SweepAxis::Candidates => {
            if let Some(v) = values.iter().find(|v| !(**v >= 1.0 && v.fract() == 0.0)) {
                return Err(Error::Argument(format!(
                    "candidate count {v} is not a positive integer"
                )));
            }
            (
                values.iter().copied().fold(0.0, f64::max) as usize,
                cfg.delta,
            )
        }
    };
    settings.c_size = max_c;
    let queries = data.test_queries();
    let universe = data.universe();
    let task = AlignTask {
        kg1: &data.kg1,
        kg2: &data.kg2,
        queries: &queries,
        universe: &universe,
    };
    let lists = candidate_lists(model, &task, &settings)?;
    let scores = score_lists(model, &task, &settings, &lists, max_delta)?;
    values
        .iter()
        .map(|&v| {
            let (delta, c) = match axis {
                SweepAxis::Threshold => (v, cfg.c_size),
                SweepAxis::Candidates => (cfg.delta, v as usize),
            };
            let results = apply_threshold(&lists, &scores, delta, c)?;
            let report = evaluate_pairs(&results, data.split.test.pairs(), &cfg.ks)?;
            Ok(SweepRow {
                value: v,
                hits_at: report.hits_at,
                mrr: report.mrr,
                reranked_count: results.iter().filter(|r| r.reranked).count(),
            })
        })
        .collect()
}

pub fn sweep_table(axis: SweepAxis, rows: &[SweepRow], config_hash: &str) -> String {
    let mut out = format!("# config_hash={config_hash}\n{axis}");
    let ks: Vec<usize> = rows
        .first()
        .map(|r| r.hits_at.keys().copied().collect())
        .unwrap_or_default();
    for k in &ks {
        let _ = write!(out, "\thits@{k}");
    }
    out.push_str("\tmrr\treranked_count\n");
    for r in rows {
        let _ = write!(out, "{}", r.value);
        for k in &ks {
            let _ = write!(out, "\t{:.6}", r.hits_at[k]);
        }
        let _ = writeln!(out, "\t{:.6}\t{}", r.mrr, r.reranked_count);
    }
    out
}

/// Line chart of Hits@1 and MRR against the swept value.
pub fn sweep_svg(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let xs: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |x: f64| pad + (x - lo) / span * (w - 2.0 * pad);
    let py = |y: f64| h - pad - y * (h - 2.0 * pad);
    let line = |ys: Vec<f64>, colour: &str| {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        )
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"12\">{axis}</text>\n\
         <text x=\"{pad}\" y=\"{lt}\" font-size=\"12\">1.0</text>\n",
        b = h - pad,
        r = w - pad,
        cx = w / 2.0,
        ty = h - pad / 3.0,
        lt = pad - 6.0,
    );
    svg.push_str(&line(
        rows.iter()
            .map(|r| r.hits_at.get(&1).copied().unwrap_or(0.0))
            .collect(),
        "steelblue",
    ));
    svg.push_str(&line(rows.iter().map(|r| r.mrr).collect(), "darkorange"));
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y1}\" font-size=\"12\" fill=\"steelblue\">Hits@1</text>\n\
         <text x=\"{x}\" y=\"{y2}\" font-size=\"12\" fill=\"darkorange\">MRR</text>\n</svg>\n",
        x = w - pad - 50.0,
        y1 = pad + 12.0,
        y2 = pad + 28.0
    ));
    svg
}

/// Sweeps with the best checkpoint of `run` and writes the table (and plot).
pub fn sweep(
    cfg: &ExperimentConfig,
    run: &RunDir,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::Argument("sweep needs at least one value".into()));
    }
    let data = Dataset::read(&run.data())?;
    let (model, kind) = load_best(cfg, run)?;
    let rows = sweep_model(cfg, &data, &model, kind, axis, values)?;
    write_text(
        &run.sweep_table(axis),
        &sweep_table(axis, &rows, &cfg.hash()),
    )?;
    if cfg.plot {
        write_text(&run.sweep_plot(axis), &sweep_svg(axis, &rows))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn overrides_take_typed_and_string_values() {
        let cfg = ExperimentConfig::from_toml_str(
            "lr = 0.01\n",
            &[
                "max_epochs=3".into(),
                "template=hard:? {MASK} . I know that".into(),
                "aligner=mlm".into(),
                "ks=[1, 5]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.max_epochs, 3);
        assert_eq!(cfg.aligner, Aligner::Mlm);
        assert_eq!(cfg.ks, vec![1, 5]);
        assert!(cfg.template().unwrap().has_mask());
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for (text, over) in [
            ("aligner = \"mlm\"\ntemplate = \"none\"\n", vec![]),
            ("", vec!["no_such_key=1".to_string()]),
            ("", vec!["encoder=external".to_string()]),
            ("", vec!["data_dir=/definitely/not/here".to_string()]),
            ("", vec!["delta=1.5".to_string()]),
            ("", vec!["template=soft:0".to_string()]),
        ] {
            let r = ExperimentConfig::from_toml_str(text, &over);
            assert!(
                matches!(r, Err(Error::Config(_))),
                "{text:?} {over:?}: {r:?}"
            );
        }
    }

    #[test]
    fn universe_excludes_training_targets() {
        let cfg = ExperimentConfig {
            synth_entities: 40,
            ..ExperimentConfig::default()
        };
        let d = Dataset::prepare(&cfg).unwrap();
        let u = d.universe();
        assert_eq!(u.len(), 40 - d.split.train.len());
        for (_, b) in d.split.test.pairs() {
            assert!(u.contains(b));
        }
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            synth_entities: 30,
            ..ExperimentConfig::default()
        };
        let d = Dataset::prepare(&cfg).unwrap();
        d.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.split, d.split);
        assert_eq!(back.kg1.num_entities(), d.kg1.num_entities());
        assert_eq!(back.universe().len(), d.universe().len());
    }

    #[test]
    fn sweep_rejects_empty_values() {
        let cfg = ExperimentConfig {
            synth_entities: 20,
            ..ExperimentConfig::default()
        };
        let d = Dataset::prepare(&cfg).unwrap();
        let m = build_model(&cfg, &d).unwrap();
        assert!(matches!(
            sweep_model(
                &cfg,
                &d,
                &m,
                InfoKind::Relational,
                SweepAxis::Threshold,
                &[]
            ),
            Err(Error::Argument(_))
        ));
    }
}
