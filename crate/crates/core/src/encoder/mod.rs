//! Pair encoder and aligner heads.
//!
//! [`Model`] bundles a reference transformer with the tokenizer, template,
//! verbalizer and aligner it was trained with, so a checkpoint is enough to
//! score new pairs. Under `m1`/`m2` only `[CLS]` and one entity are encoded,
//! with positions renumbered from zero; the embedding of the second entity
//! of a pair is therefore the same as its single-entity embedding.

pub mod checkpoint;
pub mod heads;
pub mod transformer;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{
    build_pair_input, build_single_input, Mask, MaskKind, PairInput, Template, TextSequence,
};
use crate::tokenizer::{self, Tokenizer};
pub use transformer::{Cache, EncoderConfig, HeadWeights, LayerWeights, View, Weights};

/// Label words of the MLM aligner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    pub positive: u32,
    pub negative: u32,
}

impl Verbalizer {
    pub fn new(positive: u32, negative: u32) -> Result<Self> {
        if positive == negative {
            return Err(Error::Argument(format!(
                "verbalizer words share token id {positive}"
            )));
        }
        Ok(Self { positive, negative })
    }

    /// Both words must be single tokens of `tok`.
    pub fn from_words(tok: &Tokenizer, positive: &str, negative: &str) -> Result<Self> {
        let id = |w: &str| {
            tok.id(w).ok_or_else(|| {
                Error::Argument(format!("label word {w:?} is not a single vocabulary token"))
            })
        };
        Self::new(id(positive)?, id(negative)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aligner {
    Nsp,
    Mlm,
}

impl fmt::Display for Aligner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aligner::Nsp => "nsp",
            Aligner::Mlm => "mlm",
        })
    }
}

impl FromStr for Aligner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nsp" => Ok(Aligner::Nsp),
            "mlm" => Ok(Aligner::Mlm),
            _ => Err(Error::Config(format!(
                "unknown aligner {s:?}, expected nsp or mlm"
            ))),
        }
    }
}

/// Hidden states of one pair under the three masks. Rows a mask hides
/// entirely are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub hidden_m0: Array2<f64>,
    pub hidden_m1: Array2<f64>,
    pub hidden_m2: Array2<f64>,
    pub cls_index: usize,
    pub mask_index: Option<usize>,
}

impl EncoderOutput {
    pub fn hidden_size(&self) -> usize {
        self.hidden_m0.ncols()
    }

    pub fn get(&self, which: MaskKind) -> &Array2<f64> {
        match which {
            MaskKind::Pair => &self.hidden_m0,
            MaskKind::First => &self.hidden_m1,
            MaskKind::Second => &self.hidden_m2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignerScores {
    /// `(positive, negative)` before the softmax.
    pub logits: [f64; 2],
    pub prob_positive: f64,
    pub emb1: Array1<f64>,
    pub emb2: Array1<f64>,
}

/// Anything that can encode a pair under its three masks.
pub trait PairEncoder {
    fn encode(&self, pair: &PairInput) -> Result<EncoderOutput>;
    fn hidden_size(&self) -> usize;
}

fn check_row(out: &EncoderOutput, row: usize) -> Result<()> {
    if row >= out.hidden_m0.nrows() {
        return Err(Error::Shape(format!(
            "row {row} outside {} hidden states",
            out.hidden_m0.nrows()
        )));
    }
    Ok(())
}

/// `(W_emb h1_cls, W_emb h2_cls)`.
pub fn project_embeddings(
    out: &EncoderOutput,
    cls_index: usize,
    w_emb: &Array2<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_row(out, cls_index)?;
    if w_emb.ncols() != out.hidden_size() {
        return Err(Error::Shape(format!(
            "projection is {}x{}, hidden size is {}",
            w_emb.nrows(),
            w_emb.ncols(),
            out.hidden_size()
        )));
    }
    Ok((
        w_emb.dot(&out.hidden_m1.row(cls_index)),
        w_emb.dot(&out.hidden_m2.row(cls_index)),
    ))
}

fn check_heads(out: &EncoderOutput, w: &HeadWeights) -> Result<()> {
    let d = out.hidden_size();
    if w.pool_w.dim() != (d, d)
        || w.pool_b.ncols() != d
        || w.nsp_w.dim() != (2, d)
        || w.mlm_w.ncols() != d
    {
        return Err(Error::Shape(format!(
            "head weights do not match hidden size {d}"
        )));
    }
    Ok(())
}

/// NSP logits from the classification row under `m0`.
pub fn nsp_logits(out: &EncoderOutput, cls_index: usize, w: &HeadWeights) -> Result<[f64; 2]> {
    check_row(out, cls_index)?;
    check_heads(out, w)?;
    Ok(heads::nsp(w, out.hidden_m0.row(cls_index)).0)
}

/// Verbalizer logits from the mask row under `m0`.
pub fn mlm_logits(
    out: &EncoderOutput,
    mask_index: Option<usize>,
    verbalizer: &Verbalizer,
    w: &HeadWeights,
) -> Result<[f64; 2]> {
    let row = mask_index.ok_or_else(|| {
        Error::Argument("the MLM aligner needs a template with a mask slot".into())
    })?;
    check_row(out, row)?;
    check_heads(out, w)?;
    let vocab = w.mlm_w.nrows();
    if verbalizer.positive as usize >= vocab || verbalizer.negative as usize >= vocab {
        return Err(Error::Shape(format!(
            "verbalizer ids outside vocabulary of {vocab}"
        )));
    }
    Ok(heads::mlm(w, out.hidden_m0.row(row), verbalizer))
}

/// The rows of `pair` visible under `which`, ready for the transformer.
pub fn pair_view(pair: &PairInput, which: MaskKind) -> View {
    let mask = pair.masks.get(which);
    match which {
        MaskKind::Pair => {
            let mut v = View::full(&pair.tokens);
            v.segments = pair.segments();
            v.mask = restrict(mask, &v.rows);
            v
        }
        MaskKind::First | MaskKind::Second => {
            let rows = mask.active_rows();
            View {
                tokens: rows.iter().map(|&r| pair.tokens[r]).collect(),
                positions: (0..rows.len()).collect(),
                segments: vec![0; rows.len()],
                mask: restrict(mask, &rows),
                rows,
            }
        }
    }
}

fn restrict(mask: &Mask, rows: &[usize]) -> Option<Vec<bool>> {
    let sub: Vec<bool> = rows
        .iter()
        .flat_map(|&i| rows.iter().map(move |&j| (i, j)))
        .map(|(i, j)| mask.get(i, j))
        .collect();
    (!sub.iter().all(|&a| a)).then_some(sub)
}

/// Where the aligner reads its logits and what it kept for backward.
pub struct HeadPass {
    pub row: usize,
    pub logits: [f64; 2],
    nsp: Option<heads::NspCache>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: EncoderConfig,
    pub weights: Weights,
    pub tokenizer: Tokenizer,
    pub verbalizer: Verbalizer,
    pub template: Template,
    pub aligner: Aligner,
}

impl Model {
    /// Fresh model. Prompt-token embeddings start at the `[SEP]` embedding
    /// plus small noise.
    pub fn new(
        config: EncoderConfig,
        tokenizer: Tokenizer,
        template: Template,
        aligner: Aligner,
        verbalizer: Verbalizer,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != tokenizer.vocab_size() {
            return Err(Error::Config(format!(
                "encoder vocabulary {} differs from tokenizer vocabulary {}",
                config.vocab_size,
                tokenizer.vocab_size()
            )));
        }
        template
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if aligner == Aligner::Mlm && !template.has_mask() {
            return Err(Error::Config(
                "aligner mlm requires a template with a mask slot".into(),
            ));
        }
        let mut weights = Weights::init(&config, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let noise = Normal::new(0.0, 0.02).expect("positive std");
        let sep = weights.tok.row(tokenizer::SEP as usize).to_owned();
        for i in 0..tokenizer.n_prompts() {
            let id = tokenizer.prompt_id(i).expect("prompt index in range") as usize;
            let mut row = weights.tok.row_mut(id);
            for (r, s) in row.iter_mut().zip(&sep) {
                *r = s + noise.sample(&mut rng);
            }
        }
        Ok(Self {
            config,
            weights,
            tokenizer,
            verbalizer,
            template,
            aligner,
        })
    }

    pub fn max_len(&self) -> usize {
        self.config.max_positions
    }

    pub fn forward_view(&self, view: &View) -> Result<(Array2<f64>, Cache)> {
        transformer::forward(&self.config, &self.weights, view)
    }

    pub fn pair_input(&self, s1: &TextSequence, s2: &TextSequence) -> Result<PairInput> {
        build_pair_input(s1, s2, &self.template, &self.tokenizer, self.max_len())
    }

    /// Single-entity embedding from `[CLS] S(e)`.
    pub fn embed_tokens(&self, tokens: &[u32]) -> Result<Array1<f64>> {
        let (h, _) = self.forward_view(&View::full(tokens))?;
        Ok(heads::embed(&self.weights.heads, h.row(0)))
    }

    pub fn embed_sequence(&self, seq: &TextSequence) -> Result<Array1<f64>> {
        self.embed_tokens(&build_single_input(seq, &self.tokenizer, self.max_len())?)
    }

    /// Aligner logits from `m0` hidden states of `pair`.
    pub fn head_forward(&self, hidden_m0: &Array2<f64>, pair: &PairInput) -> Result<HeadPass> {
        let w = &self.weights.heads;
        match self.aligner {
            Aligner::Nsp => {
                let (logits, cache) = heads::nsp(w, hidden_m0.row(0));
                Ok(HeadPass {
                    row: 0,
                    logits,
                    nsp: Some(cache),
                })
            }
            Aligner::Mlm => {
                let row = pair.mask_token_index.ok_or_else(|| {
                    Error::Argument("the MLM aligner needs a template with a mask slot".into())
                })?;
                Ok(HeadPass {
                    row,
                    logits: heads::mlm(w, hidden_m0.row(row), &self.verbalizer),
                    nsp: None,
                })
            }
        }
    }

    /// Accumulates head gradients; returns `dL/dh` for the row the head read.
    pub fn head_backward(
        &self,
        h_row: ArrayView1<f64>,
        pass: &HeadPass,
        dz: [f64; 2],
        grads: &mut Weights,
    ) -> Array1<f64> {
        let w = &self.weights.heads;
        match &pass.nsp {
            Some(cache) => heads::nsp_backward(w, h_row, cache, dz, &mut grads.heads),
            None => heads::mlm_backward(w, h_row, &self.verbalizer, dz, &mut grads.heads),
        }
    }

    /// Positive-class probability from the `m0` pass alone.
    pub fn positive_prob(&self, pair: &PairInput) -> Result<f64> {
        let (h, _) = self.forward_view(&pair_view(pair, MaskKind::Pair))?;
        Ok(heads::positive_probability(
            self.head_forward(&h, pair)?.logits,
        ))
    }

    pub fn score(&self, pair: &PairInput) -> Result<AlignerScores> {
        let out = self.encode(pair)?;
        let logits = match self.aligner {
            Aligner::Nsp => nsp_logits(&out, 0, &self.weights.heads)?,
            Aligner::Mlm => {
                mlm_logits(&out, out.mask_index, &self.verbalizer, &self.weights.heads)?
            }
        };
        let (emb1, emb2) = project_embeddings(&out, 0, &self.weights.heads.emb_w)?;
        Ok(AlignerScores {
            logits,
            prob_positive: heads::positive_probability(logits),
            emb1,
            emb2,
        })
    }
}

impl PairEncoder for Model {
    fn encode(&self, pair: &PairInput) -> Result<EncoderOutput> {
        let l = pair.len();
        let d = self.config.hidden;
        let mut hidden = [
            Array2::zeros((l, d)),
            Array2::zeros((l, d)),
            Array2::zeros((l, d)),
        ];
        for (slot, which) in hidden.iter_mut().zip(MaskKind::ALL) {
            let view = pair_view(pair, which);
            if view.is_empty() {
                continue;
            }
            let (h, _) = self.forward_view(&view)?;
            for (k, &r) in view.rows.iter().enumerate() {
                slot.row_mut(r).assign(&h.row(k));
            }
        }
        let [hidden_m0, hidden_m1, hidden_m2] = hidden;
        Ok(EncoderOutput {
            hidden_m0,
            hidden_m1,
            hidden_m2,
            cls_index: 0,
            mask_index: pair.mask_token_index,
        })
    }

    fn hidden_size(&self) -> usize {
        self.config.hidden
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kg::{AttrTriple, KnowledgeGraph, RelTriple};
    use crate::sequence::{build_sequence, InfoKind};

    pub(crate) fn toy_model(
        aligner: Aligner,
        template: Template,
        hidden: usize,
        max_len: usize,
    ) -> (Model, KnowledgeGraph) {
        let kg = KnowledgeGraph::from_triples(
            vec![
                RelTriple::new("alpha band", "genre", "rock"),
                RelTriple::new("alpha band", "member", "john"),
                RelTriple::new("beta group", "genre", "jazz"),
            ],
            vec![
                AttrTriple::new("alpha band", "founded", "1962"),
                AttrTriple::new("beta group", "founded", "1970"),
            ],
            Vec::new(),
        );
        let tok = Tokenizer::builder()
            .force(template.words())
            .fit(["alpha band rock john beta group jazz 1962 1970"]);
        let cfg = EncoderConfig {
            hidden,
            layers: 2,
            heads: 2,
            ffn: 2 * hidden,
            emb_size: 6,
            ..EncoderConfig::new(tok.vocab_size(), max_len)
        };
        let verb = Verbalizer::from_words(&tok, "Yes", "No").unwrap();
        (
            Model::new(cfg, tok, template, aligner, verb, 7).unwrap(),
            kg,
        )
    }

    fn pair(model: &Model, kg: &KnowledgeGraph, a: &str, b: &str) -> PairInput {
        let s1 = build_sequence(a, kg, InfoKind::Relational, 8).unwrap();
        let s2 = build_sequence(b, kg, InfoKind::Relational, 8).unwrap();
        model.pair_input(&s1, &s2).unwrap()
    }

    #[test]
    fn all_masks_share_shape() {
        let (m, kg) = toy_model(Aligner::Nsp, Template::default(), 8, 32);
        let p = pair(&m, &kg, "alpha band", "beta group");
        let out = m.encode(&p).unwrap();
        for which in MaskKind::ALL {
            assert_eq!(out.get(which).dim(), (p.len(), 8));
            assert!(out.get(which).iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn second_entity_embedding_equals_single_entity_embedding() {
        let (m, kg) = toy_model(Aligner::Nsp, Template::default(), 8, 64);
        let p = pair(&m, &kg, "alpha band", "beta group");
        let scores = m.score(&p).unwrap();
        let seq = build_sequence("beta group", &kg, InfoKind::Relational, 8).unwrap();
        let single = m.embed_sequence(&seq).unwrap();
        assert_eq!(scores.emb2, single);
        let seq1 = build_sequence("alpha band", &kg, InfoKind::Relational, 8).unwrap();
        assert_eq!(scores.emb1, m.embed_sequence(&seq1).unwrap());
    }

    #[test]
    fn hidden_first_entity_ignores_second() {
        let (m, kg) = toy_model(Aligner::Nsp, Template::default(), 8, 32);
        let p = pair(&m, &kg, "alpha band", "beta group");
        let mut q = p.clone();
        for i in q.span_e2.clone() {
            q.tokens[i] = 5 + (q.tokens[i] + 3) % 10;
        }
        for i in q.span_template.clone() {
            q.tokens[i] = 6;
        }
        let a = m.encode(&p).unwrap();
        let b = m.encode(&q).unwrap();
        for r in std::iter::once(0).chain(p.span_e1.clone()) {
            assert_eq!(a.hidden_m1.row(r), b.hidden_m1.row(r));
        }
        assert_ne!(a.hidden_m0, b.hidden_m0);
    }

    #[test]
    fn scores_form_distribution() {
        for (aligner, template) in [
            (Aligner::Nsp, Template::None),
            (
                Aligner::Mlm,
                Template::hard("? {MASK} . I know that").unwrap(),
            ),
        ] {
            let (m, kg) = toy_model(aligner, template, 8, 32);
            let s = m.score(&pair(&m, &kg, "alpha band", "beta group")).unwrap();
            assert!((0.0..=1.0).contains(&s.prob_positive));
            let neg = heads::positive_probability([s.logits[1], s.logits[0]]);
            assert!((s.prob_positive + neg - 1.0).abs() < 1e-12);
            assert_eq!(s.emb1.len(), 6);
        }
    }

    #[test]
    fn mlm_without_mask_slot_is_a_config_error() {
        let tok = Tokenizer::builder().fit(["a b"]);
        let cfg = EncoderConfig::new(tok.vocab_size(), 16);
        let verb = Verbalizer::from_words(&tok, "Yes", "No").unwrap();
        let r = Model::new(cfg, tok, Template::None, Aligner::Mlm, verb, 1);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn degenerate_verbalizer_is_rejected() {
        assert!(Verbalizer::new(9, 9).is_err());
        let tok = Tokenizer::builder().fit(["a"]);
        assert!(Verbalizer::from_words(&tok, "Yes", "Maybe").is_err());
    }

    #[test]
    fn prompt_embeddings_start_near_separator() {
        let (m, _) = toy_model(Aligner::Nsp, Template::Soft { length: 2 }, 8, 32);
        let sep = m.weights.tok.row(tokenizer::SEP as usize);
        let p0 = m
            .weights
            .tok
            .row(m.tokenizer.prompt_id(0).unwrap() as usize);
        let dist = (&p0 - &sep).mapv(|x| x * x).sum().sqrt();
        assert!(dist > 0.0 && dist < 0.5);
    }

    #[test]
    fn swapping_visible_tokens_changes_pair_states() {
        let (m, _) = toy_model(Aligner::Nsp, Template::default(), 8, 32);
        let base = View::full(&[2, 7, 8, 3]);
        let mut swapped = base.clone();
        swapped.tokens.swap(1, 2);
        let (a, _) = m.forward_view(&base).unwrap();
        let (b, _) = m.forward_view(&swapped).unwrap();
        assert_ne!(a.row(0), b.row(0));
    }

    #[test]
    fn out_of_range_rows_are_shape_errors() {
        let (m, kg) = toy_model(Aligner::Nsp, Template::default(), 8, 32);
        let out = m
            .encode(&pair(&m, &kg, "alpha band", "beta group"))
            .unwrap();
        assert!(matches!(
            nsp_logits(&out, 999, &m.weights.heads),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            mlm_logits(&out, None, &m.verbalizer, &m.weights.heads),
            Err(Error::Argument(_))
        ));
        let bad = Array2::zeros((3, 5));
        assert!(matches!(
            project_embeddings(&out, 0, &bad),
            Err(Error::Shape(_))
        ));
    }
}
