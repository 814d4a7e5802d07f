//! Plugs a stand-in encoder into the aligner heads through [`PairEncoder`].
//!
//! A pretrained language model would be wrapped the same way: encode the
//! pair once per mask and hand back the hidden states. Here every position
//! is the mean of the hashed token vectors it may attend to.

use kg_entail::encoder::heads::positive_probability;
use kg_entail::encoder::{nsp_logits, project_embeddings, EncoderOutput, HeadWeights, PairEncoder};
use kg_entail::inference::cosine;
use kg_entail::kg::{KnowledgeGraph, RelTriple};
use kg_entail::sequence::{build_pair_input, build_sequence, InfoKind, Mask, PairInput, Template};
use kg_entail::tokenizer::Tokenizer;
use ndarray::{Array1, Array2};

struct MeanOfTokens {
    table: Array2<f64>,
}

impl MeanOfTokens {
    fn hidden(&self, pair: &PairInput, mask: &Mask) -> Array2<f64> {
        let n = pair.len();
        let mut h = Array2::zeros((n, self.table.ncols()));
        for i in 0..n {
            let seen: Vec<usize> = (0..n).filter(|&j| mask.get(i, j)).collect();
            for &j in &seen {
                let mut row = h.row_mut(i);
                row.scaled_add(
                    1.0 / seen.len() as f64,
                    &self.table.row(pair.tokens[j] as usize),
                );
            }
        }
        h
    }
}

impl PairEncoder for MeanOfTokens {
    fn encode(&self, pair: &PairInput) -> kg_entail::Result<EncoderOutput> {
        Ok(EncoderOutput {
            hidden_m0: self.hidden(pair, &pair.masks.m0),
            hidden_m1: self.hidden(pair, &pair.masks.m1),
            hidden_m2: self.hidden(pair, &pair.masks.m2),
            cls_index: 0,
            mask_index: pair.mask_token_index,
        })
    }

    fn hidden_size(&self) -> usize {
        self.table.ncols()
    }
}

fn main() -> kg_entail::Result<()> {
    let kg1 = KnowledgeGraph::from_triples(
        [RelTriple::new("Ada Lovelace", "field", "Mathematics")],
        [],
        [],
    );
    let kg2 = KnowledgeGraph::from_triples(
        [
            RelTriple::new("Lovelace", "field", "Mathematics"),
            RelTriple::new("Babbage", "field", "Engineering"),
        ],
        [],
        [],
    );
    let words = [
        "Ada Lovelace",
        "Mathematics",
        "Lovelace",
        "Babbage",
        "Engineering",
    ];
    let tok = Tokenizer::builder().min_count(1).fit(words);
    let d = 8;
    let table = Array2::from_shape_fn((tok.vocab_size(), d), |(t, c)| {
        ((t * 7 + c * 3) as f64).sin()
    });
    let encoder = MeanOfTokens { table };

    // untrained heads: identity projection, fixed NSP weights
    let heads = HeadWeights {
        pool_w: Array2::eye(d),
        pool_b: Array2::zeros((1, d)),
        nsp_w: Array2::from_shape_fn(
            (2, d),
            |(k, c)| if k == 0 { 0.5 } else { -0.5 } * (c as f64).cos(),
        ),
        mlm_w: Array2::zeros((tok.vocab_size(), d)),
        mlm_b: Array2::zeros((1, tok.vocab_size())),
        emb_w: Array2::eye(d),
    };

    let query = build_sequence("Ada Lovelace", &kg1, InfoKind::Relational, 4)?;
    for cand in ["Lovelace", "Babbage"] {
        let s2 = build_sequence(cand, &kg2, InfoKind::Relational, 4)?;
        let pair = build_pair_input(&query, &s2, &Template::None, &tok, 32)?;
        let out = encoder.encode(&pair)?;
        let (e1, e2): (Array1<f64>, Array1<f64>) =
            project_embeddings(&out, out.cls_index, &heads.emb_w)?;
        let z = nsp_logits(&out, out.cls_index, &heads)?;
        println!(
            "{cand}: cosine {:.4}, p+ {:.4}",
            cosine(e1.view(), e2.view()),
            positive_probability(z)
        );
    }
    Ok(())
}
