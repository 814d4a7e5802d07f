//! Training losses: embedding margin ranking, bi-directional entailment
//! cross-entropy and bi-directional prompt margin ranking.
//!
//! Every loss comes with the partial derivatives the trainer needs to
//! backpropagate into the encoder.

use std::ops::{Add, AddAssign};

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the logarithms.
pub const EPS: f64 = 1e-7;

/// One training example: a seed pair and a sampled negative.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingTriple {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

impl TrainingTriple {
    pub fn new(
        anchor: impl Into<String>,
        positive: impl Into<String>,
        negative: impl Into<String>,
    ) -> Result<Self> {
        let t = Self {
            anchor: anchor.into(),
            positive: positive.into(),
            negative: negative.into(),
        };
        if t.negative == t.positive {
            return Err(Error::Sampling(format!(
                "negative equals positive {:?}",
                t.positive
            )));
        }
        Ok(t)
    }
}

/// What the prompt margin hinge is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptScore {
    /// Positive-class probability after the two-way softmax.
    Probability,
    /// Positive-class logit before the softmax.
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin_emb: f64,
    pub margin_prompt: f64,
    pub prompt_score: PromptScore,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin_emb: 1.0,
            margin_prompt: 0.5,
            prompt_score: PromptScore::Probability,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin_emb >= 0.0 && self.margin_prompt >= 0.0) {
            return Err(Error::Config("margins must be non-negative".into()));
        }
        Ok(())
    }
}

/// Component losses of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_mr: f64,
    pub l_be: f64,
    pub l_bm: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.l_mr + self.l_be + self.l_bm
    }

    pub fn scaled(self, k: f64) -> Self {
        Self {
            l_mr: self.l_mr * k,
            l_be: self.l_be * k,
            l_bm: self.l_bm * k,
        }
    }
}

impl Add for LossBreakdown {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            l_mr: self.l_mr + o.l_mr,
            l_be: self.l_be + o.l_be,
            l_bm: self.l_bm + o.l_bm,
        }
    }
}

impl AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

fn l2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_dims(a: ArrayView1<f64>, pos: ArrayView1<f64>, neg: ArrayView1<f64>) -> Result<()> {
    if a.len() != pos.len() || a.len() != neg.len() {
        return Err(Error::Shape(format!(
            "embedding sizes differ: {}, {}, {}",
            a.len(),
            pos.len(),
            neg.len()
        )));
    }
    Ok(())
}

/// `max(0, d(a,pos) - d(a,neg) + margin)` with Euclidean `d`.
pub fn margin_ranking_term(
    a: ArrayView1<f64>,
    pos: ArrayView1<f64>,
    neg: ArrayView1<f64>,
    margin: f64,
) -> Result<f64> {
    check_dims(a, pos, neg)?;
    Ok((l2(a, pos) - l2(a, neg) + margin).max(0.0))
}

/// Gradients of [`margin_ranking_term`] with respect to `(a, pos, neg)`.
/// Zero when the hinge is inactive; a zero distance contributes nothing.
pub fn margin_ranking_grad(
    a: ArrayView1<f64>,
    pos: ArrayView1<f64>,
    neg: ArrayView1<f64>,
    margin: f64,
) -> Result<(f64, [Array1<f64>; 3])> {
    let loss = margin_ranking_term(a, pos, neg, margin)?;
    let n = a.len();
    if loss <= 0.0 {
        return Ok((0.0, [Array1::zeros(n), Array1::zeros(n), Array1::zeros(n)]));
    }
    let unit = |x: ArrayView1<f64>, y: ArrayView1<f64>| {
        let d = l2(x, y);
        if d > 0.0 {
            (&x - &y) / d
        } else {
            Array1::zeros(n)
        }
    };
    let u_pos = unit(a, pos);
    let u_neg = unit(a, neg);
    let ga = &u_pos - &u_neg;
    Ok((loss, [ga, -u_pos, u_neg]))
}

/// Sum of [`margin_ranking_term`] over a batch.
pub fn margin_ranking_loss(
    batch: &[(ArrayView1<f64>, ArrayView1<f64>, ArrayView1<f64>)],
    margin: f64,
) -> Result<f64> {
    batch
        .iter()
        .map(|(a, p, n)| margin_ranking_term(*a, *p, *n, margin))
        .sum()
}

fn clamp(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// `-ln q_pos - ln(1 - q_neg)`.
pub fn entailment_bce(q_pos: f64, q_neg: f64) -> f64 {
    -clamp(q_pos).ln() - (1.0 - clamp(q_neg)).ln()
}

/// `(d/dq_pos, d/dq_neg)` of [`entailment_bce`]; zero where clamping is active.
pub fn entailment_bce_grad(q_pos: f64, q_neg: f64) -> [f64; 2] {
    let inside = |q: f64| (EPS..=1.0 - EPS).contains(&q);
    let gp = if inside(q_pos) { -1.0 / q_pos } else { 0.0 };
    let gn = if inside(q_neg) {
        1.0 / (1.0 - q_neg)
    } else {
        0.0
    };
    [gp, gn]
}

/// `max(0, p_neg - p_pos + margin)`.
pub fn prompt_margin_loss(p_pos: f64, p_neg: f64, margin: f64) -> f64 {
    (p_neg - p_pos + margin).max(0.0)
}

/// `(d/dp_pos, d/dp_neg)` of [`prompt_margin_loss`].
pub fn prompt_margin_grad(p_pos: f64, p_neg: f64, margin: f64) -> [f64; 2] {
    if p_neg - p_pos + margin > 0.0 {
        [-1.0, 1.0]
    } else {
        [0.0, 0.0]
    }
}

/// `l_mr + l_be + l_bm`, rejecting non-finite components.
pub fn total_loss(l_mr: f64, l_be: f64, l_bm: f64) -> Result<f64> {
    if !(l_mr.is_finite() && l_be.is_finite() && l_bm.is_finite()) {
        return Err(Error::Diverged(format!(
            "non-finite loss (l_mr={l_mr}, l_be={l_be}, l_bm={l_bm})"
        )));
    }
    Ok(l_mr + l_be + l_bm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn well_separated_triple_has_zero_margin_loss() {
        let a = array![0.0, 0.0];
        let p = array![0.0, 1.0];
        let n = array![3.0, 4.0];
        assert_eq!(
            margin_ranking_term(a.view(), p.view(), n.view(), 1.0).unwrap(),
            0.0
        );
        assert_eq!(
            margin_ranking_term(a.view(), p.view(), p.view(), 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = array![0.0, 0.0];
        let b = array![0.0];
        assert!(matches!(
            margin_ranking_term(a.view(), b.view(), a.view(), 1.0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn bce_examples() {
        assert!((entailment_bce(0.5, 0.5) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(entailment_bce(1.0, 0.0) < 1e-6);
        assert!(entailment_bce(0.0, 1.0).is_finite());
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(prompt_margin_loss(1.0, 0.0, 0.5), 0.0);
        assert_eq!(prompt_margin_loss(0.3, 0.3, 0.0), 0.0);
        assert!((prompt_margin_loss(0.4, 0.7, 0.5) - 0.8).abs() < 1e-12);
        assert_eq!(prompt_margin_grad(0.9, 0.1, 0.5), [0.0, 0.0]);
    }

    #[test]
    fn total_rejects_non_finite() {
        assert_eq!(total_loss(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0).unwrap(), 6.0);
        assert!(matches!(
            total_loss(f64::NAN, 0.0, 0.0),
            Err(Error::Diverged(_))
        ));
        assert!(matches!(
            total_loss(0.0, f64::INFINITY, 0.0),
            Err(Error::Diverged(_))
        ));
    }

    #[test]
    fn negative_must_differ_from_positive() {
        assert!(TrainingTriple::new("a", "b", "b").is_err());
        assert!(TrainingTriple::new("a", "b", "c").is_ok());
    }

    #[test]
    fn margin_gradient_matches_difference_quotient() {
        let a = array![0.3, -0.2, 0.5];
        let p = array![1.0, 0.4, -0.1];
        let n = array![0.2, -0.1, 0.6];
        let (_, g) = margin_ranking_grad(a.view(), p.view(), n.view(), 1.0).unwrap();
        let h = 1e-6;
        let vs = [a.clone(), p.clone(), n.clone()];
        for which in 0..3 {
            for k in 0..3 {
                let mut up = vs.clone();
                let mut down = vs.clone();
                up[which][k] += h;
                down[which][k] -= h;
                let f = |v: &[Array1<f64>; 3]| {
                    margin_ranking_term(v[0].view(), v[1].view(), v[2].view(), 1.0).unwrap()
                };
                let num = (f(&up) - f(&down)) / (2.0 * h);
                assert!((num - g[which][k]).abs() < 1e-7, "{which} {k}");
            }
        }
    }

    fn rotation(theta: f64, phi: f64) -> Array2<f64> {
        let (s, c) = theta.sin_cos();
        let (s2, c2) = phi.sin_cos();
        let rz = array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let rx = array![[1.0, 0.0, 0.0], [0.0, c2, -s2], [0.0, s2, c2]];
        rz.dot(&rx)
    }

    proptest! {
        #[test]
        fn losses_are_non_negative(qp in 0.0..=1.0f64, qn in 0.0..=1.0f64, m in 0.0..2.0f64) {
            prop_assert!(entailment_bce(qp, qn) >= 0.0);
            prop_assert!(prompt_margin_loss(qp, qn, m) >= 0.0);
        }

        #[test]
        fn bce_is_monotone(q in 0.01..0.98f64, dq in 0.001..0.01f64, other in 0.01..0.99f64) {
            prop_assert!(entailment_bce(q + dq, other) < entailment_bce(q, other));
            prop_assert!(entailment_bce(other, q + dq) > entailment_bce(other, q));
        }

        #[test]
        fn margin_loss_is_rotation_invariant(
            v in proptest::collection::vec(-3.0..3.0f64, 9),
            theta in 0.0..6.3f64,
            phi in 0.0..6.3f64,
            m in 0.0..2.0f64,
        ) {
            let a = Array1::from(v[0..3].to_vec());
            let p = Array1::from(v[3..6].to_vec());
            let n = Array1::from(v[6..9].to_vec());
            let r = rotation(theta, phi);
            let before = margin_ranking_term(a.view(), p.view(), n.view(), m).unwrap();
            let after = margin_ranking_term(r.dot(&a).view(), r.dot(&p).view(), r.dot(&n).view(), m).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn hinge_is_inactive_beyond_margin(p in 0.5..1.0f64, m in 0.0..0.4f64) {
            let neg = (p - m - 0.05).max(0.0);
            prop_assert_eq!(prompt_margin_grad(p, neg, m), [0.0, 0.0]);
        }
    }
}
