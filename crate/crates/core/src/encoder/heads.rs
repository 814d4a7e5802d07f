//! Scoring heads on top of encoder hidden states, with their gradients.
//!
//! All heads read a single hidden row: the classification row for the
//! embedding projection and the NSP head, the mask row for the MLM head.

use ndarray::{Array1, Array2, ArrayView1};

use super::transformer::{matvec, HeadWeights};
use super::Verbalizer;

fn outer_add(acc: &mut Array2<f64>, g: &Array1<f64>, x: ArrayView1<f64>) {
    for (i, gi) in g.iter().enumerate() {
        if *gi != 0.0 {
            acc.row_mut(i).scaled_add(*gi, &x);
        }
    }
}

/// `e = W_emb h`.
pub fn embed(w: &HeadWeights, h_cls: ArrayView1<f64>) -> Array1<f64> {
    matvec(&w.emb_w, h_cls)
}

/// Gradient of `embed`; returns `dL/dh`.
pub fn embed_backward(
    w: &HeadWeights,
    h_cls: ArrayView1<f64>,
    de: &Array1<f64>,
    g: &mut HeadWeights,
) -> Array1<f64> {
    outer_add(&mut g.emb_w, de, h_cls);
    w.emb_w.t().dot(de)
}

/// Pooled activation `tanh(W h + b)` kept for the NSP backward pass.
pub struct NspCache {
    pooled: Array1<f64>,
}

/// `W_nsp tanh(W h + b)`, positive class first.
pub fn nsp(w: &HeadWeights, h_cls: ArrayView1<f64>) -> ([f64; 2], NspCache) {
    let pre = matvec(&w.pool_w, h_cls) + &w.pool_b.row(0);
    let pooled = pre.mapv(f64::tanh);
    let z = matvec(&w.nsp_w, pooled.view());
    ([z[0], z[1]], NspCache { pooled })
}

pub fn nsp_backward(
    w: &HeadWeights,
    h_cls: ArrayView1<f64>,
    cache: &NspCache,
    dz: [f64; 2],
    g: &mut HeadWeights,
) -> Array1<f64> {
    let dz = Array1::from(dz.to_vec());
    outer_add(&mut g.nsp_w, &dz, cache.pooled.view());
    let dpooled = w.nsp_w.t().dot(&dz);
    let dpre = &dpooled * &cache.pooled.mapv(|t| 1.0 - t * t);
    outer_add(&mut g.pool_w, &dpre, h_cls);
    g.pool_b.row_mut(0).scaled_add(1.0, &dpre);
    w.pool_w.t().dot(&dpre)
}

/// Full-vocabulary logits `W_mlm h + b`.
pub fn mlm_vocab(w: &HeadWeights, h_mask: ArrayView1<f64>) -> Array1<f64> {
    matvec(&w.mlm_w, h_mask) + &w.mlm_b.row(0)
}

/// The verbalizer's two entries of [`mlm_vocab`], computed without the
/// rest of the vocabulary.
pub fn mlm(w: &HeadWeights, h_mask: ArrayView1<f64>, v: &Verbalizer) -> [f64; 2] {
    let at = |id: u32| w.mlm_w.row(id as usize).dot(&h_mask) + w.mlm_b[[0, id as usize]];
    [at(v.positive), at(v.negative)]
}

pub fn mlm_backward(
    w: &HeadWeights,
    h_mask: ArrayView1<f64>,
    v: &Verbalizer,
    dz: [f64; 2],
    g: &mut HeadWeights,
) -> Array1<f64> {
    let mut dh = Array1::zeros(h_mask.len());
    for (id, d) in [(v.positive, dz[0]), (v.negative, dz[1])] {
        let id = id as usize;
        g.mlm_w.row_mut(id).scaled_add(d, &h_mask);
        g.mlm_b[[0, id]] += d;
        dh.scaled_add(d, &w.mlm_w.row(id));
    }
    dh
}

/// Positive-class probability of a two-way softmax over `(z_pos, z_neg)`.
pub fn positive_probability(z: [f64; 2]) -> f64 {
    let x = z[0] - z[1];
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `dp+/dz` for [`positive_probability`].
pub fn positive_probability_grad(z: [f64; 2]) -> [f64; 2] {
    let p = positive_probability(z);
    let d = p * (1.0 - p);
    [d, -d]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_is_symmetric_and_bounded() {
        assert_eq!(positive_probability([3.0, 3.0]), 0.5);
        assert!(
            (positive_probability([2.0, -1.0]) + positive_probability([-1.0, 2.0]) - 1.0).abs()
                < 1e-15
        );
        assert_eq!(positive_probability([1000.0, -1000.0]), 1.0);
        assert_eq!(positive_probability([-1000.0, 1000.0]), 0.0);
    }

    #[test]
    fn probability_gradient_matches_difference_quotient() {
        let z = [0.3, -0.8];
        let g = positive_probability_grad(z);
        let h = 1e-6;
        let num = (positive_probability([z[0] + h, z[1]]) - positive_probability([z[0] - h, z[1]]))
            / (2.0 * h);
        assert!((g[0] - num).abs() < 1e-9);
        assert_eq!(g[0], -g[1]);
    }
}
