//! Encoder and head outputs against direct scalar recomputation.

use kg_entail::encoder::heads::{embed, mlm, mlm_vocab, nsp};
use kg_entail::encoder::transformer::forward;
use kg_entail::encoder::{EncoderConfig, HeadWeights, Verbalizer, View, Weights};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn to_vec(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

// row-vector times matrix stored `in x out`
fn vecmat(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    (0..b.len())
        .map(|j| b[j] + (0..x.len()).map(|i| x[i] * w[i][j]).sum::<f64>())
        .collect()
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + eps).sqrt() * g[i] + b[i])
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn hand_set(rows: usize, cols: usize, salt: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        (salt + 0.7 * i as f64 - 0.3 * j as f64).sin() * 0.8
    })
}

#[test]
fn single_layer_matches_direct_attention() {
    let cfg = EncoderConfig {
        hidden: 4,
        layers: 1,
        heads: 2,
        ffn: 6,
        emb_size: 2,
        ..EncoderConfig::new(5, 3)
    };
    let mut w = Weights::init(&cfg, 0);
    w.tok = hand_set(5, 4, 0.1);
    w.pos = hand_set(3, 4, 1.3);
    w.seg = hand_set(2, 4, 2.2);
    {
        let l = &mut w.layers[0];
        l.ln1_g = hand_set(1, 4, 0.4) + 1.0;
        l.ln1_b = hand_set(1, 4, 0.9) * 0.1;
        l.wq = hand_set(4, 4, 3.1);
        l.bq = hand_set(1, 4, 3.7) * 0.1;
        l.wk = hand_set(4, 4, 4.2);
        l.bk = hand_set(1, 4, 4.8) * 0.1;
        l.wv = hand_set(4, 4, 5.3);
        l.bv = hand_set(1, 4, 5.9) * 0.1;
        l.wo = hand_set(4, 4, 6.4);
        l.bo = hand_set(1, 4, 6.6) * 0.1;
        l.ln2_g = hand_set(1, 4, 7.1) + 1.0;
        l.ln2_b = hand_set(1, 4, 7.5) * 0.1;
        l.w1 = hand_set(4, 6, 8.2);
        l.b1 = hand_set(1, 6, 8.8) * 0.1;
        l.w2 = hand_set(6, 4, 9.3);
        l.b2 = hand_set(1, 4, 9.9) * 0.1;
    }
    w.lnf_g = hand_set(1, 4, 10.4) + 1.0;
    w.lnf_b = hand_set(1, 4, 10.9) * 0.1;

    let view = View {
        rows: vec![0, 1, 2],
        tokens: vec![4, 1, 3],
        positions: vec![0, 1, 2],
        segments: vec![0, 0, 1],
        mask: None,
    };
    let (h, _) = forward(&cfg, &w, &view).unwrap();

    let l = &w.layers[0];
    let row = |a: &Array2<f64>| a.row(0).to_vec();
    let eps = cfg.ln_eps;
    let x: Mat = (0..3)
        .map(|i| {
            (0..4)
                .map(|c| {
                    w.tok[[view.tokens[i] as usize, c]]
                        + w.pos[[view.positions[i], c]]
                        + w.seg[[view.segments[i], c]]
                })
                .collect()
        })
        .collect();
    let a: Mat = x
        .iter()
        .map(|r| layer_norm(r, &row(&l.ln1_g), &row(&l.ln1_b), eps))
        .collect();
    let q: Mat = a
        .iter()
        .map(|r| vecmat(r, &to_vec(&l.wq), &row(&l.bq)))
        .collect();
    let k: Mat = a
        .iter()
        .map(|r| vecmat(r, &to_vec(&l.wk), &row(&l.bk)))
        .collect();
    let v: Mat = a
        .iter()
        .map(|r| vecmat(r, &to_vec(&l.wv), &row(&l.bv)))
        .collect();
    let dh = 2;
    let mut ctx = vec![vec![0.0; 4]; 3];
    for head in 0..2 {
        let cols = head * dh..(head + 1) * dh;
        for i in 0..3 {
            let scores: Vec<f64> = (0..3)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for j in 0..3 {
                let p = scores[j].exp() / z;
                for c in cols.clone() {
                    ctx[i][c] += p * v[j][c];
                }
            }
        }
    }
    let expect: Mat = (0..3)
        .map(|i| {
            let attn = vecmat(&ctx[i], &to_vec(&l.wo), &row(&l.bo));
            let x1: Vec<f64> = (0..4).map(|c| x[i][c] + attn[c]).collect();
            let b = layer_norm(&x1, &row(&l.ln2_g), &row(&l.ln2_b), eps);
            let f: Vec<f64> = vecmat(&b, &to_vec(&l.w1), &row(&l.b1))
                .into_iter()
                .map(gelu)
                .collect();
            let f = vecmat(&f, &to_vec(&l.w2), &row(&l.b2));
            let x2: Vec<f64> = (0..4).map(|c| x1[c] + f[c]).collect();
            layer_norm(&x2, &row(&w.lnf_g), &row(&w.lnf_b), eps)
        })
        .collect();
    for i in 0..3 {
        for c in 0..4 {
            assert!(
                (h[[i, c]] - expect[i][c]).abs() < 1e-12,
                "row {i} col {c}: {} vs {}",
                h[[i, c]],
                expect[i][c]
            );
        }
    }
}

fn heads(d: usize, vocab: usize, emb: usize, rng: &mut ChaCha8Rng) -> HeadWeights {
    let mut r = |rows: usize, cols: usize| {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    };
    HeadWeights {
        pool_w: r(d, d),
        pool_b: r(1, d),
        nsp_w: r(2, d),
        mlm_w: r(vocab, d),
        mlm_b: r(1, vocab),
        emb_w: r(emb, d),
    }
}

#[test]
fn embedding_projection_is_a_plain_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let w = heads(7, 3, 5, &mut rng);
        let h = Array1::from_shape_fn(7, |_| rng.gen_range(-2.0..2.0));
        let e = embed(&w, h.view());
        for r in 0..5 {
            let dot: f64 = (0..7).map(|c| w.emb_w[[r, c]] * h[c]).sum();
            assert!((e[r] - dot).abs() < 1e-12);
        }
    }
}

#[test]
fn nsp_head_on_hand_set_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut w = heads(2, 3, 2, &mut rng);
    w.pool_w = ndarray::arr2(&[[0.5, -1.0], [2.0, 0.0]]);
    w.pool_b = ndarray::arr2(&[[0.1, -0.2]]);
    w.nsp_w = ndarray::arr2(&[[1.0, 2.0], [-1.0, 0.5]]);
    let (z, _) = nsp(&w, ndarray::arr1(&[1.0, 0.5]).view());
    // tanh(0.1) + 2 tanh(1.8), -tanh(0.1) + 0.5 tanh(1.8)
    assert!((z[0] - 1.993_280_020_317_492_5).abs() < 1e-12);
    assert!((z[1] - 0.373_735_011_798_178_36).abs() < 1e-12);
}

#[test]
fn mlm_extraction_matches_full_vocabulary_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let w = heads(8, 50, 4, &mut rng);
        let h = Array1::from_shape_fn(8, |_| rng.gen_range(-2.0..2.0));
        let pos = rng.gen_range(0..50u32);
        let neg = (pos + rng.gen_range(1..50u32)) % 50;
        let v = Verbalizer::new(pos, neg).unwrap();
        let full: Vec<f64> = (0..50)
            .map(|t| w.mlm_b[[0, t]] + (0..8).map(|c| w.mlm_w[[t, c]] * h[c]).sum::<f64>())
            .collect();
        let z = mlm(&w, h.view(), &v);
        assert!((z[0] - full[pos as usize]).abs() < 1e-12);
        assert!((z[1] - full[neg as usize]).abs() < 1e-12);
        let vocab = mlm_vocab(&w, h.view());
        assert!((0..50).all(|t| (vocab[t] - full[t]).abs() < 1e-12));
    }
}
