//! Reference pre-LayerNorm transformer encoder with explicit backpropagation.
//!
//! Each layer computes
//!
//! ```text
//! x1 = x  + Attn(LN1(x); mask)
//! y  = x1 + W2 gelu(W1 LN2(x1) + b1) + b2
//! ```
//!
//! and the stack ends with a final LayerNorm. Inputs are a [`View`]: the
//! rows of a pair input that are visible under one mask, with their own
//! position and segment ids. Rows that see nothing are never computed.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_positions: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Output size of the entity embedding projection.
    pub emb_size: usize,
    pub ln_eps: f64,
    /// Leading layers whose key projection starts equal to the query projection,
    /// so attention initially favours tokens with similar content.
    #[serde(default)]
    pub tied_qk_layers: usize,
    /// Init std of position and segment embeddings; token embeddings use 1.
    #[serde(default = "default_position_std")]
    pub position_std: f64,
}

fn default_position_std() -> f64 {
    0.25
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, max_positions: usize) -> Self {
        Self {
            vocab_size,
            max_positions,
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
            emb_size: 300,
            ln_eps: 1e-12,
            tied_qk_layers: 1,
            position_std: default_position_std(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size == 0 || self.max_positions == 0 || self.ffn == 0 || self.emb_size == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(self.position_std.is_finite() && self.position_std >= 0.0) {
            return Err(Error::Config(format!(
                "position_std must be finite and non-negative, got {}",
                self.position_std
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

/// Head parameters, stored output-major (`out x in`) so that `W h` reads
/// as written: `pool_w`/`pool_b` (pooler), `nsp_w` (2 x d, positive class
/// first), `mlm_w`/`mlm_b` (vocabulary projection) and `emb_w` (emb x d).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub pool_w: Array2<f64>,
    pub pool_b: Array2<f64>,
    pub nsp_w: Array2<f64>,
    pub mlm_w: Array2<f64>,
    pub mlm_b: Array2<f64>,
    pub emb_w: Array2<f64>,
}

/// Every trainable tensor of the model. Also used as the gradient buffer.
/// Biases and gains are `1 x n` rows so that they broadcast over sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub tok: Array2<f64>,
    pub pos: Array2<f64>,
    pub seg: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Array2<f64>,
    pub lnf_b: Array2<f64>,
    pub heads: HeadWeights,
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl Weights {
    /// Random initialisation. Residual-branch output projections are scaled
    /// down by `sqrt(2 * layers)`.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.hidden;
        let f = cfg.ffn;
        let lin = 1.0 / (d as f64).sqrt();
        let res = lin / (2.0 * cfg.layers.max(1) as f64).sqrt();
        let tok = normal(&mut rng, cfg.vocab_size, d, 1.0);
        let pos = normal(&mut rng, cfg.max_positions, d, cfg.position_std);
        let seg = normal(&mut rng, 2, d, cfg.position_std);
        let layers = (0..cfg.layers)
            .map(|li| {
                let wq = normal(&mut rng, d, d, lin);
                // drawn either way so later tensors do not depend on the tie count
                let wk = normal(&mut rng, d, d, lin);
                LayerWeights {
                    ln1_g: Array2::ones((1, d)),
                    ln1_b: Array2::zeros((1, d)),
                    wk: if li < cfg.tied_qk_layers {
                        wq.clone()
                    } else {
                        wk
                    },
                    wq,
                    bq: Array2::zeros((1, d)),
                    bk: Array2::zeros((1, d)),
                    wv: normal(&mut rng, d, d, lin),
                    bv: Array2::zeros((1, d)),
                    wo: normal(&mut rng, d, d, res),
                    bo: Array2::zeros((1, d)),
                    ln2_g: Array2::ones((1, d)),
                    ln2_b: Array2::zeros((1, d)),
                    w1: normal(&mut rng, d, f, lin),
                    b1: Array2::zeros((1, f)),
                    w2: normal(
                        &mut rng,
                        f,
                        d,
                        1.0 / (f as f64).sqrt() / (2.0 * cfg.layers.max(1) as f64).sqrt(),
                    ),
                    b2: Array2::zeros((1, d)),
                }
            })
            .collect();
        let heads = HeadWeights {
            pool_w: normal(&mut rng, d, d, lin),
            pool_b: Array2::zeros((1, d)),
            nsp_w: normal(&mut rng, 2, d, lin),
            mlm_w: normal(&mut rng, cfg.vocab_size, d, lin),
            mlm_b: Array2::zeros((1, cfg.vocab_size)),
            emb_w: normal(&mut rng, cfg.emb_size, d, lin),
        };
        Self {
            tok,
            pos,
            seg,
            layers,
            lnf_g: Array2::ones((1, d)),
            lnf_b: Array2::zeros((1, d)),
            heads,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Tensors in a fixed order, paired with stable names.
    pub fn named(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("tok".into(), &self.tok),
            ("pos".into(), &self.pos),
            ("seg".into(), &self.seg),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (n, t) in [
                ("ln1_g", &l.ln1_g),
                ("ln1_b", &l.ln1_b),
                ("wq", &l.wq),
                ("bq", &l.bq),
                ("wk", &l.wk),
                ("bk", &l.bk),
                ("wv", &l.wv),
                ("bv", &l.bv),
                ("wo", &l.wo),
                ("bo", &l.bo),
                ("ln2_g", &l.ln2_g),
                ("ln2_b", &l.ln2_b),
                ("w1", &l.w1),
                ("b1", &l.b1),
                ("w2", &l.w2),
                ("b2", &l.b2),
            ] {
                out.push((format!("layer{i}.{n}"), t));
            }
        }
        out.push(("lnf_g".into(), &self.lnf_g));
        out.push(("lnf_b".into(), &self.lnf_b));
        let h = &self.heads;
        out.push(("pool_w".into(), &h.pool_w));
        out.push(("pool_b".into(), &h.pool_b));
        out.push(("nsp_w".into(), &h.nsp_w));
        out.push(("mlm_w".into(), &h.mlm_w));
        out.push(("mlm_b".into(), &h.mlm_b));
        out.push(("emb_w".into(), &h.emb_w));
        out
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Same order as [`Weights::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = vec![&mut self.tok, &mut self.pos, &mut self.seg];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_g,
                &mut l.ln1_b,
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln2_g,
                &mut l.ln2_b,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ]);
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        let h = &mut self.heads;
        out.extend([
            &mut h.pool_w,
            &mut h.pool_b,
            &mut h.nsp_w,
            &mut h.mlm_w,
            &mut h.mlm_b,
            &mut h.emb_w,
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Weights) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|x| x * k);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// The rows of an input visible under one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    /// Original indices of the rows, ascending.
    pub rows: Vec<usize>,
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    pub segments: Vec<usize>,
    /// Row-major `n x n` visibility among `rows`; `None` means all visible.
    pub mask: Option<Vec<bool>>,
}

impl View {
    pub fn full(tokens: &[u32]) -> Self {
        let n = tokens.len();
        Self {
            rows: (0..n).collect(),
            tokens: tokens.to_vec(),
            positions: (0..n).collect(),
            segments: vec![0; n],
            mask: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn allowed(&self, i: usize, j: usize) -> bool {
        self.mask
            .as_ref()
            .is_none_or(|m| m[i * self.rows.len() + j])
    }
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn ln_forward(
    x: &Array2<f64>,
    g: &Array2<f64>,
    b: &Array2<f64>,
    eps: f64,
) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let xhat = centered * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

fn ln_backward(
    c: &LnCache,
    dy: &Array2<f64>,
    g: &Array2<f64>,
    dg: &mut Array2<f64>,
    db: &mut Array2<f64>,
) -> Array2<f64> {
    *dg += &(dy * &c.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let d = dy.ncols() as f64;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(1)) / d;
    let mut dx =
        dxhat - &mean_dxhat.insert_axis(Axis(1)) - &c.xhat * &mean_dxhat_xhat.insert_axis(Axis(1));
    dx *= &c.inv_std.view().insert_axis(Axis(1));
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct AttnCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

struct LayerCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    ffn_in: Array2<f64>,
    ffn_pre: Array2<f64>,
    ffn_act: Array2<f64>,
}

/// Activations kept from [`forward`] for [`backward`].
pub struct Cache {
    tokens: Vec<u32>,
    positions: Vec<usize>,
    segments: Vec<usize>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
}

fn attention(
    lw: &LayerWeights,
    x: Array2<f64>,
    view: &View,
    heads: usize,
) -> (Array2<f64>, AttnCache) {
    let n = x.nrows();
    let d = x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = x.dot(&lw.wq) + &lw.bq;
    let k = x.dot(&lw.wk) + &lw.bk;
    let v = x.dot(&lw.wv) + &lw.bv;
    let mut ctx = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t());
        for i in 0..n {
            let mut row = p.row_mut(i);
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if view.allowed(i, j) {
                    max = max.max(row[j] * scale);
                }
            }
            let mut sum = 0.0;
            for j in 0..n {
                if view.allowed(i, j) {
                    let e = (row[j] * scale - max).exp();
                    row[j] = e;
                    sum += e;
                } else {
                    row[j] = 0.0;
                }
            }
            if sum > 0.0 {
                row.mapv_inplace(|e| e / sum);
            }
        }
        ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    let out = ctx.dot(&lw.wo) + &lw.bo;
    (
        out,
        AttnCache {
            x,
            q,
            k,
            v,
            probs,
            ctx,
        },
    )
}

fn attention_backward(
    lw: &LayerWeights,
    c: &AttnCache,
    dout: &Array2<f64>,
    g: &mut LayerWeights,
    heads: usize,
) -> Array2<f64> {
    let n = dout.nrows();
    let d = dout.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    g.wo += &c.ctx.t().dot(dout);
    g.bo += &dout.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dctx = dout.dot(&lw.wo.t());
    let mut dq = Array2::zeros((n, d));
    let mut dk = Array2::zeros((n, d));
    let mut dv = Array2::zeros((n, d));
    for (h, p) in c.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dctx_h = dctx.slice(cols);
        let dp = dctx_h.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
        let row_dot = (&dp * p).sum_axis(Axis(1));
        let ds = (dp - &row_dot.insert_axis(Axis(1))) * p * scale;
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    g.wq += &c.x.t().dot(&dq);
    g.wk += &c.x.t().dot(&dk);
    g.wv += &c.x.t().dot(&dv);
    g.bq += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
    g.bk += &dk.sum_axis(Axis(0)).insert_axis(Axis(0));
    g.bv += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));
    dq.dot(&lw.wq.t()) + dk.dot(&lw.wk.t()) + dv.dot(&lw.wv.t())
}

fn check_view(cfg: &EncoderConfig, view: &View) -> Result<()> {
    let n = view.rows.len();
    if view.tokens.len() != n || view.positions.len() != n || view.segments.len() != n {
        return Err(Error::Shape("view vectors differ in length".into()));
    }
    if let Some(m) = &view.mask {
        if m.len() != n * n {
            return Err(Error::Shape(format!(
                "view mask has {} entries, expected {}",
                m.len(),
                n * n
            )));
        }
    }
    if let Some(&t) = view.tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Encoding(format!(
            "token id {t} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    if let Some(&p) = view.positions.iter().find(|&&p| p >= cfg.max_positions) {
        return Err(Error::Encoding(format!(
            "position {p} beyond the {} learned positions",
            cfg.max_positions
        )));
    }
    if view.segments.iter().any(|&s| s > 1) {
        return Err(Error::Encoding("segment id must be 0 or 1".into()));
    }
    Ok(())
}

/// Runs the encoder over the visible rows; returns `n x d` hidden states.
pub fn forward(cfg: &EncoderConfig, w: &Weights, view: &View) -> Result<(Array2<f64>, Cache)> {
    check_view(cfg, view)?;
    let n = view.len();
    let d = cfg.hidden;
    let mut x = Array2::zeros((n, d));
    for i in 0..n {
        let mut row = x.row_mut(i);
        row += &w.tok.row(view.tokens[i] as usize);
        row += &w.pos.row(view.positions[i]);
        row += &w.seg.row(view.segments[i]);
    }
    let mut layers = Vec::with_capacity(cfg.layers);
    for lw in &w.layers {
        let (a, ln1) = ln_forward(&x, &lw.ln1_g, &lw.ln1_b, cfg.ln_eps);
        let (attn_out, attn) = attention(lw, a, view, cfg.heads);
        x += &attn_out;
        let (b, ln2) = ln_forward(&x, &lw.ln2_g, &lw.ln2_b, cfg.ln_eps);
        let ffn_pre = b.dot(&lw.w1) + &lw.b1;
        let ffn_act = ffn_pre.mapv(gelu);
        x += &(ffn_act.dot(&lw.w2) + &lw.b2);
        layers.push(LayerCache {
            ln1,
            attn,
            ln2,
            ffn_in: b,
            ffn_pre,
            ffn_act,
        });
    }
    let (h, lnf) = ln_forward(&x, &w.lnf_g, &w.lnf_b, cfg.ln_eps);
    Ok((
        h,
        Cache {
            tokens: view.tokens.clone(),
            positions: view.positions.clone(),
            segments: view.segments.clone(),
            layers,
            lnf,
        },
    ))
}

/// Accumulates into `grads` the gradient of a scalar whose derivative with
/// respect to the forward output is `dh`.
pub fn backward(
    cfg: &EncoderConfig,
    w: &Weights,
    cache: &Cache,
    dh: &Array2<f64>,
    grads: &mut Weights,
) {
    let mut dx = ln_backward(&cache.lnf, dh, &w.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);
    for (l, (lw, c)) in w.layers.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.layers[l];
        // feed-forward branch
        g.w2 += &c.ffn_act.t().dot(&dx);
        g.b2 += &dx.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dpre = dx.dot(&lw.w2.t());
        ndarray::Zip::from(&mut dpre)
            .and(&c.ffn_pre)
            .for_each(|d, &p| *d *= gelu_grad(p));
        g.w1 += &c.ffn_in.t().dot(&dpre);
        g.b1 += &dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
        let db = dpre.dot(&lw.w1.t());
        dx += &ln_backward(&c.ln2, &db, &lw.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
        // attention branch
        let da = attention_backward(lw, &c.attn, &dx, g, cfg.heads);
        dx += &ln_backward(&c.ln1, &da, &lw.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
    }
    for i in 0..dx.nrows() {
        let r = dx.row(i);
        let mut t = grads.tok.row_mut(cache.tokens[i] as usize);
        t += &r;
        let mut p = grads.pos.row_mut(cache.positions[i]);
        p += &r;
        let mut s = grads.seg.row_mut(cache.segments[i]);
        s += &r;
    }
}

/// `W x` for an output-major weight matrix.
pub(crate) fn matvec(w: &Array2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    w.dot(&x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (EncoderConfig, Weights) {
        let cfg = EncoderConfig {
            hidden: 8,
            layers: 2,
            heads: 2,
            ffn: 16,
            emb_size: 4,
            ..EncoderConfig::new(12, 10)
        };
        let w = Weights::init(&cfg, 3);
        (cfg, w)
    }

    #[test]
    fn output_shape_and_finiteness() {
        let (cfg, w) = tiny();
        let (h, _) = forward(&cfg, &w, &View::full(&[2, 5, 6, 3])).unwrap();
        assert_eq!(h.dim(), (4, 8));
        assert!(h.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn out_of_vocab_is_rejected() {
        let (cfg, w) = tiny();
        assert!(matches!(
            forward(&cfg, &w, &View::full(&[2, 99])),
            Err(Error::Encoding(_))
        ));
    }

    #[test]
    fn fully_masked_row_gets_no_context() {
        let (cfg, w) = tiny();
        let mut v = View::full(&[2, 5, 6]);
        v.mask = Some(vec![
            true, true, false, true, true, false, false, false, false,
        ]);
        let (h, _) = forward(&cfg, &w, &v).unwrap();
        assert!(h.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn tensor_lists_agree() {
        let (_, mut w) = tiny();
        let shapes: Vec<_> = w.tensors().iter().map(|t| t.dim()).collect();
        let shapes_mut: Vec<_> = w.tensors_mut().iter().map(|t| t.dim()).collect();
        assert_eq!(shapes, shapes_mut);
        assert_eq!(w.named().len(), shapes.len());
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let (cfg, mut w) = tiny();
        let mut v = View::full(&[2, 5, 6, 7, 3]);
        v.segments = vec![0, 0, 0, 1, 1];
        v.mask = Some((0..25).map(|k| (k / 5 + k % 5) % 4 != 3).collect());
        let probe = Array2::from_shape_fn((5, 8), |(i, j)| ((i * 8 + j) as f64 * 0.37).sin());
        let loss = |w: &Weights| -> f64 {
            let (h, _) = forward(&cfg, w, &v).unwrap();
            (&h * &probe).sum()
        };
        let (_, cache) = forward(&cfg, &w, &v).unwrap();
        let mut g = w.zeros_like();
        backward(&cfg, &w, &cache, &probe, &mut g);

        let analytic: Vec<f64> = g
            .tensors()
            .iter()
            .flat_map(|t| t.iter().copied().collect::<Vec<_>>())
            .collect();
        let mut k = 0;
        let eps = 1e-6;
        let n_tensors = w.tensors().len();
        for ti in 0..n_tensors {
            let len = w.tensors()[ti].len();
            for ei in 0..len {
                let orig = w.tensors()[ti].as_slice().unwrap()[ei];
                w.tensors_mut()[ti].as_slice_mut().unwrap()[ei] = orig + eps;
                let up = loss(&w);
                w.tensors_mut()[ti].as_slice_mut().unwrap()[ei] = orig - eps;
                let down = loss(&w);
                w.tensors_mut()[ti].as_slice_mut().unwrap()[ei] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic[k];
                let err = (a - numeric).abs();
                assert!(
                    err <= 1e-6 * a.abs().max(numeric.abs()).max(1.0),
                    "tensor {} elem {ei}: analytic {a} numeric {numeric}",
                    w.named()[ti].0
                );
                k += 1;
            }
        }
    }
}
