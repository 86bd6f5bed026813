//! Single-stack self-attention encoder.
//!
//! `H⁰ = X·W_proj + E_pos`, then per layer (pre-norm):
//!
//! ```text
//! H ← H + Dropout(MultiHead(LN₁(H)))
//! H ← H + Dropout(FFN(LN₂(H)))        FFN(x) = GELU(x·W₁ + b₁)·W₂ + b₂
//! ```
//!
//! and the feature is the mean of the final hidden states over time.
//! Heads split the columns of `W_Q`, `W_K`, `W_V` into `n_heads` blocks of
//! width `d_model / n_heads`, which is the per-head projection written as
//! one matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    add_row, column_sums, gelu, gelu_grad, layer_norm, layer_norm_backward, softmax_rows,
    softmax_rows_backward, LayerNormCache,
};
use super::{check_map, dropout_mask, init_uniform, BackboneGrads, Dropout, Param, ParamSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub t_steps: usize,
    pub channels: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Inner width of the feed-forward sublayer.
    pub ffn_dim: usize,
    /// Keep the positional encodings fixed at their initial values.
    #[serde(default)]
    pub freeze_pos: bool,
}

impl AttentionConfig {
    /// Four heads, two layers, width 128.
    pub fn reference(t_steps: usize, channels: usize) -> Self {
        Self {
            t_steps,
            channels,
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            ffn_dim: 256,
            freeze_pos: false,
        }
    }

    /// Small default that trains in seconds on a laptop.
    pub fn desk(t_steps: usize, channels: usize) -> Self {
        Self {
            t_steps,
            channels,
            d_model: 32,
            n_heads: 2,
            n_layers: 1,
            ffn_dim: 64,
            freeze_pos: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.t_steps, self.channels, self.d_model, self.n_heads, self.n_layers, self.ffn_dim]
            .contains(&0)
        {
            return Err(Error::Config("attention dimensions must be >= 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

const W_PROJ: usize = 0;
const E_POS: usize = 1;
const PER_LAYER: usize = 12;

// offsets inside a layer block
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const WK: usize = 3;
const WV: usize = 4;
const WO: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const FF_W1: usize = 8;
const FF_B1: usize = 9;
const FF_W2: usize = 10;
const FF_B2: usize = 11;

fn idx(layer: usize, offset: usize) -> usize {
    2 + layer * PER_LAYER + offset
}

pub(crate) fn init(cfg: &AttentionConfig, rng: &mut impl Rng) -> ParamSet {
    let d = cfg.d_model;
    let f = cfg.ffn_dim;
    let mut params = vec![
        Param {
            name: "w_proj".into(),
            value: init_uniform(rng, cfg.channels, d, cfg.channels),
            trainable: true,
        },
        Param {
            name: "e_pos".into(),
            value: init_uniform(rng, cfg.t_steps, d, d),
            trainable: !cfg.freeze_pos,
        },
    ];
    for l in 0..cfg.n_layers {
        let mut ones = Matrix::zeros(1, d);
        ones.fill(1.0);
        let tensors = [
            ("ln1_g", ones.clone()),
            ("ln1_b", Matrix::zeros(1, d)),
            ("wq", init_uniform(rng, d, d, d)),
            ("wk", init_uniform(rng, d, d, d)),
            ("wv", init_uniform(rng, d, d, d)),
            ("wo", init_uniform(rng, d, d, d)),
            ("ln2_g", ones),
            ("ln2_b", Matrix::zeros(1, d)),
            ("ff_w1", init_uniform(rng, d, f, d)),
            ("ff_b1", init_uniform(rng, 1, f, d)),
            ("ff_w2", init_uniform(rng, f, d, f)),
            ("ff_b2", init_uniform(rng, 1, d, f)),
        ];
        for (name, value) in tensors {
            params.push(Param {
                name: format!("layer{l}.{name}"),
                value,
                trainable: true,
            });
        }
    }
    ParamSet::new(params)
}

#[derive(Debug, Clone)]
struct LayerTape {
    ln1: LayerNormCache,
    a: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    concat: Matrix,
    attn_mask: Option<Vec<f64>>,
    ln2: LayerNormCache,
    b: Matrix,
    f1: Matrix,
    g: Matrix,
    ffn_mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct AttentionTape {
    input: Matrix,
    layers: Vec<LayerTape>,
}

impl AttentionTape {
    /// Attention probabilities, indexed `[layer][head]`, each `T × T`.
    pub fn attention_probs(&self) -> Vec<&[Matrix]> {
        self.layers.iter().map(|l| l.probs.as_slice()).collect()
    }
}

fn columns(m: &Matrix, start: usize, width: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), width);
    for i in 0..m.rows() {
        out.row_mut(i).copy_from_slice(&m.row(i)[start..start + width]);
    }
    out
}

fn put_columns(dst: &mut Matrix, src: &Matrix, start: usize) {
    for i in 0..src.rows() {
        dst.row_mut(i)[start..start + src.cols()].copy_from_slice(src.row(i));
    }
}

fn apply_mask(m: &mut Matrix, mask: &Option<Vec<f64>>) {
    if let Some(mask) = mask {
        m.as_mut_slice().iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
    }
}

pub(crate) fn forward(
    cfg: &AttentionConfig,
    params: &ParamSet,
    map: &Matrix,
    dropout: Dropout,
) -> Result<(Vec<f64>, AttentionTape)> {
    check_map(map, Some(cfg.t_steps), cfg.channels)?;
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut masker = dropout.masker();

    let mut h = map.matmul(params.value(W_PROJ));
    h.axpy(1.0, params.value(E_POS));

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let p = |o| params.value(idx(l, o));
        let (a, ln1) = layer_norm(&h, p(LN1_G).as_slice(), p(LN1_B).as_slice());
        let q = a.matmul(p(WQ));
        let k = a.matmul(p(WK));
        let v = a.matmul(p(WV));

        let mut concat = Matrix::zeros(cfg.t_steps, cfg.d_model);
        let mut probs = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let start = head * dk;
            let qh = columns(&q, start, dk);
            let kh = columns(&k, start, dk);
            let vh = columns(&v, start, dk);
            let mut s = qh.matmul_t(&kh);
            s.scale(scale);
            softmax_rows(&mut s);
            put_columns(&mut concat, &s.matmul(&vh), start);
            probs.push(s);
        }
        let mut m = concat.matmul(p(WO));
        let attn_mask = dropout_mask(&mut masker, m.as_slice().len());
        apply_mask(&mut m, &attn_mask);
        h.axpy(1.0, &m);

        let (b, ln2) = layer_norm(&h, p(LN2_G).as_slice(), p(LN2_B).as_slice());
        let mut f1 = b.matmul(p(FF_W1));
        add_row(&mut f1, p(FF_B1).as_slice());
        let mut g = f1.clone();
        g.as_mut_slice().iter_mut().for_each(|x| *x = gelu(*x));
        let mut f2 = g.matmul(p(FF_W2));
        add_row(&mut f2, p(FF_B2).as_slice());
        let ffn_mask = dropout_mask(&mut masker, f2.as_slice().len());
        apply_mask(&mut f2, &ffn_mask);
        h.axpy(1.0, &f2);

        layers.push(LayerTape {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            concat,
            attn_mask,
            ln2,
            b,
            f1,
            g,
            ffn_mask,
        });
    }

    let z = h.column_means();
    Ok((
        z,
        AttentionTape {
            input: map.clone(),
            layers,
        },
    ))
}

pub(crate) fn backward(
    cfg: &AttentionConfig,
    params: &ParamSet,
    tape: &AttentionTape,
    dz: &[f64],
) -> BackboneGrads {
    let t = cfg.t_steps;
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut grads = params.zeros_like();

    let mut dh = Matrix::zeros(t, cfg.d_model);
    let inv_t = 1.0 / t as f64;
    for i in 0..t {
        for (o, g) in dh.row_mut(i).iter_mut().zip(dz) {
            *o = g * inv_t;
        }
    }

    for l in (0..cfg.n_layers).rev() {
        let lt = &tape.layers[l];
        let p = |o| params.value(idx(l, o));

        // feed-forward sublayer
        let mut df2 = dh.clone();
        apply_mask(&mut df2, &lt.ffn_mask);
        grads[idx(l, FF_W2)] = lt.g.t_matmul(&df2);
        grads[idx(l, FF_B2)] = Matrix::from_vec(1, cfg.d_model, column_sums(&df2)).unwrap();
        let mut df1 = df2.matmul_t(p(FF_W2));
        for (d, x) in df1.as_mut_slice().iter_mut().zip(lt.f1.as_slice()) {
            *d *= gelu_grad(*x);
        }
        grads[idx(l, FF_W1)] = lt.b.t_matmul(&df1);
        grads[idx(l, FF_B1)] = Matrix::from_vec(1, cfg.ffn_dim, column_sums(&df1)).unwrap();
        let db = df1.matmul_t(p(FF_W1));
        let (dln2, dg2, db2) = layer_norm_backward(&db, &lt.ln2, p(LN2_G).as_slice());
        grads[idx(l, LN2_G)] = Matrix::from_vec(1, cfg.d_model, dg2).unwrap();
        grads[idx(l, LN2_B)] = Matrix::from_vec(1, cfg.d_model, db2).unwrap();
        dh.axpy(1.0, &dln2);

        // attention sublayer
        let mut dm = dh.clone();
        apply_mask(&mut dm, &lt.attn_mask);
        grads[idx(l, WO)] = lt.concat.t_matmul(&dm);
        let dconcat = dm.matmul_t(p(WO));

        let mut dq = Matrix::zeros(t, cfg.d_model);
        let mut dkm = Matrix::zeros(t, cfg.d_model);
        let mut dv = Matrix::zeros(t, cfg.d_model);
        for (head, probs) in lt.probs.iter().enumerate() {
            let start = head * dk;
            let doh = columns(&dconcat, start, dk);
            let qh = columns(&lt.q, start, dk);
            let kh = columns(&lt.k, start, dk);
            let vh = columns(&lt.v, start, dk);
            let dp = doh.matmul_t(&vh);
            put_columns(&mut dv, &probs.t_matmul(&doh), start);
            let mut ds = softmax_rows_backward(probs, &dp);
            ds.scale(scale);
            put_columns(&mut dq, &ds.matmul(&kh), start);
            put_columns(&mut dkm, &ds.t_matmul(&qh), start);
        }
        grads[idx(l, WQ)] = lt.a.t_matmul(&dq);
        grads[idx(l, WK)] = lt.a.t_matmul(&dkm);
        grads[idx(l, WV)] = lt.a.t_matmul(&dv);
        let mut da = dq.matmul_t(p(WQ));
        da.axpy(1.0, &dkm.matmul_t(p(WK)));
        da.axpy(1.0, &dv.matmul_t(p(WV)));
        let (dln1, dg1, db1) = layer_norm_backward(&da, &lt.ln1, p(LN1_G).as_slice());
        grads[idx(l, LN1_G)] = Matrix::from_vec(1, cfg.d_model, dg1).unwrap();
        grads[idx(l, LN1_B)] = Matrix::from_vec(1, cfg.d_model, db1).unwrap();
        dh.axpy(1.0, &dln1);
    }

    grads[W_PROJ] = tape.input.t_matmul(&dh);
    let input = dh.matmul_t(params.value(W_PROJ));
    grads[E_POS] = dh;
    BackboneGrads {
        params: grads,
        input,
    }
}
