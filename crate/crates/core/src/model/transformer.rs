use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AttnIdx, Layout, ModelConfig};
use crate::autodiff::{Scalar, Tape, Var};

const MASKED: f64 = -1e9;

/// Inverted dropout with masks drawn from a seeded stream.
pub(crate) struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

fn dropout<S: Scalar>(tape: &mut Tape<S>, x: Var, drop: &mut Option<Dropout>) -> Var {
    match drop {
        Some(d) if d.rate > 0.0 => {
            let (r, c) = tape.shape(x);
            let keep = 1.0 / (1.0 - d.rate);
            let mask = (0..r * c).map(|_| if d.rng.gen::<f64>() < d.rate { 0.0 } else { keep }).collect();
            tape.mul_const(x, mask)
        }
        _ => x,
    }
}

fn embed<S: Scalar>(tape: &mut Tape<S>, p: &[Var], tok: usize, pos: usize, ids: &[u32]) -> Var {
    let ids: Vec<usize> = ids.iter().map(|t| *t as usize).collect();
    let positions: Vec<usize> = (0..ids.len()).collect();
    let t = tape.gather(p[tok], &ids);
    let q = tape.gather(p[pos], &positions);
    tape.add(t, q)
}

fn attention<S: Scalar>(tape: &mut Tape<S>, cfg: &ModelConfig, p: &[Var], w: &AttnIdx, xq: Var, xkv: Var, causal: bool) -> Var {
    let q = tape.matmul(xq, p[w.q]);
    let k = tape.matmul(xkv, p[w.k]);
    let v = tape.matmul(xkv, p[w.v]);
    let (nq, _) = tape.shape(q);
    let (nk, _) = tape.shape(k);
    let dh = cfg.head_dim();
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mask: Option<Vec<f64>> = causal.then(|| (0..nq * nk).map(|ij| if ij % nk > ij / nk { MASKED } else { 0.0 }).collect());
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let mut scores = tape.matmul_nt(qh, kh);
        scores = tape.scale(scores, scale);
        if let Some(m) = &mask {
            scores = tape.add_const(scores, m);
        }
        let weights = tape.softmax(scores);
        heads.push(tape.matmul(weights, vh));
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
    tape.matmul(cat, p[w.o])
}

fn ffn<S: Scalar>(tape: &mut Tape<S>, p: &[Var], wi: usize, wo: usize, x: Var) -> Var {
    let h = tape.matmul(x, p[wi]);
    let h = tape.gelu(h);
    tape.matmul(h, p[wo])
}

pub(crate) fn encode<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &ModelConfig,
    l: &Layout,
    p: &[Var],
    ids: &[u32],
    drop: &mut Option<Dropout>,
) -> Var {
    let mut x = embed(tape, p, l.tok, l.enc_pos, ids);
    if let Some(n) = l.enc_embed_norm {
        x = tape.rms_norm(x, p[n]);
    }
    x = dropout(tape, x, drop);
    for layer in &l.enc_layers {
        let h = tape.rms_norm(x, p[layer.attn_norm]);
        let a = attention(tape, cfg, p, &layer.attn, h, h, false);
        let a = dropout(tape, a, drop);
        x = tape.add(x, a);
        let h = tape.rms_norm(x, p[layer.ffn_norm]);
        let f = ffn(tape, p, layer.wi, layer.wo, h);
        let f = dropout(tape, f, drop);
        x = tape.add(x, f);
    }
    tape.rms_norm(x, p[l.enc_final])
}

/// Next-token logits `[len(dec_in), vocab]`.
pub(crate) fn decode<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &ModelConfig,
    l: &Layout,
    p: &[Var],
    enc: Var,
    dec_in: &[u32],
    drop: &mut Option<Dropout>,
) -> Var {
    let mut x = embed(tape, p, l.tok, l.dec_pos, dec_in);
    if let Some(n) = l.dec_embed_norm {
        x = tape.rms_norm(x, p[n]);
    }
    x = dropout(tape, x, drop);
    for layer in &l.dec_layers {
        let h = tape.rms_norm(x, p[layer.self_norm]);
        let a = attention(tape, cfg, p, &layer.self_attn, h, h, true);
        let a = dropout(tape, a, drop);
        x = tape.add(x, a);
        let h = tape.rms_norm(x, p[layer.cross_norm]);
        let a = attention(tape, cfg, p, &layer.cross_attn, h, enc, false);
        let a = dropout(tape, a, drop);
        x = tape.add(x, a);
        let h = tape.rms_norm(x, p[layer.ffn_norm]);
        let f = ffn(tape, p, layer.wi, layer.wo, h);
        let f = dropout(tape, f, drop);
        x = tape.add(x, f);
    }
    let h = tape.rms_norm(x, p[l.dec_final]);
    tape.matmul(h, p[l.lm_head])
}
