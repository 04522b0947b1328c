//! Causal mean-pool sequence model under teacher forcing.
//!
//! The logits at response position `l` read the mean embedding of the prompt
//! and of response tokens `0..l`: `z_l = Wᵀ ḡ_l + b`.

use nalgebra::DMatrix;

use super::ModelDims;
use crate::losses::SequenceExample;

/// Running sums of embeddings; entry `l` is the context of response position `l`.
fn contexts(dims: ModelDims, theta: &[f64], s: &SequenceExample) -> Vec<Vec<f64>> {
    let d = dims.dim;
    let mut sum = vec![0.0; d];
    for &t in &s.prompt {
        for k in 0..d {
            sum[k] += theta[t * d + k];
        }
    }
    let mut out = Vec::with_capacity(s.response.len());
    for l in 0..s.response.len() {
        let n = (s.prompt.len() + l) as f64;
        out.push(sum.iter().map(|x| x / n).collect());
        let t = s.response[l];
        for k in 0..d {
            sum[k] += theta[t * d + k];
        }
    }
    out
}

pub(super) fn forward(dims: ModelDims, theta: &[f64], s: &SequenceExample) -> DMatrix<f64> {
    let (v, d) = (dims.vocab, dims.dim);
    let (w, b) = (v * d, 2 * v * d);
    let ctx = contexts(dims, theta, s);
    let mut z = DMatrix::zeros(v, ctx.len());
    for (l, c) in ctx.iter().enumerate() {
        for out in 0..v {
            z[(out, l)] = theta[b + out];
        }
        for (k, &ck) in c.iter().enumerate() {
            let row = &theta[w + k * v..w + (k + 1) * v];
            for (out, &wk) in row.iter().enumerate() {
                z[(out, l)] += ck * wk;
            }
        }
    }
    z
}

pub(super) fn vjp(dims: ModelDims, theta: &[f64], s: &SequenceExample, g: &DMatrix<f64>, scale: f64, out: &mut [f64]) {
    let (v, d) = (dims.vocab, dims.dim);
    let (w, b) = (v * d, 2 * v * d);
    let ctx = contexts(dims, theta, s);
    // dctx_l = W g_l, pushed back to every token in the prefix with weight 1/n_l
    let mut carry = vec![0.0; d];
    for l in (0..ctx.len()).rev() {
        let n = (s.prompt.len() + l) as f64;
        let gl = g.column(l);
        for k in 0..v {
            out[b + k] += scale * gl[k];
        }
        for k in 0..d {
            let row = &theta[w + k * v..w + (k + 1) * v];
            let mut dc = 0.0;
            for (o, &wk) in row.iter().enumerate() {
                out[w + k * v + o] += scale * ctx[l][k] * gl[o];
                dc += wk * gl[o];
            }
            carry[k] += scale * dc / n;
        }
        // carry now holds Σ_{l' ≥ l} dctx_{l'}/n_{l'}, which is the gradient of
        // every token that sits before position l
        if l > 0 {
            let t = s.response[l - 1];
            for k in 0..d {
                out[t * d + k] += carry[k];
            }
        }
    }
    for &t in &s.prompt {
        for k in 0..d {
            out[t * d + k] += carry[k];
        }
    }
}
