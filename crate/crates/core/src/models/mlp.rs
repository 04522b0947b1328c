//! One-hidden-layer tanh classifier `z = W2 tanh(W1 x + b1) + b2`.
//!
//! Zero input coordinates are skipped, which makes MNIST (mostly black pixels)
//! several times cheaper without changing any result.

use nalgebra::DMatrix;

use super::ModelDims;

struct Offsets {
    b1: usize,
    w2: usize,
    b2: usize,
}

fn offsets(d: ModelDims) -> Offsets {
    let b1 = d.hidden * d.dim;
    let w2 = b1 + d.hidden;
    Offsets { b1, w2, b2: w2 + d.vocab * d.hidden }
}

fn nonzero(x: &[f64]) -> Vec<(usize, f64)> {
    x.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect()
}

/// Logits and hidden activations.
pub(super) fn forward(dims: ModelDims, theta: &[f64], x: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let o = offsets(dims);
    let (d, h, v) = (dims.dim, dims.hidden, dims.vocab);
    let nz = nonzero(x);
    let hid: Vec<f64> = (0..h)
        .map(|j| {
            let row = &theta[j * d..(j + 1) * d];
            let pre = theta[o.b1 + j] + nz.iter().map(|&(i, xi)| row[i] * xi).sum::<f64>();
            pre.tanh()
        })
        .collect();
    let mut z = DMatrix::zeros(v, 1);
    for k in 0..v {
        let row = &theta[o.w2 + k * h..o.w2 + (k + 1) * h];
        z[(k, 0)] = theta[o.b2 + k] + row.iter().zip(&hid).map(|(w, a)| w * a).sum::<f64>();
    }
    (z, hid)
}

pub(super) fn vjp(dims: ModelDims, theta: &[f64], x: &[f64], g: &DMatrix<f64>, scale: f64, out: &mut [f64]) {
    let o = offsets(dims);
    let (d, h, v) = (dims.dim, dims.hidden, dims.vocab);
    let (_, hid) = forward(dims, theta, x);
    let mut dh = vec![0.0; h];
    for k in 0..v {
        let gk = scale * g[(k, 0)];
        if gk == 0.0 {
            continue;
        }
        out[o.b2 + k] += gk;
        for j in 0..h {
            out[o.w2 + k * h + j] += gk * hid[j];
            dh[j] += gk * theta[o.w2 + k * h + j];
        }
    }
    let nz = nonzero(x);
    for j in 0..h {
        let da = dh[j] * (1.0 - hid[j] * hid[j]);
        out[o.b1 + j] += da;
        let row = &mut out[j * d..(j + 1) * d];
        for &(i, xi) in &nz {
            row[i] += da * xi;
        }
    }
}

/// `J(x_o) J(x_u)ᵀ` without forming either Jacobian.
pub(super) fn kernel(dims: ModelDims, theta: &[f64], xo: &[f64], xu: &[f64]) -> DMatrix<f64> {
    let o = offsets(dims);
    let (h, v) = (dims.hidden, dims.vocab);
    let (_, ho) = forward(dims, theta, xo);
    let (_, hu) = forward(dims, theta, xu);
    let readout = ho.iter().zip(&hu).map(|(a, b)| a * b).sum::<f64>() + 1.0;
    let input = nonzero(xo).iter().map(|&(i, x)| x * xu[i]).sum::<f64>() + 1.0;
    let gate: Vec<f64> = (0..h).map(|j| (1.0 - ho[j] * ho[j]) * (1.0 - hu[j] * hu[j]) * input).collect();
    let w2 = |k: usize, j: usize| theta[o.w2 + k * h + j];
    DMatrix::from_fn(v, v, |a, b| {
        let hidden: f64 = (0..h).map(|j| w2(a, j) * w2(b, j) * gate[j]).sum();
        hidden + if a == b { readout } else { 0.0 }
    })
}
