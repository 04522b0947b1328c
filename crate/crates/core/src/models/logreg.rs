//! Multinomial logistic regression over fixed features: `z = wᵀφ`.

use nalgebra::DMatrix;

use super::ModelDims;

pub(super) fn forward(dims: ModelDims, theta: &[f64], phi: &[f64]) -> DMatrix<f64> {
    let v = dims.vocab;
    let mut z = DMatrix::zeros(v, 1);
    for (i, &x) in phi.iter().enumerate() {
        let row = &theta[i * v..(i + 1) * v];
        for (k, &w) in row.iter().enumerate() {
            z[(k, 0)] += w * x;
        }
    }
    z
}

pub(super) fn vjp(dims: ModelDims, phi: &[f64], g: &DMatrix<f64>, scale: f64, out: &mut [f64]) {
    let v = dims.vocab;
    for (i, &x) in phi.iter().enumerate() {
        let c = scale * x;
        for k in 0..v {
            out[i * v + k] += c * g[(k, 0)];
        }
    }
}
