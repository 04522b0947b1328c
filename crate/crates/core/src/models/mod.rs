//! Small softmax-output models with hand-derived gradients.
//!
//! Parameters live in one flat `Vec<f64>` per model so that Jacobians, eNTK
//! blocks and finite-difference checks all share a single coordinate system.
//! Block layouts (all row-major):
//!
//! | kind          | blocks                                        |
//! |---------------|-----------------------------------------------|
//! | `logreg`      | `w: d×V`                                      |
//! | `mlp`         | `W1: h×d`, `b1: h`, `W2: V×h`, `b2: V` (tanh) |
//! | `causal_pool` | `E: V×d`, `W: d×V`, `b: V`                    |

mod causal_pool;
mod logreg;
mod mlp;
pub mod mnist;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::{residual_sft, ResidualMatrix, SequenceExample};
use crate::prob::LogitMatrix;
use crate::rng::SeededRng;

pub use mnist::{load_mnist_idx, parse_idx_images, parse_idx_labels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logreg,
    Mlp,
    CausalPool,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Logreg => "logreg",
            Self::Mlp => "mlp",
            Self::CausalPool => "causal_pool",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" => Ok(Self::Logreg),
            "mlp" => Ok(Self::Mlp),
            "causal_pool" => Ok(Self::CausalPool),
            other => invalid(format!("unknown model kind '{other}'")),
        }
    }
}

/// `vocab` is the number of logits. `dim` is the feature size (logreg, mlp) or
/// the embedding width (causal_pool). `hidden` is only used by the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Features(Vec<f64>),
    Sequence(SequenceExample),
}

impl ModelInput {
    /// Number of logit columns the input produces.
    pub fn positions(&self) -> usize {
        match self {
            Self::Features(_) => 1,
            Self::Sequence(s) => s.response.len(),
        }
    }
}

/// An input with its target tokens: a single class for classifiers, the response for sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub input: ModelInput,
    pub target: Vec<usize>,
}

impl LabeledExample {
    pub fn classification(features: Vec<f64>, label: usize) -> Self {
        Self { input: ModelInput::Features(features), target: vec![label] }
    }

    pub fn sequence(example: SequenceExample) -> Self {
        let target = example.response.clone();
        Self { input: ModelInput::Sequence(example), target }
    }

    pub fn label(&self) -> usize {
        self.target[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    kind: ModelKind,
    dims: ModelDims,
    theta: Vec<f64>,
}

impl ModelState {
    fn init(kind: ModelKind, dims: ModelDims, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let ModelDims { vocab: v, dim: d, hidden: h } = dims;
        // weights ~ N(0, 1) / √fan-in, biases zero
        let theta = match kind {
            ModelKind::Logreg => rng.normal_vec(d * v, 1.0 / (d as f64).sqrt()),
            ModelKind::Mlp => {
                let mut t = rng.normal_vec(h * d, 1.0 / (d as f64).sqrt());
                t.extend(std::iter::repeat_n(0.0, h));
                t.extend(rng.normal_vec(v * h, 1.0 / (h as f64).sqrt()));
                t.extend(std::iter::repeat_n(0.0, v));
                t
            }
            ModelKind::CausalPool => {
                // an embedding row is selected by a one-hot token, so its fan-in is V
                let mut t = rng.normal_vec(v * d, 1.0 / (v as f64).sqrt());
                t.extend(rng.normal_vec(d * v, 1.0 / (d as f64).sqrt()));
                t.extend(std::iter::repeat_n(0.0, v));
                t
            }
        };
        Self::from_parts(kind, dims, theta)
    }

    pub fn logreg(dim: usize, vocab: usize, seed: u64) -> Result<Self> {
        Self::init(ModelKind::Logreg, ModelDims { vocab, dim, hidden: 0 }, seed)
    }

    pub fn mlp(dim: usize, hidden: usize, vocab: usize, seed: u64) -> Result<Self> {
        Self::init(ModelKind::Mlp, ModelDims { vocab, dim, hidden }, seed)
    }

    pub fn causal_pool(vocab: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::init(ModelKind::CausalPool, ModelDims { vocab, dim, hidden: 0 }, seed)
    }

    pub fn from_parts(kind: ModelKind, dims: ModelDims, theta: Vec<f64>) -> Result<Self> {
        if dims.vocab < 2 || dims.dim == 0 || (kind == ModelKind::Mlp && dims.hidden == 0) {
            return invalid(format!("degenerate dimensions {dims:?} for {kind}"));
        }
        let expected = param_count(kind, dims);
        if theta.len() != expected {
            return invalid(format!("{kind} expects {expected} parameters, got {}", theta.len()));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return invalid("parameters must be finite");
        }
        Ok(Self { kind, dims, theta })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn vocab(&self) -> usize {
        self.dims.vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    /// Same architecture, new parameters.
    pub fn with_params(&self, theta: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.kind, self.dims, theta)
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        match (self.kind, input) {
            (ModelKind::Logreg | ModelKind::Mlp, ModelInput::Features(x)) => {
                if x.len() != self.dims.dim {
                    return invalid(format!("expected {} features, got {}", self.dims.dim, x.len()));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return invalid("features must be finite");
                }
                Ok(())
            }
            (ModelKind::CausalPool, ModelInput::Sequence(s)) => {
                if s.prompt.is_empty() {
                    return invalid("causal_pool needs a non-empty prompt");
                }
                if s.response.is_empty() {
                    return invalid("response must be non-empty");
                }
                if let Some(t) = s.prompt.iter().chain(&s.response).find(|&&t| t >= self.dims.vocab) {
                    return invalid(format!("token {t} out of range for V = {}", self.dims.vocab));
                }
                Ok(())
            }
            (kind, _) => invalid(format!("input type does not match a {kind} model")),
        }
    }

    /// Logits, `V × positions`.
    pub fn forward(&self, input: &ModelInput) -> Result<LogitMatrix> {
        self.check_input(input)?;
        let z = match input {
            ModelInput::Features(x) => match self.kind {
                ModelKind::Logreg => logreg::forward(self.dims, &self.theta, x),
                _ => mlp::forward(self.dims, &self.theta, x).0,
            },
            ModelInput::Sequence(s) => causal_pool::forward(self.dims, &self.theta, s),
        };
        LogitMatrix::new(z)
    }

    /// Adds `scale · Σ_l J_lᵀ G_l` into `out`.
    pub fn accumulate_vjp(&self, input: &ModelInput, g: &DMatrix<f64>, scale: f64, out: &mut [f64]) -> Result<()> {
        self.check_input(input)?;
        if g.nrows() != self.dims.vocab || g.ncols() != input.positions() {
            return invalid(format!(
                "residual is {}×{}, expected {}×{}",
                g.nrows(),
                g.ncols(),
                self.dims.vocab,
                input.positions()
            ));
        }
        if out.len() != self.theta.len() {
            return invalid("gradient buffer has the wrong length");
        }
        match input {
            ModelInput::Features(x) => match self.kind {
                ModelKind::Logreg => logreg::vjp(self.dims, x, g, scale, out),
                _ => mlp::vjp(self.dims, &self.theta, x, g, scale, out),
            },
            ModelInput::Sequence(s) => causal_pool::vjp(self.dims, &self.theta, s, g, scale, out),
        }
        Ok(())
    }

    /// `Σ_l J_lᵀ G_l` as a fresh vector.
    pub fn vjp(&self, input: &ModelInput, g: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.theta.len()];
        self.accumulate_vjp(input, g, 1.0, &mut out)?;
        Ok(out)
    }

    /// `∂z_{·,position}/∂θ`, `V × P`. Row `v` is the backward pass of a unit residual on `z_v`.
    pub fn logit_jacobian(&self, input: &ModelInput, position: usize) -> Result<DMatrix<f64>> {
        self.check_input(input)?;
        let (v, l) = (self.dims.vocab, input.positions());
        if position >= l {
            return invalid(format!("position {position} out of range for {l} positions"));
        }
        let mut jac = DMatrix::zeros(v, self.theta.len());
        let mut g = DMatrix::zeros(v, l);
        let mut row = vec![0.0; self.theta.len()];
        for k in 0..v {
            g[(k, position)] = 1.0;
            row.iter_mut().for_each(|x| *x = 0.0);
            self.accumulate_vjp(input, &g, 1.0, &mut row)?;
            g[(k, position)] = 0.0;
            for (p, &val) in row.iter().enumerate() {
                jac[(k, p)] = val;
            }
        }
        Ok(jac)
    }

    /// Closed-form `J(x_o) J(x_u)ᵀ` for the feature models; `None` for sequences.
    pub fn feature_kernel(&self, xo: &ModelInput, xu: &ModelInput) -> Result<Option<DMatrix<f64>>> {
        self.check_input(xo)?;
        self.check_input(xu)?;
        let (ModelInput::Features(a), ModelInput::Features(b)) = (xo, xu) else {
            return Ok(None);
        };
        Ok(Some(match self.kind {
            ModelKind::Logreg => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                DMatrix::identity(self.dims.vocab, self.dims.vocab) * dot
            }
            _ => mlp::kernel(self.dims, &self.theta, a, b),
        }))
    }

    /// `θ′ = θ − η Σ_i J(x_i)ᵀ G_i`. The receiver is left untouched.
    pub fn apply_update(&self, residuals: &[ResidualMatrix], inputs: &[ModelInput], eta: f64) -> Result<ModelState> {
        let mut next = self.clone();
        next.step_in_place(residuals, inputs, eta)?;
        Ok(next)
    }

    /// In-place form of [`ModelState::apply_update`] used by the training loops.
    pub fn step_in_place(&mut self, residuals: &[ResidualMatrix], inputs: &[ModelInput], eta: f64) -> Result<()> {
        if residuals.len() != inputs.len() {
            return invalid("one residual per input is required");
        }
        if !eta.is_finite() {
            return invalid("eta must be finite");
        }
        let mut grad = vec![0.0; self.theta.len()];
        for (g, x) in residuals.iter().zip(inputs) {
            self.accumulate_vjp(x, g.matrix(), 1.0, &mut grad)?;
        }
        if grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step: 0, reason: "non-finite gradient".into() });
        }
        for (t, g) in self.theta.iter_mut().zip(&grad) {
            *t -= eta * g;
        }
        if self.theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step: 0, reason: "non-finite parameters".into() });
        }
        Ok(())
    }

    /// Teacher-forced SFT residual of a labeled example.
    pub fn sft_residual(&self, ex: &LabeledExample) -> Result<ResidualMatrix> {
        let probs = self.forward(&ex.input)?.prob_matrix();
        residual_sft(&probs, &ex.target)
    }

    /// Teacher-forced `Σ_l log π(target_l)`.
    pub fn sequence_logprob(&self, input: &ModelInput, target: &[usize]) -> Result<f64> {
        let lp = self.forward(input)?.log_probs();
        crate::losses::sequence_logprob(&lp, target)
    }
}

fn param_count(kind: ModelKind, d: ModelDims) -> usize {
    match kind {
        ModelKind::Logreg => d.dim * d.vocab,
        ModelKind::Mlp => d.hidden * d.dim + d.hidden + d.vocab * d.hidden + d.vocab,
        ModelKind::CausalPool => 2 * d.vocab * d.dim + d.vocab,
    }
}

/// Frozen policy used as `π_ref`.
#[derive(Debug, Clone)]
pub struct ReferenceSnapshot(Arc<ModelState>);

impl ReferenceSnapshot {
    pub fn take(model: &ModelState) -> Self {
        Self(Arc::new(model.clone()))
    }

    pub fn model(&self) -> &ModelState {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::sft_loss;

    fn seq(prompt: &[usize], response: &[usize], v: usize) -> ModelInput {
        ModelInput::Sequence(SequenceExample::new(prompt.to_vec(), response.to_vec(), v).unwrap())
    }

    fn sample(kind: ModelKind, rng: &mut SeededRng) -> (ModelState, ModelInput, Vec<usize>) {
        let seed = rng.index(1 << 30) as u64;
        match kind {
            ModelKind::Logreg => {
                let (d, v) = (2 + rng.index(6), 3 + rng.index(8));
                let m = ModelState::logreg(d, v, seed).unwrap();
                (m, ModelInput::Features(rng.normal_vec(d, 1.0)), vec![rng.index(v)])
            }
            ModelKind::Mlp => {
                let (d, h, v) = (2 + rng.index(6), 2 + rng.index(6), 3 + rng.index(6));
                let m = ModelState::mlp(d, h, v, seed).unwrap();
                (m, ModelInput::Features(rng.normal_vec(d, 1.0)), vec![rng.index(v)])
            }
            ModelKind::CausalPool => {
                let (v, d) = (4 + rng.index(8), 2 + rng.index(5));
                let m = ModelState::causal_pool(v, d, seed).unwrap();
                let prompt: Vec<usize> = (0..1 + rng.index(3)).map(|_| rng.index(v)).collect();
                let resp: Vec<usize> = (0..1 + rng.index(4)).map(|_| rng.index(v)).collect();
                (m, seq(&prompt, &resp, v), resp)
            }
        }
    }

    const KINDS: [ModelKind; 3] = [ModelKind::Logreg, ModelKind::Mlp, ModelKind::CausalPool];

    #[test]
    fn init_is_deterministic() {
        for kind in KINDS {
            let mut a = SeededRng::new(4);
            let mut b = SeededRng::new(4);
            assert_eq!(sample(kind, &mut a).0, sample(kind, &mut b).0);
        }
    }

    #[test]
    fn zero_readout_is_uniform() {
        let m = ModelState::from_parts(ModelKind::Logreg, ModelDims { vocab: 5, dim: 3, hidden: 0 }, vec![0.0; 15])
            .unwrap();
        let p = m.forward(&ModelInput::Features(vec![1.0, -2.0, 0.5])).unwrap().probs();
        assert!(p[0].values().iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn zero_features_give_zero_jacobian() {
        let m = ModelState::logreg(3, 4, 1).unwrap();
        let j = m.logit_jacobian(&ModelInput::Features(vec![0.0; 3]), 0).unwrap();
        assert_eq!(j.amax(), 0.0);
    }

    #[test]
    fn logreg_jacobian_selects_column() {
        let m = ModelState::logreg(3, 4, 1).unwrap();
        let phi = vec![0.5, -1.0, 2.0];
        let j = m.logit_jacobian(&ModelInput::Features(phi.clone()), 0).unwrap();
        for v in 0..4 {
            for i in 0..3 {
                for w in 0..4 {
                    let expected = if v == w { phi[i] } else { 0.0 };
                    assert_eq!(j[(v, i * 4 + w)], expected);
                }
            }
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let m = ModelState::logreg(3, 4, 1).unwrap();
        assert!(m.forward(&ModelInput::Features(vec![1.0; 2])).is_err());
        assert!(m.forward(&seq(&[0], &[1], 4)).is_err());
        let c = ModelState::causal_pool(4, 2, 1).unwrap();
        assert!(c.forward(&seq(&[], &[1], 4)).is_err());
        assert!(c.logit_jacobian(&seq(&[0], &[1], 4), 1).is_err());
    }

    #[test]
    fn causal_pool_ignores_future_tokens() {
        let m = ModelState::causal_pool(9, 4, 2).unwrap();
        let base = m.forward(&seq(&[1, 2], &[3, 4, 5, 6], 9)).unwrap();
        for l in 0..4 {
            let mut resp = vec![3, 4, 5, 6];
            resp[l] = 0;
            let z = m.forward(&seq(&[1, 2], &resp, 9)).unwrap();
            for c in 0..=l {
                assert_eq!(z.column(c), base.column(c), "position {l} leaked into column {c}");
            }
        }
    }

    #[test]
    fn causal_pool_column_matches_scratch_context() {
        let (v, d) = (7, 3);
        let m = ModelState::causal_pool(v, d, 5).unwrap();
        let (prompt, resp) = (vec![2, 6], vec![1, 0, 4]);
        let z = m.forward(&seq(&prompt, &resp, v)).unwrap();
        let th = m.params();
        for l in 0..resp.len() {
            let ctx: Vec<usize> = prompt.iter().chain(&resp[..l]).copied().collect();
            for out in 0..v {
                let mut acc = th[2 * v * d + out];
                for k in 0..d {
                    let mean: f64 = ctx.iter().map(|&t| th[t * d + k]).sum::<f64>() / ctx.len() as f64;
                    acc += mean * th[v * d + k * v + out];
                }
                assert!((z.matrix()[(out, l)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_matches_directional_differences() {
        let mut rng = SeededRng::new(8);
        for kind in KINDS {
            for _ in 0..20 {
                let (m, x, _) = sample(kind, &mut rng);
                let dir = rng.normal_vec(m.num_params(), 1.0);
                let h = 1e-5;
                let plus: Vec<f64> = m.params().iter().zip(&dir).map(|(t, d)| t + h * d).collect();
                let minus: Vec<f64> = m.params().iter().zip(&dir).map(|(t, d)| t - h * d).collect();
                let zp = m.with_params(plus).unwrap().forward(&x).unwrap().into_inner();
                let zm = m.with_params(minus).unwrap().forward(&x).unwrap().into_inner();
                let fd = (zp - zm) / (2.0 * h);
                let dir = nalgebra::DVector::from_vec(dir);
                for l in 0..x.positions() {
                    let jvp = m.logit_jacobian(&x, l).unwrap() * &dir;
                    let col = fd.column(l).into_owned();
                    let err = (&jvp - &col).norm() / jvp.norm().max(col.norm()).max(1e-8);
                    assert!(err < 1e-5, "{kind}: relative error {err}");
                }
            }
        }
    }

    #[test]
    fn jacobian_first_order_error_is_quadratic() {
        let mut rng = SeededRng::new(21);
        for kind in [ModelKind::Mlp, ModelKind::CausalPool] {
            let (m, x, _) = sample(kind, &mut rng);
            let dir = nalgebra::DVector::from_vec(rng.normal_vec(m.num_params(), 1e-2));
            let j = m.logit_jacobian(&x, 0).unwrap();
            let z0 = m.forward(&x).unwrap().column(0);
            let err = |s: f64| {
                let th: Vec<f64> = m.params().iter().zip(dir.iter()).map(|(t, d)| t + s * d).collect();
                let z1 = m.with_params(th).unwrap().forward(&x).unwrap().column(0);
                let lin = &j * (&dir * s);
                z1.iter().zip(&z0).zip(lin.iter()).map(|((a, b), c)| (a - b - c).powi(2)).sum::<f64>().sqrt()
            };
            let ratio = err(1.0) / err(0.5);
            assert!((3.0..5.0).contains(&ratio), "{kind}: ratio {ratio}");
        }
    }

    #[test]
    fn logreg_update_is_outer_product() {
        let m = ModelState::logreg(3, 4, 3).unwrap();
        let phi = vec![0.3, -0.7, 1.1];
        let ex = LabeledExample::classification(phi.clone(), 2);
        let g = m.sft_residual(&ex).unwrap();
        let eta = 0.4;
        let next = m.apply_update(&[g.clone()], &[ex.input.clone()], eta).unwrap();
        for i in 0..3 {
            for v in 0..4 {
                let expected = m.params()[i * 4 + v] - eta * phi[i] * g.matrix()[(v, 0)];
                assert!((next.params()[i * 4 + v] - expected).abs() < 1e-15);
            }
        }
        assert_eq!(m.apply_update(&[g], &[ex.input], 0.0).unwrap(), m);
    }

    #[test]
    fn sft_update_matches_loss_gradient() {
        let mut rng = SeededRng::new(13);
        for kind in KINDS {
            for _ in 0..5 {
                let (m, x, target) = sample(kind, &mut rng);
                let ex = LabeledExample { input: x.clone(), target: target.clone() };
                let eta = 0.1;
                let next = m.apply_update(&[m.sft_residual(&ex).unwrap()], &[x.clone()], eta).unwrap();
                let loss = |th: &[f64]| {
                    let lp = m.with_params(th.to_vec()).unwrap().forward(&x).unwrap().log_probs();
                    sft_loss(&lp, &target).unwrap()
                };
                let h = 1e-5;
                let mut th = m.params().to_vec();
                for p in 0..th.len() {
                    let t = th[p];
                    th[p] = t + h;
                    let up = loss(&th);
                    th[p] = t - h;
                    let down = loss(&th);
                    th[p] = t;
                    let expected = t - eta * (up - down) / (2.0 * h);
                    assert!((next.params()[p] - expected).abs() < 1e-10, "{kind} param {p}");
                }
            }
        }
    }

    #[test]
    fn small_sft_step_lowers_loss() {
        let mut rng = SeededRng::new(17);
        for kind in KINDS {
            let (m, x, target) = sample(kind, &mut rng);
            let ex = LabeledExample { input: x.clone(), target: target.clone() };
            let before = sft_loss(&m.forward(&x).unwrap().log_probs(), &target).unwrap();
            let next = m.apply_update(&[m.sft_residual(&ex).unwrap()], &[x.clone()], 1e-2).unwrap();
            let after = sft_loss(&next.forward(&x).unwrap().log_probs(), &target).unwrap();
            assert!(after < before, "{kind}");
        }
    }

    #[test]
    fn closed_form_kernels_match_jacobians() {
        let mut rng = SeededRng::new(31);
        for kind in [ModelKind::Logreg, ModelKind::Mlp] {
            let (m, x, _) = sample(kind, &mut rng);
            let d = m.dims().dim;
            let mut sparse = rng.normal_vec(d, 1.0);
            sparse[0] = 0.0;
            let y = ModelInput::Features(sparse);
            let k = m.feature_kernel(&x, &y).unwrap().unwrap();
            let j = m.logit_jacobian(&x, 0).unwrap() * m.logit_jacobian(&y, 0).unwrap().transpose();
            assert!((k - j).amax() < 1e-10, "{kind}");
        }
        let c = ModelState::causal_pool(5, 2, 0).unwrap();
        let s = seq(&[1], &[2], 5);
        assert!(c.feature_kernel(&s, &s).unwrap().is_none());
    }

    #[test]
    fn non_finite_update_is_divergence() {
        let m = ModelState::logreg(2, 3, 0).unwrap();
        let g = ResidualMatrix(DMatrix::from_element(3, 1, f64::NAN));
        let err = m.apply_update(&[g], &[ModelInput::Features(vec![1.0, 1.0])], 0.1).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }
}
