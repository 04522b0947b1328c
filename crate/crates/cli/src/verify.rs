//! Oracle-equivalence suites behind `gdl verify`.

use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use gdl_core::dynamics::order_check;
use gdl_core::losses::{
    finite_diff_residual, preference_loss, relative_error, residual_preference, residual_sft, sequence_logprob,
    sft_loss, PreferenceKind, PreferencePair, SequenceExample,
};
use gdl_core::models::{LabeledExample, ModelInput, ModelState};
use gdl_core::prob::LogitMatrix;
use gdl_core::rng::SeededRng;
use gdl_core::squeeze::{alpha_analytic, alpha_simulated, SqueezeInstance};
use gdl_core::{Error, Result};

pub const LEMMA1_TOL: f64 = 1e-10;
pub const RESIDUAL_TOL: f64 = 1e-5;
pub const ORDER_ETA: f64 = 1e-3;
pub const ORDER_WINDOW: (f64, f64) = (3.0, 5.0);
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Lemma1,
    Residuals,
    Order,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma1" => Ok(Suite::Lemma1),
            "residuals" => Ok(Suite::Residuals),
            "order" => Ok(Suite::Order),
            _ => Err(Error::InvalidInput(format!("unknown suite '{s}' (lemma1, residuals, order)"))),
        }
    }
}

/// One checked instance.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyRow {
    pub instance: usize,
    pub family: String,
    pub size: usize,
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub suite: Suite,
    pub rows: Vec<VerifyRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn summary(&self) -> String {
        let worst = self.rows.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
        let fails = self.rows.iter().filter(|r| !r.pass).count();
        match self.suite {
            Suite::Lemma1 => {
                format!("lemma1 n={} max_discrepancy={worst:.3e} tol={LEMMA1_TOL:e} failures={fails}", self.rows.len())
            }
            Suite::Residuals => format!(
                "residuals n={} max_rel_error={worst:.3e} tol={RESIDUAL_TOL:e} failures={fails}",
                self.rows.len()
            ),
            Suite::Order => {
                let lo = self.rows.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
                format!(
                    "order n={} ratio_min={lo:.4} ratio_max={worst:.4} window=[{}, {}] failures={fails}",
                    self.rows.len(),
                    ORDER_WINDOW.0,
                    ORDER_WINDOW.1
                )
            }
        }
    }
}

pub fn run_suite(suite: Suite, n: usize, seed: u64) -> Result<VerifyReport> {
    let mut rng = SeededRng::new(seed);
    let rows = match suite {
        Suite::Lemma1 => lemma1(n, &mut rng)?,
        Suite::Residuals => residuals(n, &mut rng)?,
        Suite::Order => order(n, &mut rng)?,
    };
    Ok(VerifyReport { suite, rows })
}

fn lemma1(n: usize, rng: &mut SeededRng) -> Result<Vec<VerifyRow>> {
    (0..n)
        .map(|i| {
            let v = 3 + rng.index(98);
            let spread = rng.uniform(0.1, 5.0);
            let z = rng.normal_vec(v, spread);
            let y = rng.index(v);
            let inst = SqueezeInstance::from_logits(z, y, -rng.uniform(1e-3, 2.0))?;
            let a = alpha_analytic(&inst)?.alpha;
            let s = alpha_simulated(&inst)?.alpha;
            let d = a.iter().zip(&s).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            Ok(VerifyRow { instance: i, family: "softmax_readout".into(), size: v, value: d, pass: d < LEMMA1_TOL })
        })
        .collect()
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `n` instances for SFT and for each preference loss.
fn residuals(n: usize, rng: &mut SeededRng) -> Result<Vec<VerifyRow>> {
    let mut rows = Vec::new();
    let families: Vec<Option<PreferenceKind>> =
        std::iter::once(None).chain(PreferenceKind::ALL.into_iter().map(Some)).collect();
    for kind in families {
        for _ in 0..n {
            let (v, lp, ln) = (2 + rng.index(19), 1 + rng.index(8), 1 + rng.index(8));
            let spread = rng.uniform(0.5, 2.0);
            let zc = DMatrix::from_vec(v, lp, rng.normal_vec(v * lp, spread));
            let zr = DMatrix::from_vec(v, ln, rng.normal_vec(v * ln, spread));
            let chosen: Vec<usize> = (0..lp).map(|_| rng.index(v)).collect();
            let rejected: Vec<usize> = (0..ln).map(|_| rng.index(v)).collect();
            let (err, family) = match kind {
                None => {
                    let g = residual_sft(&LogitMatrix::new(zc.clone())?.prob_matrix(), &chosen)?;
                    let fd = finite_diff_residual(
                        |m| sft_loss(&LogitMatrix::new(m.clone())?.log_probs(), &chosen),
                        &zc,
                        FD_STEP,
                    )?;
                    (relative_error(g.matrix(), &fd), "sft".to_string())
                }
                Some(kind) => {
                    if chosen == rejected {
                        continue;
                    }
                    let pair = PreferencePair::new(vec![0], chosen.clone(), rejected.clone(), rng.uniform(0.05, 2.0))?
                        .with_slic_delta(rng.uniform(0.0, 3.0))
                        .with_sppo_eta(rng.uniform(0.1, 2.0));
                    let lpc = sequence_logprob(&LogitMatrix::new(zc.clone())?.log_probs(), &chosen)?;
                    let lpr = sequence_logprob(&LogitMatrix::new(zr.clone())?.log_probs(), &rejected)?;
                    if kind == PreferenceKind::Slic && (pair.slic_delta - (lpc - lpr)).abs() < 1e-3 {
                        continue;
                    }
                    let (rc, rr) = (lpc + rng.normal(), lpr + rng.normal());
                    let pc = LogitMatrix::new(zc.clone())?.prob_matrix();
                    let pr = LogitMatrix::new(zr.clone())?.prob_matrix();
                    let r = residual_preference(kind, &pair, &pc, &pr, rc, rr)?;
                    let fdc = finite_diff_residual(|m| preference_loss(kind, &pair, m, &zr, rc, rr), &zc, FD_STEP)?;
                    let fdr = finite_diff_residual(|m| preference_loss(kind, &pair, &zc, m, rc, rr), &zr, FD_STEP)?;
                    let analytic = stack(r.chosen.matrix(), r.rejected_gradient().matrix());
                    (relative_error(&analytic, &stack(&fdc, &fdr)), kind.to_string())
                }
            };
            rows.push(VerifyRow { instance: rows.len(), family, size: v, value: err, pass: err < RESIDUAL_TOL });
        }
    }
    Ok(rows)
}

fn order_case(kind: &str, rng: &mut SeededRng) -> Result<(ModelState, LabeledExample, ModelInput)> {
    let seed = rng.index(1 << 30) as u64;
    match kind {
        "logreg" | "mlp" => {
            let (d, v) = (2 + rng.index(8), 3 + rng.index(8));
            let m = if kind == "logreg" {
                ModelState::logreg(d, v, seed)?
            } else {
                ModelState::mlp(d, 2 + rng.index(8), v, seed)?
            };
            let u = LabeledExample::classification(rng.normal_vec(d, 1.0), rng.index(v));
            Ok((m, u, ModelInput::Features(rng.normal_vec(d, 1.0))))
        }
        _ => {
            let (v, d) = (4 + rng.index(12), 2 + rng.index(6));
            let m = ModelState::causal_pool(v, d, seed)?;
            let seq = |rng: &mut SeededRng| {
                let prompt: Vec<usize> = (0..1 + rng.index(3)).map(|_| rng.index(v)).collect();
                let resp: Vec<usize> = (0..1 + rng.index(4)).map(|_| rng.index(v)).collect();
                SequenceExample::new(prompt, resp, v)
            };
            let u = LabeledExample::sequence(seq(rng)?);
            Ok((m, u, ModelInput::Sequence(seq(rng)?)))
        }
    }
}

/// `n` instances per model kind.
fn order(n: usize, rng: &mut SeededRng) -> Result<Vec<VerifyRow>> {
    let mut rows = Vec::new();
    for kind in ["logreg", "mlp", "causal_pool"] {
        for _ in 0..n {
            let (m, u, o) = order_case(kind, rng)?;
            let r = order_check(&m, &u, &o, ORDER_ETA)?;
            rows.push(VerifyRow {
                instance: rows.len(),
                family: kind.into(),
                size: m.num_params(),
                value: r.ratio,
                pass: (ORDER_WINDOW.0..=ORDER_WINDOW.1).contains(&r.ratio),
            });
        }
    }
    Ok(rows)
}
