//! Finetuning losses and their residuals `G = ∇_z L`.
//!
//! Sequence-level quantities follow teacher forcing: the policy's log-probability
//! of a response is the sum of per-position log-probabilities of its tokens, each
//! column of a `V × L` matrix holding the distribution at one response position.
//!
//! Preference residuals are returned as a [`ResidualPair`]. The chosen residual is
//! always `∇_{z⁺} L`. The rejected residual is stored in the form the loss's
//! derivation naturally produces, with `∇_{z⁻} L = rejected_sign · G⁻`: DPO, IPO and
//! SLiC use `rejected_sign = −1` (so the one-step change reads `K⁺G⁺ − K⁻G⁻`),
//! SPPO uses `+1`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::prob::{safe_ln, LogitMatrix};

/// A prompt and a response of token ids, evaluated under teacher forcing on `[prompt; response]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SequenceExample {
    pub prompt: Vec<usize>,
    pub response: Vec<usize>,
}

impl SequenceExample {
    pub fn new(prompt: Vec<usize>, response: Vec<usize>, vocab: usize) -> Result<Self> {
        if response.is_empty() {
            return invalid("response must be non-empty");
        }
        if let Some(t) = prompt.iter().chain(&response).find(|&&t| t >= vocab) {
            return invalid(format!("token id {t} out of range for V = {vocab}"));
        }
        Ok(Self { prompt, response })
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }
}

/// A preference triple `(x, y⁺, y⁻)` with the hyperparameters of every supported loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: Vec<usize>,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub beta: f64,
    /// SLiC hinge margin `δ`.
    pub slic_delta: f64,
    /// SPPO target scale, kept apart from the learning rate.
    pub sppo_eta: f64,
}

impl PreferencePair {
    pub fn new(prompt: Vec<usize>, chosen: Vec<usize>, rejected: Vec<usize>, beta: f64) -> Result<Self> {
        let pair = Self { prompt, chosen, rejected, beta, slic_delta: 1.0, sppo_eta: 1.0 };
        pair.validate()?;
        Ok(pair)
    }

    pub fn with_slic_delta(mut self, delta: f64) -> Self {
        self.slic_delta = delta;
        self
    }

    pub fn with_sppo_eta(mut self, eta: f64) -> Self {
        self.sppo_eta = eta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.chosen == self.rejected {
            return invalid("chosen and rejected responses must differ");
        }
        if self.chosen.is_empty() || self.rejected.is_empty() {
            return invalid("responses must be non-empty");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return invalid("beta must be positive");
        }
        if !(self.slic_delta >= 0.0) {
            return invalid("slic_delta must be nonnegative");
        }
        if !(self.sppo_eta > 0.0) {
            return invalid("sppo_eta must be positive");
        }
        Ok(())
    }

    pub fn chosen_example(&self) -> SequenceExample {
        SequenceExample { prompt: self.prompt.clone(), response: self.chosen.clone() }
    }

    pub fn rejected_example(&self) -> SequenceExample {
        SequenceExample { prompt: self.prompt.clone(), response: self.rejected.clone() }
    }
}

/// `V × L` gradient of a loss with respect to the logits, one column per response token.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix(pub DMatrix<f64>);

impl ResidualMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn zeros(v: usize, l: usize) -> Self {
        Self(DMatrix::zeros(v, l))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.0.norm_squared()
    }

    /// Largest absolute column sum; zero for every residual of the form `c·(π − e_y)`.
    pub fn max_column_sum(&self) -> f64 {
        self.0.column_iter().map(|c| c.sum().abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreferenceKind {
    Dpo,
    Ipo,
    Slic,
    Sppo,
}

impl PreferenceKind {
    pub const ALL: [PreferenceKind; 4] = [Self::Dpo, Self::Ipo, Self::Slic, Self::Sppo];

    pub fn rejected_sign(self) -> f64 {
        match self {
            Self::Sppo => 1.0,
            _ => -1.0,
        }
    }
}

impl fmt::Display for PreferenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dpo => "dpo",
            Self::Ipo => "ipo",
            Self::Slic => "slic",
            Self::Sppo => "sppo",
        })
    }
}

impl FromStr for PreferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dpo" => Ok(Self::Dpo),
            "ipo" => Ok(Self::Ipo),
            "slic" => Ok(Self::Slic),
            "sppo" => Ok(Self::Sppo),
            other => Err(Error::UnsupportedLoss(other.to_string())),
        }
    }
}

/// The scalar that modulates a preference residual.
///
/// DPO: `a = σ(b)` with `b` the β-scaled reference-corrected gap. IPO: the unbounded
/// gap minus `1/(2β)`. SLiC: the hinge indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginScalar {
    pub a: f64,
    pub b: Option<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_shape(m: &DMatrix<f64>, target: &[usize]) -> Result<()> {
    if m.ncols() != target.len() {
        return invalid(format!("{} columns but target has length {}", m.ncols(), target.len()));
    }
    if let Some(&t) = target.iter().find(|&&t| t >= m.nrows()) {
        return invalid(format!("target token {t} out of range for V = {}", m.nrows()));
    }
    Ok(())
}

/// `Σ_l log π(y_l)` from column-wise log-distributions.
pub fn sequence_logprob(log_probs: &DMatrix<f64>, target: &[usize]) -> Result<f64> {
    check_shape(log_probs, target)?;
    Ok(target.iter().enumerate().map(|(l, &y)| log_probs[(y, l)]).sum())
}

/// Same as [`sequence_logprob`] from probabilities, flooring at [`crate::prob::LOG_FLOOR`].
pub fn sequence_logprob_from_probs(probs: &DMatrix<f64>, target: &[usize]) -> Result<f64> {
    check_shape(probs, target)?;
    Ok(target.iter().enumerate().map(|(l, &y)| safe_ln(probs[(y, l)])).sum())
}

/// Negative log-likelihood of `target` under teacher forcing.
pub fn sft_loss(log_probs: &DMatrix<f64>, target: &[usize]) -> Result<f64> {
    Ok(-sequence_logprob(log_probs, target)?)
}

/// `G = π − Y` where `Y` stacks one-hot columns of the target tokens.
pub fn residual_sft(probs: &DMatrix<f64>, target: &[usize]) -> Result<ResidualMatrix> {
    check_shape(probs, target)?;
    let mut g = probs.clone();
    for (l, &y) in target.iter().enumerate() {
        g[(y, l)] -= 1.0;
    }
    Ok(ResidualMatrix(g))
}

/// Sequence log-probabilities feeding a preference loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceLogps {
    pub policy_chosen: f64,
    pub policy_rejected: f64,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

impl PreferenceLogps {
    fn check(&self) -> Result<()> {
        if [self.policy_chosen, self.policy_rejected, self.ref_chosen, self.ref_rejected].iter().any(|x| !x.is_finite())
        {
            return invalid("log-probabilities must be finite");
        }
        Ok(())
    }

    pub fn chosen_logratio(&self) -> f64 {
        self.policy_chosen - self.ref_chosen
    }

    pub fn rejected_logratio(&self) -> f64 {
        self.policy_rejected - self.ref_rejected
    }

    /// Reference-corrected gap `(lp⁺ − lr⁺) − (lp⁻ − lr⁻)`.
    pub fn corrected_gap(&self) -> f64 {
        self.chosen_logratio() - self.rejected_logratio()
    }
}

pub fn preference_margin(kind: PreferenceKind, logps: &PreferenceLogps, pair: &PreferencePair) -> Result<MarginScalar> {
    logps.check()?;
    match kind {
        PreferenceKind::Dpo => {
            let b = pair.beta * logps.corrected_gap();
            Ok(MarginScalar { a: sigmoid(b), b: Some(b) })
        }
        PreferenceKind::Ipo => Ok(MarginScalar { a: logps.corrected_gap() - 1.0 / (2.0 * pair.beta), b: None }),
        PreferenceKind::Slic => {
            let active = pair.slic_delta - (logps.policy_chosen - logps.policy_rejected) > 0.0;
            Ok(MarginScalar { a: if active { 1.0 } else { 0.0 }, b: None })
        }
        PreferenceKind::Sppo => Err(Error::UnsupportedLoss("sppo has no margin scalar".into())),
    }
}

/// Loss value of a preference objective for one pair.
pub fn preference_loss_value(kind: PreferenceKind, logps: &PreferenceLogps, pair: &PreferencePair) -> Result<f64> {
    logps.check()?;
    Ok(match kind {
        PreferenceKind::Dpo => softplus(-pair.beta * logps.corrected_gap()),
        PreferenceKind::Ipo => {
            let h = logps.corrected_gap() - 1.0 / (2.0 * pair.beta);
            -(h * h)
        }
        PreferenceKind::Slic => {
            let hinge = (pair.slic_delta - (logps.policy_chosen - logps.policy_rejected)).max(0.0);
            // y_ref is the chosen response
            hinge - pair.beta * logps.policy_chosen
        }
        PreferenceKind::Sppo => {
            let p = logps.chosen_logratio() - pair.sppo_eta / 2.0;
            let n = logps.rejected_logratio() + pair.sppo_eta / 2.0;
            -(p * p + n * n)
        }
    })
}

/// Loss of a preference pair evaluated from raw logits of `χ⁺` and `χ⁻`.
pub fn preference_loss(
    kind: PreferenceKind,
    pair: &PreferencePair,
    logits_chosen: &DMatrix<f64>,
    logits_rejected: &DMatrix<f64>,
    ref_chosen: f64,
    ref_rejected: f64,
) -> Result<f64> {
    let lp = LogitMatrix::new(logits_chosen.clone())?.log_probs();
    let ln = LogitMatrix::new(logits_rejected.clone())?.log_probs();
    let logps = PreferenceLogps {
        policy_chosen: sequence_logprob(&lp, &pair.chosen)?,
        policy_rejected: sequence_logprob(&ln, &pair.rejected)?,
        ref_chosen,
        ref_rejected,
    };
    preference_loss_value(kind, &logps, pair)
}

/// Chosen and rejected residuals of a preference loss.
#[derive(Debug, Clone)]
pub struct ResidualPair {
    pub chosen: ResidualMatrix,
    pub rejected: ResidualMatrix,
    /// `∇_{z⁻} L = rejected_sign · rejected`.
    pub rejected_sign: f64,
    pub margin: Option<MarginScalar>,
}

impl ResidualPair {
    /// Gradient of the loss with respect to the rejected logits.
    pub fn rejected_gradient(&self) -> ResidualMatrix {
        self.rejected.scaled(self.rejected_sign)
    }
}

/// Scalars `(c⁺, c⁻, margin)` multiplying the SFT residuals of `y⁺` and `y⁻`.
pub fn residual_coefficients(
    kind: PreferenceKind,
    logps: &PreferenceLogps,
    pair: &PreferencePair,
) -> Result<(f64, f64, Option<MarginScalar>)> {
    Ok(match kind {
        PreferenceKind::Dpo => {
            let m = preference_margin(kind, logps, pair)?;
            let c = pair.beta * (1.0 - m.a);
            (c, c, Some(m))
        }
        PreferenceKind::Ipo => {
            let m = preference_margin(kind, logps, pair)?;
            (2.0 * m.a, 2.0 * m.a, Some(m))
        }
        PreferenceKind::Slic => {
            let m = preference_margin(kind, logps, pair)?;
            (m.a + pair.beta, m.a, Some(m))
        }
        PreferenceKind::Sppo => {
            logps.check()?;
            let c_pos = 2.0 * (logps.chosen_logratio() - pair.sppo_eta / 2.0);
            let c_neg = 2.0 * (logps.rejected_logratio() + pair.sppo_eta / 2.0);
            (c_pos, c_neg, None)
        }
    })
}

pub fn residual_preference(
    kind: PreferenceKind,
    pair: &PreferencePair,
    probs_chosen: &DMatrix<f64>,
    probs_rejected: &DMatrix<f64>,
    ref_chosen: f64,
    ref_rejected: f64,
) -> Result<ResidualPair> {
    pair.validate()?;
    if probs_chosen.nrows() != probs_rejected.nrows() {
        return invalid("chosen and rejected distributions have different vocabularies");
    }
    let base_pos = residual_sft(probs_chosen, &pair.chosen)?;
    let base_neg = residual_sft(probs_rejected, &pair.rejected)?;
    let logps = PreferenceLogps {
        policy_chosen: sequence_logprob_from_probs(probs_chosen, &pair.chosen)?,
        policy_rejected: sequence_logprob_from_probs(probs_rejected, &pair.rejected)?,
        ref_chosen,
        ref_rejected,
    };
    let (c_pos, c_neg, margin) = residual_coefficients(kind, &logps, pair)?;
    Ok(ResidualPair {
        chosen: base_pos.scaled(c_pos),
        rejected: base_neg.scaled(c_neg),
        rejected_sign: kind.rejected_sign(),
        margin,
    })
}

/// Central-difference gradient of `loss` with respect to every logit.
pub fn finite_diff_residual<F>(loss: F, logits: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> Result<f64>,
{
    if !(h > 0.0) {
        return invalid("finite-difference step must be positive");
    }
    let mut probe = logits.clone();
    let mut grad = DMatrix::zeros(logits.nrows(), logits.ncols());
    for l in 0..logits.ncols() {
        for v in 0..logits.nrows() {
            let z = logits[(v, l)];
            probe[(v, l)] = z + h;
            let up = loss(&probe)?;
            probe[(v, l)] = z - h;
            let down = loss(&probe)?;
            probe[(v, l)] = z;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::OracleFailure(format!("non-finite loss while probing logit ({v}, {l})")));
            }
            grad[(v, l)] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Normwise relative error `‖a − b‖_F / max(‖a‖_F, ‖b‖_F, 1e-8)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-8)
}
