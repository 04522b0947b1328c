//! The squeezing effect of a negative gradient on a logistic-regression readout.
//!
//! A readout `z = wᵀφ` over a fixed feature `φ` takes one SGD step on the
//! cross-entropy of class `y`. With `η′ = η‖φ‖²` the logits move by
//! `−η′(p − e_y)`, and the per-class ratio `α_i = p′_i / p_i` has a closed form.
//! A negative `η′` (gradient ascent on `y`) always lowers `p_y` and always raises
//! the largest other class; how the rest of the mass moves depends on how peaky
//! `p` is, which is what the scenario generators explore.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::prob::{argmax, safe_ln, softmax, ProbVector};
use crate::rng::SeededRng;

fn lse(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqueezeInstance {
    pub p: ProbVector,
    pub y: usize,
    pub eta_prime: f64,
    pub z: Option<Vec<f64>>,
}

impl SqueezeInstance {
    pub fn new(p: ProbVector, y: usize, eta_prime: f64) -> Result<Self> {
        let inst = Self { p, y, eta_prime, z: None };
        inst.validate()?;
        Ok(inst)
    }

    /// Instance from logits; `p` is their softmax.
    pub fn from_logits(z: Vec<f64>, y: usize, eta_prime: f64) -> Result<Self> {
        let p = softmax(&z)?;
        let inst = Self { p, y, eta_prime, z: Some(z) };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.p.len();
        if self.y >= v {
            return invalid(format!("target class {} out of range for V = {v}", self.y));
        }
        if !self.eta_prime.is_finite() {
            return invalid("eta_prime must be finite");
        }
        if let Some(z) = &self.z {
            if z.len() != v {
                return invalid("logits and probabilities differ in length");
            }
            let q = softmax(z)?;
            if q.values().iter().zip(self.p.values()).any(|(a, b)| (a - b).abs() > 1e-9) {
                return invalid("logits are inconsistent with p");
            }
        }
        Ok(())
    }

    pub fn vocab(&self) -> usize {
        self.p.len()
    }

    /// Supplied logits, or `log p` (floored) as a representative of the softmax fiber.
    pub fn logits(&self) -> Vec<f64> {
        match &self.z {
            Some(z) => z.clone(),
            None => self.p.values().iter().map(|&p| safe_ln(p)).collect(),
        }
    }

    /// Largest class other than `y`, lowest index on ties.
    pub fn argmax_other(&self) -> usize {
        let mut best = if self.y == 0 { 1 } else { 0 };
        for (i, &p) in self.p.values().iter().enumerate() {
            if i != self.y && p > self.p.get(best) {
                best = i;
            }
        }
        best
    }

    pub fn with_eta_prime(&self, eta_prime: f64) -> Self {
        Self { eta_prime, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaReport {
    pub alpha: Vec<f64>,
    pub argmax_other: usize,
}

impl AlphaReport {
    /// `Σ α_i p_i`, which is 1 for any valid update.
    pub fn normalization(&self, p: &ProbVector) -> f64 {
        self.alpha.iter().zip(p.values()).map(|(a, p)| a * p).sum()
    }
}

/// Closed-form ratios `α_i = Σ_j e^{z_j} / Σ_j β_j e^{z_j}`, evaluated in log space.
pub fn alpha_analytic(inst: &SqueezeInstance) -> Result<AlphaReport> {
    inst.validate()?;
    let z = inst.logits();
    let p = inst.p.values();
    let (y, e) = (inst.y, inst.eta_prime);
    let base = lse(&z);
    let mut shifted = vec![0.0; z.len()];
    let mut alpha = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        for j in 0..z.len() {
            let log_beta = if i == y {
                if j == y {
                    0.0
                } else {
                    -e * (1.0 + p[j] - p[i])
                }
            } else if j == y {
                -e * (p[y] - p[i] - 1.0)
            } else {
                -e * (p[j] - p[i])
            };
            shifted[j] = z[j] + log_beta;
        }
        let a = (base - lse(&shifted)).exp();
        if !a.is_finite() {
            return invalid(format!("alpha_{i} is not finite"));
        }
        alpha.push(a);
    }
    Ok(AlphaReport { alpha, argmax_other: inst.argmax_other() })
}

/// One SGD step of the readout: `z′ = z − η′(p − e_y)`.
pub fn sgd_step_readout(inst: &SqueezeInstance) -> Result<(Vec<f64>, ProbVector)> {
    inst.validate()?;
    let mut z = inst.logits();
    for (i, zi) in z.iter_mut().enumerate() {
        let r = inst.p.get(i) - if i == inst.y { 1.0 } else { 0.0 };
        *zi -= inst.eta_prime * r;
    }
    let p = softmax(&z)?;
    Ok((z, p))
}

/// Ratios measured from the SGD oracle, computed as differences of log-softmax.
pub fn alpha_simulated(inst: &SqueezeInstance) -> Result<AlphaReport> {
    let z = inst.logits();
    let (z_next, _) = sgd_step_readout(inst)?;
    Ok(AlphaReport { alpha: log_ratio_alpha(&z, &z_next), argmax_other: inst.argmax_other() })
}

fn log_ratio_alpha(z: &[f64], z_next: &[f64]) -> Vec<f64> {
    let (a, b) = (lse(z), lse(z_next));
    z.iter().zip(z_next).map(|(zi, zn)| ((zn - b) - (zi - a)).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimReport {
    pub claim1_holds: bool,
    pub claim2_holds: bool,
    pub decreased_count: usize,
    pub mass_to_argmax: f64,
    pub alpha_y: f64,
    pub alpha_argmax_other: f64,
}

pub fn check_claims(inst: &SqueezeInstance) -> Result<ClaimReport> {
    if !(inst.eta_prime < 0.0) {
        return Err(Error::Precondition(format!("claims are stated for eta_prime < 0, got {}", inst.eta_prime)));
    }
    let report = alpha_simulated(inst)?;
    let star = report.argmax_other;
    let alpha_y = report.alpha[inst.y];
    let alpha_star = report.alpha[star];
    Ok(ClaimReport {
        claim1_holds: alpha_y < 1.0,
        claim2_holds: alpha_star > 1.0,
        decreased_count: report.alpha.iter().filter(|&&a| a < 1.0).count(),
        mass_to_argmax: alpha_star * inst.p.get(star) - inst.p.get(star),
        alpha_y,
        alpha_argmax_other: alpha_star,
    })
}

/// Whether doubling `|η′|` moves every `α_i` further from 1.
pub fn amplifies_with_step(inst: &SqueezeInstance) -> Result<bool> {
    let a = alpha_simulated(inst)?;
    let b = alpha_simulated(&inst.with_eta_prime(2.0 * inst.eta_prime))?;
    Ok(a.alpha.iter().zip(&b.alpha).all(|(x, y)| (y - 1.0).abs() > (x - 1.0).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Flat,
    Mild,
    Multimode,
    ValleyTarget,
    PeakTarget,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [Self::Flat, Self::Mild, Self::Multimode, Self::ValleyTarget, Self::PeakTarget];

    pub fn name(self) -> &'static str {
        match self {
            Self::Flat => "flat",
            Self::Mild => "mild",
            Self::Multimode => "multimode",
            Self::ValleyTarget => "valley_target",
            Self::PeakTarget => "peak_target",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario kind '{s}'")))
    }
}

/// Probability below which a class counts as a valley.
pub const VALLEY_THRESHOLD: f64 = 1e-4;

/// A readout `w⁰` (d × V) and a feature `φ` realising a target logit vector.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub phi: DVector<f64>,
    pub w: DMatrix<f64>,
    pub eta: f64,
    pub instance: SqueezeInstance,
}

impl Scenario {
    /// Parameter-space step `w¹ = w⁰ − η φ (p − e_y)ᵀ`, returning the new logits.
    pub fn readout_step(&self) -> Vec<f64> {
        let inst = &self.instance;
        let mut r = inst.p.as_dvector();
        r[inst.y] -= 1.0;
        let w1 = &self.w - self.eta * &self.phi * r.transpose();
        (w1.transpose() * &self.phi).iter().copied().collect()
    }
}

fn multimode_logits(v: usize, rng: &mut SeededRng) -> Vec<f64> {
    let lo = 5 * v / 50;
    let hi = (11 * v / 50).max(lo);
    let top = 0.0;
    (0..v)
        .map(|i| {
            if i == hi {
                top
            } else if (lo..hi).contains(&i) {
                top - rng.uniform(1.5, 3.0)
            } else {
                top - rng.uniform(6.0, 14.0)
            }
        })
        .collect()
}

/// Build a readout scenario. `η` is the raw learning rate; the instance carries `η′ = η‖φ‖²`.
pub fn make_scenario(kind: ScenarioKind, v: usize, d: usize, eta: f64, seed: u64) -> Result<Scenario> {
    if v < 3 {
        return Err(Error::ScenarioConstruction(format!("need V >= 3, got {v}")));
    }
    if d < 1 {
        return Err(Error::ScenarioConstruction("need d >= 1".into()));
    }
    if !eta.is_finite() {
        return invalid("eta must be finite");
    }
    let mut rng = SeededRng::new(seed);
    let target = match kind {
        ScenarioKind::Flat => vec![0.0; v],
        ScenarioKind::Mild => rng.normal_vec(v, 0.1),
        _ => multimode_logits(v, &mut rng),
    };

    let phi = DVector::from_vec(rng.normal_vec(d, 1.0));
    let norm_sq = phi.norm_squared();
    if norm_sq == 0.0 {
        return Err(Error::ScenarioConstruction("degenerate feature vector".into()));
    }
    // orthogonal part leaves wᵀφ untouched
    let noise = DMatrix::from_vec(d, v, rng.normal_vec(d * v, 1.0 / (d as f64).sqrt()));
    let proj = &phi * (phi.transpose() * &noise) / norm_sq;
    let w = (noise - proj) + &phi * DVector::from_vec(target).transpose() / norm_sq;
    let z: Vec<f64> = (w.transpose() * &phi).iter().copied().collect();
    let p = softmax(&z)?;

    let y = match kind {
        ScenarioKind::PeakTarget => argmax(&z),
        ScenarioKind::ValleyTarget => {
            let valleys: Vec<usize> = (0..v).filter(|&i| p.get(i) < VALLEY_THRESHOLD).collect();
            if valleys.is_empty() {
                return Err(Error::ScenarioConstruction(format!("no class has p < {VALLEY_THRESHOLD}")));
            }
            valleys[rng.index(valleys.len())]
        }
        _ => rng.index(v),
    };
    let instance = SqueezeInstance { p, y, eta_prime: eta * norm_sq, z: Some(z) };
    instance.validate()?;
    Ok(Scenario { kind, phi, w, eta, instance })
}

fn default_scenarios() -> Vec<ScenarioKind> {
    ScenarioKind::ALL.to_vec()
}
fn default_vocab() -> usize {
    50
}
fn default_dim() -> usize {
    5
}
fn default_eta() -> f64 {
    -0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqueezeConfig {
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<ScenarioKind>,
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SqueezeConfig {
    fn default() -> Self {
        Self { scenarios: default_scenarios(), vocab: default_vocab(), dim: default_dim(), eta: default_eta(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqueezeRow {
    pub scenario: String,
    pub kind: String,
    #[serde(rename = "V")]
    pub v: usize,
    pub eta_prime: f64,
    pub class: usize,
    pub p_before: f64,
    pub p_after: f64,
    pub alpha_sim: f64,
    pub alpha_analytic: f64,
    pub discrepancy: f64,
}

/// One row per class per scenario. `alpha_sim` comes from the parameter-space readout step.
pub fn run_squeeze_experiment(config: &SqueezeConfig) -> Result<Vec<SqueezeRow>> {
    if config.scenarios.is_empty() {
        return Err(Error::InvalidConfig("scenario list is empty".into()));
    }
    let mut rows = Vec::new();
    for (idx, &kind) in config.scenarios.iter().enumerate() {
        let sc = make_scenario(kind, config.vocab, config.dim, config.eta, config.seed)?;
        let inst = &sc.instance;
        let z = inst.logits();
        let z_next = sc.readout_step();
        let p_next = softmax(&z_next)?;
        let sim = log_ratio_alpha(&z, &z_next);
        let ana = alpha_analytic(inst)?.alpha;
        for class in 0..inst.vocab() {
            rows.push(SqueezeRow {
                scenario: format!("{idx}:{kind}"),
                kind: kind.to_string(),
                v: inst.vocab(),
                eta_prime: inst.eta_prime,
                class,
                p_before: inst.p.get(class),
                p_after: p_next.get(class),
                alpha_sim: sim[class],
                alpha_analytic: ana[class],
                discrepancy: (sim[class] - ana[class]).abs(),
            });
        }
    }
    Ok(rows)
}

pub fn write_squeeze_csv<W: Write>(rows: &[SqueezeRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_squeeze_csv_file(rows: &[SqueezeRow], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_squeeze_csv(rows, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_instance(rng: &mut SeededRng, v: usize, eta_prime: f64) -> SqueezeInstance {
        let spread = rng.uniform(0.2, 4.0);
        let z = rng.normal_vec(v, spread);
        let y = rng.index(v);
        SqueezeInstance::from_logits(z, y, eta_prime).unwrap()
    }

    #[test]
    fn zero_step_leaves_alpha_at_one() {
        let mut rng = SeededRng::new(1);
        let inst = random_instance(&mut rng, 7, 0.0);
        assert!(alpha_analytic(&inst).unwrap().alpha.iter().all(|&a| (a - 1.0).abs() < 1e-15));
        let (z_next, _) = sgd_step_readout(&inst).unwrap();
        assert_eq!(z_next, inst.logits());
    }

    #[test]
    fn uniform_closed_form() {
        let inst = SqueezeInstance::new(ProbVector::uniform(10).unwrap(), 3, -0.5).unwrap();
        let a = alpha_analytic(&inst).unwrap().alpha;
        let other = 10.0 / (9.0 + (-0.5f64).exp());
        assert!((other - 1.040957).abs() < 1e-5);
        assert!((a[0] - other).abs() < 1e-12);
        assert!((a[3] - 10.0 / (9.0 * 0.5f64.exp() + 1.0)).abs() < 1e-12);
        let s = alpha_simulated(&inst).unwrap().alpha;
        assert!(a.iter().zip(&s).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn one_hot_target_does_not_move() {
        let p = ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        let inst = SqueezeInstance::new(p, 1, -1.3).unwrap();
        let (z_next, _) = sgd_step_readout(&inst).unwrap();
        assert_eq!(z_next, inst.logits());
    }

    #[test]
    fn analytic_matches_oracle_on_small_instance() {
        let mut rng = SeededRng::new(5);
        let inst = random_instance(&mut rng, 5, -0.8);
        let a = alpha_analytic(&inst).unwrap();
        let (_, p_next) = sgd_step_readout(&inst).unwrap();
        for i in 0..5 {
            assert!((a.alpha[i] - p_next.get(i) / inst.p.get(i)).abs() < 1e-10);
        }
        assert!((a.normalization(&inst.p) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn claims_need_ascent() {
        let inst = SqueezeInstance::new(ProbVector::uniform(4).unwrap(), 0, 0.5).unwrap();
        assert!(matches!(check_claims(&inst), Err(Error::Precondition(_))));
        let c = check_claims(&inst.with_eta_prime(-0.5)).unwrap();
        assert!(c.claim1_holds && c.claim2_holds);
        assert_eq!(c.decreased_count, 1);
    }

    #[test]
    fn argmax_other_breaks_ties_low() {
        let p = ProbVector::new(vec![0.3, 0.3, 0.3, 0.1]).unwrap();
        assert_eq!(SqueezeInstance::new(p.clone(), 0, -1.0).unwrap().argmax_other(), 1);
        assert_eq!(SqueezeInstance::new(p, 2, -1.0).unwrap().argmax_other(), 0);
    }

    #[test]
    fn scenario_logits_realised_by_readout() {
        for kind in ScenarioKind::ALL {
            let sc = make_scenario(kind, 50, 5, -0.5, 11).unwrap();
            let z_param = sc.readout_step();
            let (z_oracle, _) = sgd_step_readout(&sc.instance).unwrap();
            for (a, b) in z_param.iter().zip(&z_oracle) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!((sc.instance.eta_prime - sc.eta * sc.phi.norm_squared()).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_and_valley_scenarios() {
        let flat = make_scenario(ScenarioKind::Flat, 50, 5, -0.5, 3).unwrap();
        let p = flat.instance.p.values();
        let spread = p.iter().cloned().fold(f64::MIN, f64::max) - p.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-12);
        let a = make_scenario(ScenarioKind::ValleyTarget, 50, 5, -0.5, 3).unwrap();
        let b = make_scenario(ScenarioKind::ValleyTarget, 50, 5, -0.5, 3).unwrap();
        assert!(a.instance.p.get(a.instance.y) < VALLEY_THRESHOLD);
        assert_eq!(a.instance, b.instance);
    }

    #[test]
    fn valley_target_squeezes_everything_into_the_peak() {
        for seed in 0..20 {
            let valley = make_scenario(ScenarioKind::ValleyTarget, 50, 5, -0.5, seed).unwrap();
            let peak = make_scenario(ScenarioKind::PeakTarget, 50, 5, -0.5, seed).unwrap();
            assert_eq!(valley.instance.p, peak.instance.p);
            let cv = check_claims(&valley.instance).unwrap();
            let cp = check_claims(&peak.instance).unwrap();
            assert!(cv.claim1_holds && cv.claim2_holds);
            assert_eq!(cv.decreased_count, 49, "seed {seed}");
            assert!(cv.decreased_count > cp.decreased_count);
        }
    }

    #[test]
    fn tiny_vocab_errors() {
        assert!(matches!(make_scenario(ScenarioKind::Flat, 2, 5, -0.5, 0), Err(Error::ScenarioConstruction(_))));
        assert!(matches!(
            make_scenario(ScenarioKind::ValleyTarget, 50, 0, -0.5, 0),
            Err(Error::ScenarioConstruction(_))
        ));
        // flat has no valley, so a valley target cannot be built from it; multimode on V=3 may or may not
        assert!("cliff".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn csv_header() {
        let cfg = SqueezeConfig { scenarios: vec![ScenarioKind::Flat], vocab: 4, ..Default::default() };
        let rows = run_squeeze_experiment(&cfg).unwrap();
        let mut buf = Vec::new();
        write_squeeze_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "scenario,kind,V,eta_prime,class,p_before,p_after,alpha_sim,alpha_analytic,discrepancy"
        );
        assert_eq!(text.lines().count(), 5);
    }
}
