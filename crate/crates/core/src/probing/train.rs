//! SFT / DPO training drivers on the toy data, with probe traces.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dataset::{ToyConfig, ToyPreferenceDataset};
use super::probes::{ProbeSet, ResponseType};
use crate::dynamics::{kernel_norm, lbk_metric, sign_delta, DeltaLogPi};
use crate::error::{Error, Result};
use crate::losses::{
    preference_loss_value, residual_preference, residual_sft, sequence_logprob, PreferenceKind, PreferenceLogps,
    ResidualMatrix, SequenceExample,
};
use crate::models::{ModelInput, ModelState, ReferenceSnapshot};
use crate::prob::{LogitMatrix, ProbVector};
use crate::rng::SeededRng;

/// Examples per SGD update. Losses are averaged over the batch.
pub const BATCH_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Driver {
    Sft,
    ExtendSft,
    Dpo,
    SftThenDpo,
    ExtendThenDpo,
}

impl Driver {
    pub const ALL: [Driver; 5] = [Self::Sft, Self::ExtendSft, Self::Dpo, Self::SftThenDpo, Self::ExtendThenDpo];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sft => "sft",
            Self::ExtendSft => "extend_sft",
            Self::Dpo => "dpo",
            Self::SftThenDpo => "sft_then_dpo",
            Self::ExtendThenDpo => "extend_then_dpo",
        }
    }

    /// `(phase, extend)` pairs run in order.
    fn phases(self) -> Vec<(Phase, bool)> {
        match self {
            Self::Sft => vec![(Phase::Sft, false)],
            Self::ExtendSft => vec![(Phase::Sft, true)],
            Self::Dpo => vec![(Phase::Dpo, false)],
            Self::SftThenDpo => vec![(Phase::Sft, false), (Phase::Dpo, false)],
            Self::ExtendThenDpo => vec![(Phase::Sft, true), (Phase::Dpo, false)],
        }
    }
}

impl fmt::Display for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Driver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown driver '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Sft,
    Dpo,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sft => "sft",
            Self::Dpo => "dpo",
        })
    }
}

fn default_model_dim() -> usize {
    32
}
fn default_eta() -> f64 {
    0.5
}
fn default_beta() -> f64 {
    0.5
}
fn default_sft_epochs() -> usize {
    6
}
fn default_dpo_epochs() -> usize {
    4
}
fn default_cadence() -> usize {
    25
}
fn default_n_probes() -> usize {
    16
}
fn default_perturb_k() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub dataset: ToyConfig,
    #[serde(default = "default_model_dim")]
    pub model_dim: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_sft_epochs")]
    pub sft_epochs: usize,
    #[serde(default = "default_dpo_epochs")]
    pub dpo_epochs: usize,
    #[serde(default = "default_cadence")]
    pub probe_cadence: usize,
    #[serde(default = "default_n_probes")]
    pub n_probes: usize,
    #[serde(default = "default_perturb_k")]
    pub perturb_k: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: ToyConfig::default(),
            model_dim: default_model_dim(),
            eta: default_eta(),
            beta: default_beta(),
            sft_epochs: default_sft_epochs(),
            dpo_epochs: default_dpo_epochs(),
            probe_cadence: default_cadence(),
            n_probes: default_n_probes(),
            perturb_k: default_perturb_k(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Same settings with every seed (dataset, probes, init, shuffling) set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.dataset.seed = seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if self.probe_cadence == 0 {
            return bad("probe_cadence must be at least 1");
        }
        if self.model_dim == 0 {
            return bad("model_dim must be at least 1");
        }
        Ok(())
    }

    /// Seed of the probe-set sampler, kept apart from the init and shuffle streams.
    pub fn probe_seed(&self) -> u64 {
        self.seed.wrapping_add(100)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub phase: Phase,
    pub probe_id: usize,
    pub response_type: ResponseType,
    pub mean_logprob: f64,
    pub margin: f64,
    pub argmax_conf: f64,
    pub lbk: Option<f64>,
    pub sign_delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    Cadence,
    EpochEnd,
}

/// Probe averages at one probing event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSummary {
    pub step: usize,
    pub phase: Phase,
    pub kind: EventKind,
    /// Mean sequence log-probability per response type, in [`ResponseType::ALL`] order.
    pub mean_logprob: [f64; 8],
    pub margin: f64,
    pub argmax_conf: f64,
}

impl EventSummary {
    pub fn get(&self, t: ResponseType) -> f64 {
        self.mean_logprob[ResponseType::ALL.iter().position(|&x| x == t).unwrap()]
    }

    /// Mean over the six indirectly trained types.
    pub fn indirect_mean(&self) -> f64 {
        ResponseType::INDIRECT.iter().map(|&t| self.get(t)).sum::<f64>() / ResponseType::INDIRECT.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTraceRecord {
    pub step: usize,
    pub phase: Phase,
    pub response_type: ResponseType,
    pub kernel_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub trace: Vec<TraceRecord>,
    pub events: Vec<EventSummary>,
    pub kernel_trace: Vec<KernelTraceRecord>,
}

impl TrainOutcome {
    /// Events that close an epoch of `phase`, preceded by the phase's starting state.
    pub fn epoch_curve(&self, phase: Phase) -> Vec<&EventSummary> {
        let first = self.events.iter().position(|e| e.phase == phase);
        let Some(first) = first else { return Vec::new() };
        // the starting state of a phase is the last event before it, or its own start event
        let start = if first > 0 { first - 1 } else { first };
        let mut out = vec![&self.events[start]];
        out.extend(self.events[first..].iter().filter(|e| e.phase == phase && e.kind == EventKind::EpochEnd));
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Record `‖K(χ_o, χ_u)‖_F` between probe 0's training example and each of its responses.
    pub track_kernel: bool,
}

pub fn greedy_argmax_confidence(model: &ModelState, prompt: &[usize], gold: &[usize]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::InvalidInput("gold response must be non-empty".into()));
    }
    let x = ModelInput::Sequence(SequenceExample { prompt: prompt.to_vec(), response: gold.to_vec() });
    let lp = model.forward(&x)?.log_probs();
    Ok(lp
        .column_iter()
        .map(|c| {
            // lowest id on ties; the log-probability is the same either way
            let best = c.iter().enumerate().fold(0, |b, (i, &v)| if v > c[b] { i } else { b });
            c[best]
        })
        .sum())
}

fn seq_input(prompt: &[usize], response: &[usize]) -> ModelInput {
    ModelInput::Sequence(SequenceExample { prompt: prompt.to_vec(), response: response.to_vec() })
}

/// Per-(probe, type) state from the previous event, used for LBK and SignDelta.
struct ProbeMemory {
    log_probs: DMatrix<f64>,
    probs: Vec<ProbVector>,
    own_residual: ResidualMatrix,
}

struct Recorder<'a> {
    probes: &'a ProbeSet,
    options: TrainOptions,
    memory: Vec<Vec<Option<ProbeMemory>>>,
    trace: Vec<TraceRecord>,
    events: Vec<EventSummary>,
    kernel_trace: Vec<KernelTraceRecord>,
    last_step: Option<usize>,
    dataset: &'a ToyPreferenceDataset,
}

impl<'a> Recorder<'a> {
    fn record(&mut self, model: &ModelState, step: usize, phase: Phase, kind: EventKind) -> Result<()> {
        if self.last_step == Some(step) {
            if kind == EventKind::EpochEnd {
                if let Some(e) = self.events.last_mut() {
                    e.kind = EventKind::EpochEnd;
                }
            }
            return Ok(());
        }
        self.last_step = Some(step);
        let mut sums = [0.0; 8];
        let (mut margin_sum, mut conf_sum) = (0.0, 0.0);
        for (pi, probe) in self.probes.probes.iter().enumerate() {
            let own = &self.dataset.train[probe.train_index];
            let own_probs = model.forward(&seq_input(&own.prompt, &own.chosen))?.prob_matrix();
            let own_residual = residual_sft(&own_probs, &own.chosen)?;
            let mut lps = [0.0; 8];
            let mut fresh = Vec::with_capacity(8);
            for (ti, (t, resp)) in probe.responses.iter().enumerate() {
                let z: LogitMatrix = model.forward(&seq_input(&probe.prompt, resp))?;
                let log_probs = z.log_probs();
                lps[ti] = sequence_logprob(&log_probs, resp)?;
                debug_assert_eq!(*t, ResponseType::ALL[ti]);
                fresh.push(ProbeMemory { log_probs, probs: z.probs(), own_residual: own_residual.clone() });
            }
            let margin = lps[0] - lps[1];
            let conf = greedy_argmax_confidence(model, &probe.prompt, probe.response(ResponseType::Chosen))?;
            for (ti, mem) in fresh.into_iter().enumerate() {
                let (lbk, sd) = match &self.memory[pi][ti] {
                    Some(prev) => {
                        let delta = DeltaLogPi(&mem.log_probs - &prev.log_probs);
                        (lbk_metric(&delta, &prev.probs, &prev.own_residual)?, Some(sign_delta(&delta)))
                    }
                    None => (None, None),
                };
                self.trace.push(TraceRecord {
                    step,
                    phase,
                    probe_id: probe.id,
                    response_type: ResponseType::ALL[ti],
                    mean_logprob: lps[ti],
                    margin,
                    argmax_conf: conf,
                    lbk,
                    sign_delta: sd,
                });
                self.memory[pi][ti] = Some(mem);
                sums[ti] += lps[ti];
            }
            margin_sum += margin;
            conf_sum += conf;
        }
        let n = self.probes.probes.len().max(1) as f64;
        self.events.push(EventSummary {
            step,
            phase,
            kind,
            mean_logprob: sums.map(|s| s / n),
            margin: margin_sum / n,
            argmax_conf: conf_sum / n,
        });
        if self.options.track_kernel {
            if let Some(probe) = self.probes.probes.first() {
                let own = &self.dataset.train[probe.train_index];
                let chi_u = seq_input(&own.prompt, &own.chosen);
                for (t, resp) in &probe.responses {
                    let kn = kernel_norm(model, &seq_input(&probe.prompt, resp), &chi_u)?;
                    self.kernel_trace.push(KernelTraceRecord { step, phase, response_type: *t, kernel_norm: kn });
                }
            }
        }
        Ok(())
    }
}

/// Forward pass inside a training loop; non-finite logits there mean the run diverged.
fn forward_at(model: &ModelState, x: &ModelInput, step: usize) -> Result<LogitMatrix> {
    model.forward(x).map_err(|e| Error::Divergence { step, reason: e.to_string() })
}

/// Probe evaluation only fails on a valid setup when the model has blown up.
fn divergence_at(step: usize, e: Error) -> Error {
    match e {
        Error::InvalidInput(reason) => Error::Divergence { step, reason },
        other => other,
    }
}

fn divergence(step: usize, e: Error) -> Error {
    match e {
        Error::Divergence { reason, .. } => Error::Divergence { step, reason },
        other => other,
    }
}

/// Runs `driver` from `model`, probing at phase start, every `probe_cadence` updates and each epoch end.
pub fn run_training(
    driver: Driver,
    model: ModelState,
    dataset: &ToyPreferenceDataset,
    probes: &ProbeSet,
    config: &TrainConfig,
    options: TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.vocab() != dataset.vocab {
        return Err(Error::InvalidInput(format!(
            "model vocabulary {} differs from dataset vocabulary {}",
            model.vocab(),
            dataset.vocab
        )));
    }
    let mut model = model;
    let mut rec = Recorder {
        probes,
        options,
        memory: probes.probes.iter().map(|_| (0..8).map(|_| None).collect()).collect(),
        trace: Vec::new(),
        events: Vec::new(),
        kernel_trace: Vec::new(),
        last_step: None,
        dataset,
    };
    let mut step = 0usize;
    for (phase_idx, (phase, extend)) in driver.phases().into_iter().enumerate() {
        let mut rng = SeededRng::derive(config.seed, phase_idx as u64 + 1);
        rec.record(&model, step, phase, EventKind::Start)?;
        match phase {
            Phase::Sft => {
                let mut items: Vec<ModelInput> = Vec::new();
                let mut targets: Vec<&[usize]> = Vec::new();
                for e in &dataset.train {
                    items.push(seq_input(&e.prompt, &e.chosen));
                    targets.push(&e.chosen);
                }
                if extend {
                    for e in &dataset.train {
                        items.push(seq_input(&e.prompt, &e.rejected));
                        targets.push(&e.rejected);
                    }
                }
                for _ in 0..config.sft_epochs {
                    let mut order: Vec<usize> = (0..items.len()).collect();
                    rng.shuffle(&mut order);
                    for batch in order.chunks(BATCH_SIZE) {
                        step += 1;
                        let scale = 1.0 / batch.len() as f64;
                        let mut residuals = Vec::with_capacity(batch.len());
                        let mut inputs = Vec::with_capacity(batch.len());
                        let mut loss = 0.0;
                        for &i in batch {
                            let z = forward_at(&model, &items[i], step)?;
                            loss -= sequence_logprob(&z.log_probs(), targets[i])?;
                            residuals.push(residual_sft(&z.prob_matrix(), targets[i])?.scaled(scale));
                            inputs.push(items[i].clone());
                        }
                        if !loss.is_finite() {
                            return Err(Error::Divergence { step, reason: "non-finite SFT loss".into() });
                        }
                        model.step_in_place(&residuals, &inputs, config.eta).map_err(|e| divergence(step, e))?;
                        if step.is_multiple_of(config.probe_cadence) {
                            rec.record(&model, step, phase, EventKind::Cadence).map_err(|e| divergence_at(step, e))?;
                        }
                    }
                    rec.record(&model, step, phase, EventKind::EpochEnd).map_err(|e| divergence_at(step, e))?;
                }
            }
            Phase::Dpo => {
                let reference = ReferenceSnapshot::take(&model);
                let mut pairs = Vec::with_capacity(dataset.train.len());
                for e in &dataset.train {
                    let pair = e.preference_pair(config.beta)?;
                    let chosen = seq_input(&e.prompt, &e.chosen);
                    let rejected = seq_input(&e.prompt, &e.rejected);
                    let ref_c = reference.model().sequence_logprob(&chosen, &e.chosen)?;
                    let ref_r = reference.model().sequence_logprob(&rejected, &e.rejected)?;
                    pairs.push((pair, chosen, rejected, ref_c, ref_r));
                }
                for _ in 0..config.dpo_epochs {
                    let mut order: Vec<usize> = (0..pairs.len()).collect();
                    rng.shuffle(&mut order);
                    for batch in order.chunks(BATCH_SIZE) {
                        step += 1;
                        let scale = 1.0 / batch.len() as f64;
                        let mut residuals = Vec::with_capacity(2 * batch.len());
                        let mut inputs = Vec::with_capacity(2 * batch.len());
                        let mut loss = 0.0;
                        for &i in batch {
                            let (pair, chosen, rejected, ref_c, ref_r) = &pairs[i];
                            let zc = forward_at(&model, chosen, step)?;
                            let zr = forward_at(&model, rejected, step)?;
                            let logps = PreferenceLogps {
                                policy_chosen: sequence_logprob(&zc.log_probs(), &pair.chosen)?,
                                policy_rejected: sequence_logprob(&zr.log_probs(), &pair.rejected)?,
                                ref_chosen: *ref_c,
                                ref_rejected: *ref_r,
                            };
                            loss += preference_loss_value(PreferenceKind::Dpo, &logps, pair).map_err(|_| {
                                Error::Divergence { step, reason: "non-finite DPO log-probabilities".into() }
                            })?;
                            let r = residual_preference(
                                PreferenceKind::Dpo,
                                pair,
                                &zc.prob_matrix(),
                                &zr.prob_matrix(),
                                *ref_c,
                                *ref_r,
                            )?;
                            residuals.push(r.chosen.scaled(scale));
                            residuals.push(r.rejected_gradient().scaled(scale));
                            inputs.push(chosen.clone());
                            inputs.push(rejected.clone());
                        }
                        if !loss.is_finite() {
                            return Err(Error::Divergence { step, reason: "non-finite DPO loss".into() });
                        }
                        model.step_in_place(&residuals, &inputs, config.eta).map_err(|e| divergence(step, e))?;
                        if step.is_multiple_of(config.probe_cadence) {
                            rec.record(&model, step, phase, EventKind::Cadence).map_err(|e| divergence_at(step, e))?;
                        }
                    }
                    rec.record(&model, step, phase, EventKind::EpochEnd).map_err(|e| divergence_at(step, e))?;
                }
            }
        }
    }
    Ok(TrainOutcome { model, trace: rec.trace, events: rec.events, kernel_trace: rec.kernel_trace })
}

/// Everything a run needs, built from a config: dataset, probe set and a fresh model.
pub struct TrainSetup {
    pub dataset: ToyPreferenceDataset,
    pub probes: ProbeSet,
    pub model: ModelState,
}

pub fn prepare(config: &TrainConfig) -> Result<TrainSetup> {
    config.validate()?;
    let dataset = super::dataset::gen_toy_dataset(&config.dataset)?;
    let probes = super::probes::build_probe_set(&dataset, config.n_probes, config.perturb_k, config.probe_seed())?;
    let model = ModelState::causal_pool(dataset.vocab, config.model_dim, config.seed)?;
    Ok(TrainSetup { dataset, probes, model })
}

/// [`prepare`] followed by [`run_training`].
pub fn train(driver: Driver, config: &TrainConfig, options: TrainOptions) -> Result<TrainOutcome> {
    let s = prepare(config)?;
    run_training(driver, s.model, &s.dataset, &s.probes, config, options)
}

pub const TRACE_HEADER: &str = "step,phase,probe_id,response_type,mean_logprob,margin,argmax_conf,lbk,sign_delta";

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if trace.is_empty() {
        w.write_record(TRACE_HEADER.split(','))?;
    }
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_kernel_trace_csv<W: Write>(trace: &[KernelTraceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            dataset: ToyConfig { n_train: 24, n_test: 8, ..Default::default() },
            n_probes: 4,
            sft_epochs: 2,
            dpo_epochs: 2,
            probe_cadence: 5,
            ..Default::default()
        }
    }

    #[test]
    fn greedy_confidence_edges() {
        let v = 5;
        let dims = crate::models::ModelDims { vocab: v, dim: 2, hidden: 0 };
        let zero =
            ModelState::from_parts(crate::models::ModelKind::CausalPool, dims, vec![0.0; 2 * v * 2 + v]).unwrap();
        let g = greedy_argmax_confidence(&zero, &[1], &[0, 2, 3]).unwrap();
        assert!((g - 3.0 * (1.0 / v as f64).ln()).abs() < 1e-12);
        let mut theta = vec![0.0; 2 * v * 2 + v];
        theta[2 * v * 2 + 3] = 800.0;
        let peaked = ModelState::from_parts(crate::models::ModelKind::CausalPool, dims, theta).unwrap();
        assert_eq!(greedy_argmax_confidence(&peaked, &[1], &[0, 2]).unwrap(), 0.0);
        assert!(greedy_argmax_confidence(&zero, &[1], &[]).is_err());
    }

    #[test]
    fn trace_is_deterministic_and_ordered() {
        let cfg = small();
        let a = train(Driver::SftThenDpo, &cfg, TrainOptions::default()).unwrap();
        let b = train(Driver::SftThenDpo, &cfg, TrainOptions::default()).unwrap();
        assert_eq!(a.trace, b.trace);
        let steps: Vec<usize> = a.events.iter().map(|e| e.step).collect();
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.trace.len(), a.events.len() * 4 * 8);
        assert!(a.trace[..32].iter().all(|r| r.lbk.is_none()));
        assert!(a.trace[32..].iter().all(|r| r.sign_delta.is_some()));
        let mut buf = Vec::new();
        write_trace_csv(&a.trace, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().next().unwrap(), TRACE_HEADER);
    }

    #[test]
    fn epoch_curve_starts_at_phase_boundary() {
        let a = train(Driver::SftThenDpo, &small(), TrainOptions::default()).unwrap();
        let sft = a.epoch_curve(Phase::Sft);
        let dpo = a.epoch_curve(Phase::Dpo);
        assert_eq!(sft.len(), 3);
        assert_eq!(dpo.len(), 3);
        assert_eq!(dpo[0].step, sft[2].step);
    }

    #[test]
    fn divergence_names_the_step() {
        let cfg = TrainConfig { eta: 1e200, ..small() };
        let err = train(Driver::Sft, &cfg, TrainOptions::default()).unwrap_err();
        match err {
            Error::Divergence { step, .. } => assert!(step >= 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"eta": 0.1, "lr": 0.2}"#);
        assert!(err.is_err());
        let ok: TrainConfig = serde_json::from_str(
            r#"{"eta": 0.1, "dataset": {"V": 42, "L": 6, "n_train": 10, "n_test": 4, "seed": 1}}"#,
        )
        .unwrap();
        assert_eq!(ok.dataset.n_train, 10);
        assert_eq!(ok.sft_epochs, 6);
    }

    #[test]
    fn kernel_trace_is_recorded_on_request() {
        let cfg = TrainConfig { sft_epochs: 1, ..small() };
        let out = train(Driver::Sft, &cfg, TrainOptions { track_kernel: true }).unwrap();
        assert_eq!(out.kernel_trace.len(), out.events.len() * 8);
        assert!(out.kernel_trace.iter().all(|r| r.kernel_norm > 0.0));
    }
}
