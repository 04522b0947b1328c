//! Accumulated influence on MNIST with a small tanh MLP.
//!
//! The classifier is trained with plain SGD (batch 4, mean loss) and ±1 pixel
//! random shifts. A snapshot is kept after every epoch; single-example update
//! traces and kernel norms are then measured on those snapshots.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{actual_delta, kernel_norm};
use crate::error::{Error, Result};
use crate::models::{load_mnist_idx, LabeledExample, ModelInput, ModelState};
use crate::rng::SeededRng;

pub const CLASSES: usize = 10;
pub const SIDE: usize = 28;
const BATCH: usize = 4;
/// Held-out examples per class used as observed probes.
const PROBES_PER_CLASS: usize = 5;

fn default_hidden() -> usize {
    64
}
fn default_eta() -> f64 {
    0.05
}
fn default_epochs() -> usize {
    30
}
fn default_probe_classes() -> Vec<usize> {
    vec![4]
}
fn default_data_dir() -> PathBuf {
    PathBuf::from("data/mnist")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_probe_classes")]
    pub probe_classes: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            eta: default_eta(),
            epochs: default_epochs(),
            probe_classes: default_probe_classes(),
            seed: 0,
            data_dir: default_data_dir(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MnistData {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

/// Reads `{train,t10k}-{images-idx3,labels-idx1}-ubyte` from `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<MnistData> {
    let p = |name: &str| dir.join(name);
    let train = load_mnist_idx(&p("train-images-idx3-ubyte"), &p("train-labels-idx1-ubyte"))?;
    let test = load_mnist_idx(&p("t10k-images-idx3-ubyte"), &p("t10k-labels-idx1-ubyte"))?;
    for ex in train.iter().chain(&test) {
        if let ModelInput::Features(x) = &ex.input {
            if x.len() != SIDE * SIDE {
                return Err(Error::Format(format!("expected {}-pixel images, got {}", SIDE * SIDE, x.len())));
            }
        }
    }
    Ok(MnistData { train, test })
}

/// Translate a 28×28 image by `(dx, dy)` pixels, filling with zeros.
pub fn shift_image(x: &[f64], dx: i32, dy: i32) -> Vec<f64> {
    let n = SIDE as i32;
    let mut out = vec![0.0; x.len()];
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = (r - dy, c - dx);
            if (0..n).contains(&sr) && (0..n).contains(&sc) {
                out[(r * n + c) as usize] = x[(sr * n + sc) as usize];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceGroup {
    Same,
    Similar,
    Dissimilar,
}

/// Effect of one SGD step on an example of `update_class`, observed on held-out probes of `observed_class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTraceRecord {
    pub epoch: usize,
    pub update_class: usize,
    pub observed_class: usize,
    pub group: InfluenceGroup,
    /// Mean change of `log π(update_class)` on the probes.
    pub delta_logp_update_label: f64,
    /// Mean change of `log π(observed_class)` on the probes.
    pub delta_logp_own_label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStabilityRecord {
    pub epoch: usize,
    pub update_class: usize,
    pub observed_class: usize,
    /// Mean `‖K(x_u, x_o)‖_F` over the class's probes.
    pub kernel_norm: f64,
}

#[derive(Debug, Clone)]
pub struct MnistReport {
    pub accuracy: f64,
    /// Row `c` is the mean softmax output over held-out inputs of class `c`.
    pub class_avg_matrix: DMatrix<f64>,
    pub per_step_traces: Vec<StepTraceRecord>,
    pub kernel_stability_traces: Vec<KernelStabilityRecord>,
    pub model: ModelState,
}

impl MnistReport {
    /// Off-diagonal classes of row `c`, most probable first (lowest index on ties).
    pub fn confusion_rank(&self, c: usize) -> Vec<usize> {
        let row = self.class_avg_matrix.row(c);
        let mut others: Vec<usize> = (0..CLASSES).filter(|&k| k != c).collect();
        others.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        others
    }
}

pub fn train_mlp(data: &MnistData, config: &MnistConfig, snapshots: bool) -> Result<(ModelState, Vec<ModelState>)> {
    let mut model = ModelState::mlp(SIDE * SIDE, config.hidden, CLASSES, config.seed)?;
    let mut rng = SeededRng::derive(config.seed, 1);
    let mut kept = if snapshots { vec![model.clone()] } else { Vec::new() };
    let mut step = 0;
    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        rng.shuffle(&mut order);
        for batch in order.chunks(BATCH) {
            step += 1;
            let mut inputs = Vec::with_capacity(batch.len());
            let mut residuals = Vec::with_capacity(batch.len());
            for &i in batch {
                let ex = &data.train[i];
                let ModelInput::Features(x) = &ex.input else {
                    return Err(Error::InvalidInput("MNIST examples must be feature vectors".into()));
                };
                let dx = rng.index(3) as i32 - 1;
                let dy = rng.index(3) as i32 - 1;
                let shifted = LabeledExample::classification(shift_image(x, dx, dy), ex.label());
                residuals.push(model.sft_residual(&shifted)?.scaled(1.0 / batch.len() as f64));
                inputs.push(shifted.input);
            }
            model.step_in_place(&residuals, &inputs, config.eta).map_err(|e| match e {
                Error::Divergence { reason, .. } => Error::Divergence { step, reason },
                other => other,
            })?;
        }
        if snapshots {
            kept.push(model.clone());
        }
    }
    Ok((model, kept))
}

/// Accuracy and the class-averaged prediction matrix on `examples`.
pub fn evaluate(model: &ModelState, examples: &[LabeledExample]) -> Result<(f64, DMatrix<f64>)> {
    let mut sums = DMatrix::zeros(CLASSES, CLASSES);
    let mut counts = [0usize; CLASSES];
    let mut correct = 0;
    for ex in examples {
        let p = model.forward(&ex.input)?.probs().remove(0);
        let y = ex.label();
        if p.argmax() == y {
            correct += 1;
        }
        counts[y] += 1;
        for k in 0..CLASSES {
            sums[(y, k)] += p.get(k);
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums.row_mut(c).iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    Ok((correct as f64 / examples.len().max(1) as f64, sums))
}

pub fn mnist_influence_experiment(config: &MnistConfig) -> Result<MnistReport> {
    if config.probe_classes.iter().any(|&c| c >= CLASSES) {
        return Err(Error::InvalidConfig("probe classes must lie in 0..=9".into()));
    }
    if !(config.eta > 0.0) || config.hidden == 0 {
        return Err(Error::InvalidConfig("eta must be positive and hidden nonzero".into()));
    }
    let data = load_mnist_dir(&config.data_dir)?;
    mnist_influence_on(&data, config)
}

/// Same as [`mnist_influence_experiment`] on already loaded data.
pub fn mnist_influence_on(data: &MnistData, config: &MnistConfig) -> Result<MnistReport> {
    let (model, snapshots) = train_mlp(data, config, true)?;
    let (accuracy, class_avg_matrix) = evaluate(&model, &data.test)?;

    let mut probes: Vec<Vec<&LabeledExample>> = vec![Vec::new(); CLASSES];
    for ex in &data.test {
        if probes[ex.label()].len() < PROBES_PER_CLASS {
            probes[ex.label()].push(ex);
        }
    }
    let mut report = MnistReport {
        accuracy,
        class_avg_matrix,
        per_step_traces: Vec::new(),
        kernel_stability_traces: Vec::new(),
        model: model.clone(),
    };
    for &c in &config.probe_classes {
        let Some(update) = data.train.iter().find(|e| e.label() == c) else {
            return Err(Error::Consistency(format!("no training example of class {c}")));
        };
        let similar = report.confusion_rank(c)[0];
        for (epoch, snap) in snapshots.iter().enumerate() {
            let g = snap.sft_residual(update)?;
            let after = snap.apply_update(&[g], std::slice::from_ref(&update.input), config.eta)?;
            for (o, group) in probes.iter().enumerate() {
                if group.is_empty() {
                    continue;
                }
                let (mut upd, mut own, mut kn) = (0.0, 0.0, 0.0);
                for ex in group {
                    let d = actual_delta(snap, &after, &ex.input)?;
                    upd += d.matrix()[(c, 0)];
                    own += d.matrix()[(o, 0)];
                    kn += kernel_norm(snap, &update.input, &ex.input)?;
                }
                let n = group.len() as f64;
                let kind = if o == c {
                    InfluenceGroup::Same
                } else if o == similar {
                    InfluenceGroup::Similar
                } else {
                    InfluenceGroup::Dissimilar
                };
                report.per_step_traces.push(StepTraceRecord {
                    epoch,
                    update_class: c,
                    observed_class: o,
                    group: kind,
                    delta_logp_update_label: upd / n,
                    delta_logp_own_label: own / n,
                });
                report.kernel_stability_traces.push(KernelStabilityRecord {
                    epoch,
                    update_class: c,
                    observed_class: o,
                    kernel_norm: kn / n,
                });
            }
        }
    }
    Ok(report)
}
