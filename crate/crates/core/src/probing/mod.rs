//! Toy preference data, probe sets, training drivers and the MNIST influence experiment.

pub mod dataset;
pub mod mnist;
pub mod probes;
pub mod train;

pub use dataset::{gen_toy_dataset, ToyConfig, ToyExample, ToyPreferenceDataset};
pub use mnist::{mnist_influence_experiment, MnistConfig, MnistReport};
pub use probes::{build_probe_set, Probe, ProbeSet, ResponseType};
pub use train::{
    greedy_argmax_confidence, run_training, train, write_trace_csv, Driver, EventKind, EventSummary, Phase,
    TraceRecord, TrainConfig, TrainOptions, TrainOutcome,
};
