use gdl_core::dynamics::{actual_delta, predict_delta, DecompositionTerms};
use gdl_core::models::{LabeledExample, ModelInput, ModelState};
use gdl_core::probing::{
    build_probe_set, gen_toy_dataset, train, write_trace_csv, Driver, Phase, ResponseType, ToyConfig, TrainConfig,
    TrainOptions,
};
use gdl_core::squeeze::{run_squeeze_experiment, write_squeeze_csv, ScenarioKind, SqueezeConfig};

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
fn squeeze_csv_roundtrip() {
    let cfg = SqueezeConfig { scenarios: ScenarioKind::ALL.to_vec(), ..Default::default() };
    let rows = run_squeeze_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 5 * 50);
    let mut buf = Vec::new();
    write_squeeze_csv(&rows, &mut buf).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(rdr.records().count(), rows.len());
    assert!(rows.iter().all(|r| r.discrepancy < 1e-10));
    // probabilities after the step still sum to one per scenario
    for s in 0..5 {
        let total: f64 = rows.iter().filter(|r| r.scenario.starts_with(&format!("{s}:"))).map(|r| r.p_after).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn training_is_reproducible() {
    let a = train(Driver::SftThenDpo, &small().with_seed(11), TrainOptions::default()).unwrap();
    let b = train(Driver::SftThenDpo, &small().with_seed(11), TrainOptions::default()).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.model.params(), b.model.params());
    let c = train(Driver::SftThenDpo, &small().with_seed(12), TrainOptions::default()).unwrap();
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn trace_covers_every_probe_and_type() {
    let cfg = small();
    let out = train(Driver::SftThenDpo, &cfg, TrainOptions::default()).unwrap();
    let events = out.events.len();
    assert_eq!(out.trace.len(), events * cfg.n_probes * ResponseType::ALL.len());
    // one epoch-end per epoch plus the starting state
    assert_eq!(out.epoch_curve(Phase::Sft).len(), cfg.sft_epochs + 1);
    assert_eq!(out.epoch_curve(Phase::Dpo).len(), cfg.dpo_epochs + 1);
    let mut buf = Vec::new();
    write_trace_csv(&out.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("step,phase,probe_id,response_type,mean_logprob,margin,argmax_conf,lbk,sign_delta\n"));
}

#[test]
fn sft_raises_chosen_logprob() {
    let out = train(Driver::Sft, &small(), TrainOptions::default()).unwrap();
    let curve = out.epoch_curve(Phase::Sft);
    let first = curve.first().unwrap().get(ResponseType::Chosen);
    let last = curve.last().unwrap().get(ResponseType::Chosen);
    assert!(last > first, "{first} -> {last}");
}

#[test]
fn probes_come_from_training_split() {
    let data = gen_toy_dataset(&ToyConfig::default()).unwrap();
    let probes = build_probe_set(&data, 8, 1, 3).unwrap();
    for p in &probes.probes {
        let ex = &data.train[p.train_index];
        assert_eq!(p.prompt, ex.prompt);
        assert_eq!(p.response(ResponseType::Chosen), ex.chosen.as_slice());
        assert_eq!(p.response(ResponseType::Rejected), ex.rejected.as_slice());
        assert_ne!(p.other_index, p.train_index);
    }
}

#[test]
fn one_step_prediction_tracks_actual_change() {
    let model = ModelState::mlp(4, 6, 5, 2).unwrap();
    let update = LabeledExample::classification(vec![0.3, -1.0, 0.5, 0.2], 3);
    let observe = ModelInput::Features(vec![1.0, 0.1, -0.4, 0.7]);
    let eta = 1e-3;
    let predicted = predict_delta(&DecompositionTerms::sft(&model, &observe, &update, eta).unwrap()).unwrap();
    let after = model.apply_update(&[model.sft_residual(&update).unwrap()], &[update.input.clone()], eta).unwrap();
    let actual = actual_delta(&model, &after, &observe).unwrap();
    let err = (predicted.matrix() - actual.matrix()).norm();
    assert!(err < 1e-2 * actual.matrix().norm(), "err {err}");
}
