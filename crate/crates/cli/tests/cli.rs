use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gdl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("GDL_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn error_kind(o: &Output) -> String {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(line).expect("error line is json");
    v["error"].as_str().unwrap().to_string()
}

const SMALL_TRAIN: [&str; 8] =
    ["--set", "dataset.n_train=24", "--set", "sft_epochs=1", "--set", "dpo_epochs=1", "--set", "n_probes=4"];

#[test]
fn squeeze_writes_one_row_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let o = gdl(&["squeeze", "--scenario", "valley_target", "--V", "50", "--d", "5", "--eta", "-0.5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("squeeze.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# gdl 0.1.0 squeeze seed=0");
    assert_eq!(lines[1], "scenario,kind,V,eta_prime,class,p_before,p_after,alpha_sim,alpha_analytic,discrepancy");
    assert_eq!(lines.len(), 2 + 50);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("squeeze.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["vocab"], 50);
    assert_eq!(manifest["config"]["scenarios"][0], "valley_target");
}

#[test]
fn verify_lemma1_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = gdl(&["verify", "--suite", "lemma1", "--n", "1000", "--seed", "7"], dir.path());
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("seed=7"));
    assert!(stdout.contains("lemma1 n=1000 max_discrepancy="));
    assert!(stdout.contains("failures=0"));
}

#[test]
fn verify_other_suites() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["residuals", "order"] {
        let o = gdl(&["verify", "--suite", suite, "--n", "10"], dir.path());
        assert!(o.status.success(), "{suite}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.path().join(format!("verify_{suite}.csv")).is_file());
    }
}

#[test]
fn train_from_config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"driver": "sft", "dataset": {"n_train": 24}, "sft_epochs": 1, "dpo_epochs": 1, "n_probes": 4}"#,
    )
    .unwrap();
    let o = gdl(&["train", "--driver", "extend_then_dpo", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert!(lines.next().unwrap().starts_with("# gdl"));
    assert_eq!(
        lines.next().unwrap(),
        "step,phase,probe_id,response_type,mean_logprob,margin,argmax_conf,lbk,sign_delta"
    );
    assert!(trace.contains(",dpo,"));
    let manifest = fs::read_to_string(dir.path().join("train.manifest.json")).unwrap();
    assert!(manifest.contains("\"driver\": \"extend_then_dpo\""));
}

#[test]
fn identical_runs_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--seed", "5"];
    args.extend(SMALL_TRAIN);
    assert!(gdl(&args, a.path()).status.success());
    assert!(gdl(&args, b.path()).status.success());
    for f in ["trace.csv", "epochs.csv", "train.manifest.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn entk_then_plot_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["entk"];
    args.extend(SMALL_TRAIN);
    assert!(gdl(&args, dir.path()).status.success());
    let input = dir.path().join("kernel_trace.csv");
    let plot_args =
        ["plot", "--input", input.to_str().unwrap(), "--x", "step", "--y", "kernel_norm", "--group", "response_type"];
    assert!(gdl(&plot_args, &dir.path().join("p1")).status.success());
    assert!(gdl(&plot_args, &dir.path().join("p2")).status.success());
    let s1 = fs::read(dir.path().join("p1/kernel_trace.svg")).unwrap();
    assert_eq!(s1, fs::read(dir.path().join("p2/kernel_trace.svg")).unwrap());
    assert!(String::from_utf8(s1).unwrap().starts_with("<svg"));
    assert!(dir.path().join("lbk_trace.csv").is_file());
}

#[test]
fn distinct_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let o = gdl(&["frobnicate"], dir.path());
    assert_eq!((o.status.code(), error_kind(&o).as_str()), (Some(2), "usage"));

    let o = gdl(&["train", "--config", "/definitely/not/here.json"], dir.path());
    assert_eq!((o.status.code(), error_kind(&o).as_str()), (Some(4), "missing_file"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let o = gdl(&["train", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!((o.status.code(), error_kind(&o).as_str()), (Some(3), "malformed_config"));

    let o = gdl(&["squeeze", "--set", "vocab_size=3"], dir.path());
    assert_eq!(error_kind(&o), "malformed_config");

    let o = gdl(&["squeeze", "--scenario", "volcano"], dir.path());
    assert_eq!(error_kind(&o), "usage");

    let o = gdl(&["mnist", "--data-dir", "/definitely/not/here"], dir.path());
    assert_eq!(error_kind(&o), "missing_file");

    // stderr carries exactly one line
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);
}

#[test]
fn mnist_short_run() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    if !data.join("train-images-idx3-ubyte").is_file() {
        eprintln!("skipping: no MNIST files under {}", data.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let o = gdl(&["mnist", "--epochs", "1", "--data-dir", data.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let avg = fs::read_to_string(dir.path().join("class_avg.csv")).unwrap();
    assert_eq!(avg.lines().count(), 2 + 10);
    let o =
        gdl(&["plot", "--kind", "heatmap", "--input", dir.path().join("class_avg.csv").to_str().unwrap()], dir.path());
    assert!(o.status.success());
    assert!(dir.path().join("class_avg.svg").is_file());
}
