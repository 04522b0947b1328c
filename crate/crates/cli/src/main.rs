//! `gdl`: runs the learning-dynamics experiments and writes CSV/SVG/JSON outputs.

mod plot;
mod run;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gdl_core::probing::mnist::{mnist_influence_experiment, MnistConfig, CLASSES};
use gdl_core::probing::{train, Driver, ResponseType, TrainConfig, TrainOptions, TrainOutcome};
use gdl_core::squeeze::{run_squeeze_experiment, ScenarioKind, SqueezeConfig};

use plot::{PlotKind, PlotOptions};
use run::{require_file, CliError, CliResult, ConfigBuilder, RunContext};
use verify::Suite;

#[derive(Parser, Debug)]
#[command(name = "gdl", version, about = "Learning-dynamics experiments for softmax-output models")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if absent
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config override, `key=value`; dotted keys reach nested fields. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One-step readout experiments; one CSV row per class per scenario
    Squeeze {
        /// Scenario kinds, comma separated
        #[arg(long, value_delimiter = ',')]
        scenario: Vec<String>,
        #[arg(long = "V")]
        vocab: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        eta: Option<f64>,
    },
    /// Oracle-equivalence suites; exits nonzero when any instance fails
    Verify {
        #[arg(long)]
        suite: Option<String>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Toy preference training with probe traces
    Train {
        #[arg(long)]
        driver: Option<String>,
    },
    /// Kernel-norm and LBK / sign traces along a toy training run
    Entk {
        #[arg(long)]
        driver: Option<String>,
    },
    /// MLP on MNIST with per-class accumulated influence
    Mnist {
        /// Directory with the four IDX files; defaults to $GDL_DATA_DIR, then data/mnist
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Render a CSV produced by another subcommand as SVG
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "line")]
        kind: PlotKind,
        #[arg(long)]
        x: Option<String>,
        /// Y columns, comma separated; defaults to every numeric column
        #[arg(long, value_delimiter = ',')]
        y: Vec<String>,
        /// Column that splits rows into series
        #[arg(long)]
        group: Option<String>,
        #[arg(long)]
        title: Option<String>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyConfig {
    suite: Suite,
    n: usize,
    seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { suite: Suite::Lemma1, n: 1000, seed: 0 }
    }
}

/// Training config plus the driver, as echoed in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRun {
    driver: Driver,
    #[serde(flatten)]
    config: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self { driver: Driver::SftThenDpo, config: TrainConfig::default() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            return fail(CliError::Usage(first));
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.line());
    ExitCode::from(e.exit_code() as u8)
}

fn parse<T: std::str::FromStr<Err = gdl_core::Error>>(s: &str) -> CliResult<T> {
    s.parse().map_err(|e: gdl_core::Error| CliError::Usage(e.to_string()))
}

fn base(g: &Global) -> impl Fn(ConfigBuilder) -> CliResult<ConfigBuilder> + '_ {
    move |b| b.file(g.config.as_deref())?.overrides(&g.overrides)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    let layer = base(g);
    match cli.cmd {
        Command::Squeeze { scenario, vocab, d, eta } => {
            let kinds = scenario.iter().map(|s| parse::<ScenarioKind>(s)).collect::<CliResult<Vec<_>>>()?;
            let cfg: SqueezeConfig = layer(ConfigBuilder::new::<SqueezeConfig>())?
                .set_opt("scenarios", (!kinds.is_empty()).then_some(kinds))
                .set_opt("vocab", vocab)
                .set_opt("dim", d)
                .set_opt("eta", eta)
                .set_opt("seed", g.seed)
                .build()?;
            let rows = run_squeeze_experiment(&cfg)?;
            let mut ctx = RunContext::new(&g.out, "squeeze", cfg.seed)?;
            ctx.write_rows("squeeze.csv", &rows)?;
            println!("{} V={} eta={}", ctx.header(), cfg.vocab, cfg.eta);
            for (idx, kind) in cfg.scenarios.iter().enumerate() {
                let tag = format!("{idx}:{kind}");
                let mine: Vec<_> = rows.iter().filter(|r| r.scenario == tag).collect();
                let down = mine.iter().filter(|r| r.alpha_sim < 1.0).count();
                let worst = mine.iter().map(|r| r.discrepancy).fold(0.0, f64::max);
                println!("scenario {tag}: {down}/{} classes decrease, max discrepancy {worst:.2e}", mine.len());
            }
            finish(ctx, &cfg)
        }
        Command::Verify { suite, n } => {
            let suite = suite.map(|s| parse::<Suite>(&s)).transpose()?;
            let cfg: VerifyConfig = layer(ConfigBuilder::new::<VerifyConfig>())?
                .set_opt("suite", suite)
                .set_opt("n", n)
                .set_opt("seed", g.seed)
                .build()?;
            let report = verify::run_suite(cfg.suite, cfg.n, cfg.seed)?;
            let name = format!("verify_{}.csv", serde_json::to_value(cfg.suite).unwrap().as_str().unwrap());
            let mut ctx = RunContext::new(&g.out, "verify", cfg.seed)?;
            ctx.write_rows(&name, &report.rows)?;
            println!("{}", ctx.header());
            println!("{}", report.summary());
            finish(ctx, &cfg)?;
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Verification(report.summary()))
            }
        }
        Command::Train { driver } => {
            let run = train_run(g, driver)?;
            let mut ctx = RunContext::new(&g.out, "train", run.config.seed)?;
            let outcome = train(run.driver, &run.config, TrainOptions::default())?;
            let mut w = ctx.csv_file("trace.csv")?;
            gdl_core::probing::write_trace_csv(&outcome.trace, &mut w)?;
            drop(w);
            ctx.write_rows("epochs.csv", &epoch_rows(&outcome))?;
            println!("{} driver={}", ctx.header(), run.driver);
            print_epochs(&outcome);
            finish(ctx, &run)
        }
        Command::Entk { driver } => {
            let run = train_run(g, driver)?;
            let mut ctx = RunContext::new(&g.out, "entk", run.config.seed)?;
            let outcome = train(run.driver, &run.config, TrainOptions { track_kernel: true })?;
            let mut w = ctx.csv_file("kernel_trace.csv")?;
            gdl_core::probing::train::write_kernel_trace_csv(&outcome.kernel_trace, &mut w)?;
            drop(w);
            let lbk: Vec<LbkRow> = outcome
                .trace
                .iter()
                .filter_map(|r| {
                    Some(LbkRow {
                        step: r.step,
                        phase: serde_json::to_value(r.phase).ok()?.as_str()?.to_string(),
                        probe_id: r.probe_id,
                        response_type: r.response_type.name().to_string(),
                        lbk: r.lbk?,
                        sign_delta: r.sign_delta?,
                    })
                })
                .collect();
            ctx.write_rows("lbk_trace.csv", &lbk)?;
            println!("{} driver={}", ctx.header(), run.driver);
            println!("kernel trace rows {}, lbk rows {}", outcome.kernel_trace.len(), lbk.len());
            finish(ctx, &run)
        }
        Command::Mnist { data_dir, epochs } => {
            let env_dir = std::env::var_os("GDL_DATA_DIR").map(PathBuf::from);
            let cfg: MnistConfig = layer(ConfigBuilder::new::<MnistConfig>().set_opt("data_dir", env_dir))?
                .set_opt("data_dir", data_dir)
                .set_opt("epochs", epochs)
                .set_opt("seed", g.seed)
                .build()?;
            for f in [
                "train-images-idx3-ubyte",
                "train-labels-idx1-ubyte",
                "t10k-images-idx3-ubyte",
                "t10k-labels-idx1-ubyte",
            ] {
                require_file(&cfg.data_dir.join(f))?;
            }
            let report = mnist_influence_experiment(&cfg)?;
            let mut ctx = RunContext::new(&g.out, "mnist", cfg.seed)?;
            let mut w = csv::Writer::from_writer(ctx.csv_file("class_avg.csv")?);
            let mut header = vec!["class".to_string()];
            header.extend((0..CLASSES).map(|c| c.to_string()));
            w.write_record(&header)?;
            for c in 0..CLASSES {
                let mut rec = vec![c.to_string()];
                rec.extend(report.class_avg_matrix.row(c).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
            w.flush()?;
            drop(w);
            ctx.write_rows("per_step.csv", &report.per_step_traces)?;
            ctx.write_rows("kernel_stability.csv", &report.kernel_stability_traces)?;
            println!("{} epochs={}", ctx.header(), cfg.epochs);
            println!("accuracy {:.4}", report.accuracy);
            for &c in &cfg.probe_classes {
                println!("class {c}: off-diagonal ranking {:?}", report.confusion_rank(c));
            }
            finish(ctx, &cfg)
        }
        Command::Plot { input, kind, x, y, group, title } => {
            require_file(&input)?;
            let text = std::fs::read_to_string(&input)?;
            let opts = PlotOptions { x, y, group, title };
            let svg = plot::render(&text, kind, &opts)?;
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
            let ctx = RunContext::new(&g.out, "plot", g.seed.unwrap_or(0))?;
            let path = ctx.out.join(format!("{stem}.svg"));
            std::fs::write(&path, svg)?;
            println!("wrote {}", path.display());
            let echo = serde_json::json!({
                "input": input,
                "kind": format!("{kind:?}").to_lowercase(),
                "x": opts.x,
                "y": opts.y,
                "group": opts.group,
                "title": opts.title,
            });
            finish(ctx, &echo)
        }
    }
}

fn finish<C: Serialize>(ctx: RunContext, cfg: &C) -> CliResult<()> {
    let p = ctx.finish(cfg)?;
    println!("wrote {}", p.display());
    Ok(())
}

fn train_run(g: &Global, driver: Option<String>) -> CliResult<TrainRun> {
    let driver = driver.map(|d| parse::<Driver>(&d)).transpose()?;
    let mut run: TrainRun = base(g)(ConfigBuilder::new::<TrainRun>())?.set_opt("driver", driver).build()?;
    if let Some(s) = g.seed {
        run.config = run.config.with_seed(s);
    }
    run.config.validate()?;
    Ok(run)
}

#[derive(Serialize)]
struct LbkRow {
    step: usize,
    phase: String,
    probe_id: usize,
    response_type: String,
    lbk: f64,
    sign_delta: f64,
}

#[derive(Serialize)]
struct EpochRow {
    step: usize,
    phase: String,
    kind: String,
    chosen: f64,
    rejected: f64,
    perturbed_chosen: f64,
    perturbed_rejected: f64,
    other_train_chosen: f64,
    test_chosen: f64,
    permuted_chosen: f64,
    random_tokens: f64,
    margin: f64,
    argmax_conf: f64,
}

fn label<T: Serialize>(x: T) -> String {
    serde_json::to_value(x).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn epoch_rows(o: &TrainOutcome) -> Vec<EpochRow> {
    o.events
        .iter()
        .map(|e| {
            let g = |t| e.get(t);
            EpochRow {
                step: e.step,
                phase: label(e.phase),
                kind: label(e.kind),
                chosen: g(ResponseType::Chosen),
                rejected: g(ResponseType::Rejected),
                perturbed_chosen: g(ResponseType::PerturbedChosen),
                perturbed_rejected: g(ResponseType::PerturbedRejected),
                other_train_chosen: g(ResponseType::OtherTrainChosen),
                test_chosen: g(ResponseType::TestChosen),
                permuted_chosen: g(ResponseType::PermutedChosen),
                random_tokens: g(ResponseType::RandomTokens),
                margin: e.margin,
                argmax_conf: e.argmax_conf,
            }
        })
        .collect()
}

fn print_epochs(o: &TrainOutcome) {
    for e in o.events.iter().filter(|e| e.kind == gdl_core::probing::EventKind::EpochEnd) {
        println!(
            "step {:>5} {:<3} chosen {:>8.3} rejected {:>8.3} margin {:>7.3} greedy {:>8.3}",
            e.step,
            label(e.phase),
            e.get(ResponseType::Chosen),
            e.get(ResponseType::Rejected),
            e.margin,
            e.argmax_conf
        );
    }
}
