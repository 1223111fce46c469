use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use adamqlr::bench::{
    self, Align, BenchError, Halving, OutputFormat, RecordKind, RosenbrockPreset, RunConfig, RunStatus, SearchObjective,
    SearchSpace, Series,
};
use adamqlr::models::{LossKind, MlpSpec, Model, RosenbrockSpec};

#[derive(Parser)]
#[command(name = "adamqlr", about = "Train, tune and diagnose quadratic-model learning-rate optimizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its metric records.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimise the Rosenbrock function and write the trajectory as CSV.
    Rosenbrock {
        #[arg(long, value_parser = parse_preset)]
        optimizer: RosenbrockPreset,
        #[arg(long, default_value_t = 200)]
        steps: u64,
        #[arg(long, default_value = "1,-1", allow_hyphen_values = true)]
        start: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random search over the standard space around a base configuration.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        budget: usize,
        #[arg(long, value_enum, default_value_t = Objective::Val)]
        objective: Objective,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also search the batch size.
        #[arg(long)]
        tune_batch: bool,
        /// Prune with successive halving over ¼, ½ and all epochs.
        #[arg(long)]
        halving: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bootstrapped median trend of the training loss across runs.
    Bootstrap {
        #[arg(long)]
        inputs: String,
        #[arg(long, default_value_t = 50)]
        n_boot: usize,
        #[arg(long, value_enum, default_value_t = AlignArg::Step)]
        align: AlignArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check gradients and curvature products against finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = ModelArg::Both)]
        model: ModelArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare Adam's second moment with the empirical Fisher diagonal.
    DiagFisher {
        /// Defaults to a linear-softmax model on synthetic blobs.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        steps: u64,
        #[arg(long, default_value_t = 2000)]
        max_examples: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    Val,
    Train,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlignArg {
    Step,
    Time,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Regression,
    Classifier,
    Rosenbrock,
    Both,
}

fn parse_preset(s: &str) -> Result<RosenbrockPreset, String> {
    RosenbrockPreset::parse(s).ok_or_else(|| {
        let names: Vec<&str> = RosenbrockPreset::ALL.iter().map(|p| p.name()).collect();
        format!("unknown optimizer {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_start(s: &str) -> Result<(f64, f64), BenchError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| BenchError::Config(format!("--start {s:?}: {e}")))?;
    match parts[..] {
        [x, y] => Ok((x, y)),
        _ => Err(BenchError::Config(format!("--start needs two comma-separated numbers, got {s:?}"))),
    }
}

fn write_json(value: &impl serde::Serialize, out: Option<&PathBuf>) -> Result<(), BenchError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| BenchError::Io(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| BenchError::Io(format!("{}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, BenchError> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.output = out;
            }
            let outcome = bench::run_training(&cfg)?;
            if let Some(last) = outcome.final_eval() {
                println!(
                    "{}: {} steps, final train loss {:.6e}{}",
                    cfg.optimizer.label(),
                    outcome.steps,
                    last.train_loss.unwrap_or(f64::NAN),
                    last.val_loss.map_or(String::new(), |v| format!(", val loss {v:.6e}"))
                );
            }
            Ok(match outcome.status {
                RunStatus::Diverged { step } => {
                    eprintln!("run diverged at step {step}");
                    ExitCode::from(1)
                }
                _ => ExitCode::SUCCESS,
            })
        }
        Command::Rosenbrock { optimizer, steps, start, out } => {
            let t = bench::run_rosenbrock(&optimizer.config(), steps, parse_start(&start)?)?;
            let last = t.last();
            println!("{}: f = {:.6e} at ({:.6}, {:.6}) after {} steps", optimizer.name(), last.f, last.x, last.y, last.step);
            if let Some(path) = out {
                t.write_csv(path)?;
            }
            Ok(if t.diverged_at.is_some() { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Tune { config, budget, objective, seed, tune_batch, halving, out } => {
            let base = RunConfig::from_file(&config)?;
            let space = SearchSpace::standard(&base.optimizer, tune_batch);
            let objective = match objective {
                Objective::Val => SearchObjective::FinalValLoss,
                Objective::Train => SearchObjective::FinalTrainLoss,
            };
            let schedule = halving.then(Halving::default);
            let result = bench::random_search(&space, budget, objective, &base, seed, schedule.as_ref())?;
            log::info!("{}", result.method);
            write_json(&result, out.as_ref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bootstrap { inputs, n_boot, align, seed, out } => {
            let align = match align {
                AlignArg::Step => Align::Step,
                AlignArg::Time => Align::Time,
            };
            let paths: Vec<PathBuf> = glob::glob(&inputs)
                .map_err(|e| BenchError::Config(format!("--inputs: {e}")))?
                .collect::<Result<_, _>>()
                .map_err(|e| BenchError::Io(e.to_string()))?;
            if paths.is_empty() {
                return Err(BenchError::Io(format!("no files match {inputs:?}")));
            }
            let runs = paths
                .iter()
                .map(|p| {
                    let records = bench::read_records(p, OutputFormat::for_path(p))?;
                    Ok(Series::from_records(&records, |r: &bench::MetricRecord| (r.kind == RecordKind::Eval).then_some(r.train_loss).flatten(), align))
                })
                .collect::<Result<Vec<_>, BenchError>>()?;
            let trend = bench::bootstrap_trend(&runs, n_boot, seed, align)?;
            write_json(&trend, out.as_ref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { model, seed } => {
            let regression = Model::Mlp(MlpSpec::new(vec![8, 50, 1], LossKind::MeanSquaredError));
            let classifier = Model::Mlp(MlpSpec::new(vec![16, 50, 10], LossKind::SoftmaxCrossEntropy));
            let small = Model::Mlp(MlpSpec::new(vec![4, 6, 3], LossKind::SoftmaxCrossEntropy));
            let rosen = Model::Rosenbrock(RosenbrockSpec::default());
            let models = match model {
                ModelArg::Regression => vec![("mlp 8-50-1 mse", regression)],
                ModelArg::Classifier => vec![("mlp 16-50-10 xent", classifier)],
                ModelArg::Rosenbrock => vec![("rosenbrock", rosen)],
                ModelArg::Both => vec![
                    ("mlp 8-50-1 mse", regression),
                    ("mlp 16-50-10 xent", classifier),
                    ("mlp 4-6-3 xent", small),
                    ("rosenbrock", rosen),
                ],
            };
            let mut ok = true;
            for (name, m) in models {
                let r = bench::gradcheck(&m, 8, seed)?;
                let pass = r.grad_rel_error <= 1e-5 && r.hvp_rel_error <= 1e-4 && r.ggn_rel_error.is_none_or(|e| e <= 1e-8);
                ok &= pass;
                println!(
                    "{name} ({} params): grad {:.2e}, hvp {:.2e}, ggn {} [{}]",
                    r.n_params,
                    r.grad_rel_error,
                    r.hvp_rel_error,
                    r.ggn_rel_error.map_or("n/a".to_string(), |e| format!("{e:.2e}")),
                    if pass { "ok" } else { "FAIL" }
                );
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::DiagFisher { config, steps, max_examples } => {
            let cfg = match config {
                Some(path) => RunConfig::from_file(path)?,
                None => bench::fisher_demo_config(0),
            };
            let report = bench::fisher_diagnostic(&cfg, steps, max_examples)?;
            println!(
                "after {} steps over {} examples: cosine(v_hat, diag F) = {:.4}, log-ratio mean {:.3}, std {:.3}",
                report.steps, report.examples, report.alignment.cosine, report.alignment.log_ratio_mean, report.alignment.log_ratio_std
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
