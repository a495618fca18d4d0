use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mvrpstw::harness::{
    read_solutions, run_benchmark, run_robustness, run_sensitivity, solution_rows, solve_instances, validate_solutions,
    write_curve_csv, write_solutions, HarnessError, MaamMode, MaamSolver, Method, RobustnessSpec, SolveOptions,
    SweepAxis,
};
use mvrpstw::instance_gen::{generate, read_instances, write_instances, GenConfig};
use mvrpstw::maam::{ModelConfig, ModelParams};
use mvrpstw::trainer::{train_with_progress, TrainConfig};

#[derive(Parser)]
#[command(
    name = "mvrpstw",
    version,
    about = "Routing with soft time windows: generate, solve, train, evaluate"
)]
struct Cli {
    /// Seed for instance generation and every stochastic solver.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output file; standard output when omitted (required for `train`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write seeded instances, one JSON object per line.
    Gen {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Solve an instance file and write one CSV row per instance.
    Solve {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        method: String,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train the attention model; writes the best checkpoint to --out.
    Train(TrainArgs),
    /// Run several methods on one generated instance set.
    Bench {
        #[arg(long)]
        preset: String,
        /// Comma-separated: ga1, ga2, ils1, ils2, oracle, nn, maam.
        #[arg(long, value_delimiter = ',', default_value = "nn,ils1")]
        methods: Vec<String>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train one model per value of a hyperparameter; writes eval-cost curves.
    Sweep {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate a checkpoint on fewer customers and rescaled capacities.
    Robustness {
        #[arg(long)]
        ckpt: PathBuf,
        /// Preset the checkpoint was trained on.
        #[arg(long)]
        preset: String,
        #[arg(long, value_delimiter = ',')]
        counts: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        factors: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "nn")]
        baselines: Vec<String>,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Re-check a solution CSV against its instance file.
    Validate {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        solutions: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint for method maam.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
    mode: ModeArg,
    /// Rollouts per instance in sample mode; the best is kept.
    #[arg(long, default_value_t = 16)]
    samples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Greedy,
    Sample,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Dim,
    Layers,
    Heads,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 2000)]
    instances_per_epoch: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    eval_size: usize,
    /// Multiply the tanh-bounded logits by this constant.
    #[arg(long)]
    logit_clip: Option<f64>,
    /// Rescale gradients to at most this global norm.
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Per-epoch log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig, HarnessError> {
        let mut cfg = TrainConfig::desk(&self.preset, seed)?;
        cfg.epochs = self.epochs;
        cfg.instances_per_epoch = self.instances_per_epoch;
        cfg.batch_size = self.batch;
        cfg.learning_rate = self.lr;
        cfg.eval_set_size = self.eval_size;
        cfg.grad_clip = self.grad_clip;
        cfg.model = ModelConfig::new(
            self.dim,
            self.layers,
            self.heads,
            cfg.gen_config.fleet_size,
            cfg.gen_config.window_horizon,
        );
        cfg.model.logit_clip = self.logit_clip;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn io_error(path: &Path, e: io::Error) -> HarnessError {
    HarnessError::Config(format!("{}: {e}", path.display()))
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>, HarnessError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load_solver(ckpt: Option<&Path>, mode: ModeArg, samples: usize) -> Result<Option<MaamSolver>, HarnessError> {
    let Some(path) = ckpt else { return Ok(None) };
    let params = ModelParams::load(path)?;
    let mode = match mode {
        ModeArg::Greedy => MaamMode::Greedy,
        ModeArg::Sample if samples == 0 => {
            return Err(HarnessError::InvalidArgument("--samples must be positive".into()))
        }
        ModeArg::Sample => MaamMode::Sample(samples),
    };
    Ok(Some(MaamSolver { params, mode }))
}

fn methods(names: &[String]) -> Result<Vec<Method>, HarnessError> {
    names.iter().map(|n| n.trim().parse()).collect()
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let seed = cli.seed;
    match &cli.command {
        Command::Gen { preset, count } => {
            let instances = generate(&GenConfig::preset(preset)?.with_seed(seed), *count)?;
            match &cli.out {
                Some(p) => write_instances(p, &instances).map_err(|e| HarnessError::Config(e.to_string()))?,
                None => {
                    let mut w = output(&None)?;
                    for inst in &instances {
                        writeln!(w, "{}", mvrpstw::instance_gen::instance_to_line(inst))
                            .map_err(|e| HarnessError::Config(e.to_string()))?;
                    }
                }
            }
        }
        Command::Solve {
            instances,
            method,
            model,
        } => {
            let insts = read_instances(instances).map_err(|e| HarnessError::Config(e.to_string()))?;
            let method: Method = method.parse()?;
            let opts = SolveOptions {
                maam: load_solver(model.ckpt.as_deref(), model.mode, model.samples)?,
                jobs: cli.jobs,
            };
            let records = solve_instances(method, &insts, seed, &opts)?;
            write_solutions(&solution_rows(method, &records), output(&cli.out)?)?;
        }
        Command::Train(args) => {
            let cfg = args.config(seed)?;
            let ckpt = cli
                .out
                .as_ref()
                .ok_or_else(|| HarnessError::InvalidArgument("train needs --out for the checkpoint".into()))?;
            let outcome = train_with_progress(&cfg, |r| {
                eprintln!(
                    "epoch {:>3}  train {:.3}  eval {:.3}  baseline replaced: {}",
                    r.epoch, r.train_cost_mean, r.eval_cost_mean, r.baseline_replaced
                )
            })?;
            outcome.best.save(ckpt)?;
            if let Some(log) = &args.log {
                let f = File::create(log).map_err(|e| io_error(log, e))?;
                outcome.log.write_csv(BufWriter::new(f))?;
            }
        }
        Command::Bench {
            preset,
            methods: names,
            count,
            model,
        } => {
            let opts = SolveOptions {
                maam: load_solver(model.ckpt.as_deref(), model.mode, model.samples)?,
                jobs: cli.jobs,
            };
            let report = run_benchmark(&methods(names)?, preset, *count, seed, &opts)?;
            report.write_csv(output(&cli.out)?)?;
        }
        Command::Sweep { axis, values, train } => {
            let axis = match axis {
                AxisArg::Dim => SweepAxis::Dim,
                AxisArg::Layers => SweepAxis::Layers,
                AxisArg::Heads => SweepAxis::Heads,
            };
            let points = run_sensitivity(axis, values, &train.config(seed)?)?;
            write_curve_csv(&points, output(&cli.out)?)?;
        }
        Command::Robustness {
            ckpt,
            preset,
            counts,
            factors,
            baselines,
            count,
        } => {
            let spec = RobustnessSpec {
                base_preset: preset.clone(),
                customer_counts: counts.clone(),
                capacity_factors: factors.clone(),
                baselines: methods(baselines)?,
                count: *count,
                seed,
            };
            let opts = SolveOptions {
                maam: load_solver(Some(ckpt), ModeArg::Greedy, 1)?,
                jobs: cli.jobs,
            };
            run_robustness(&spec, &opts)?.write_csv(output(&cli.out)?)?;
        }
        Command::Validate { instances, solutions } => {
            let insts = read_instances(instances).map_err(|e| HarnessError::Config(e.to_string()))?;
            let f = File::open(solutions).map_err(|e| io_error(solutions, e))?;
            let rows = read_solutions(f)?;
            validate_solutions(&insts, &rows)?;
            println!("{} solutions valid", rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
