//! `tnorm-loss` command-line front end.
//!
//! Exit codes: 0 on success, 1 when a computation fails (or an oracle check
//! does not pass), 2 on usage errors including missing input files.

mod check;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tnorm_loss::memory::{
    self, emit_csv, estimate, run_sweep, BenchPath, CountingAllocator, SweepConfig, DEFAULT_BUDGET_BYTES,
};
use tnorm_loss::trainer::{self, TaskSpec, TrainConfig};
use tnorm_loss::{
    finite_diff_check, grad, io, logic_loss, sparse, ConstraintSet, DomainMode, Matrix, TNormKind,
};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator::system();

#[derive(Parser)]
#[command(name = "tnorm-loss", version, about = "T-norm constraint losses over prediction matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Logic loss of a prediction matrix.
    Loss(LossArgs),
    /// Gradient of the logic loss, optionally checked by finite differences.
    Grad(GradArgs),
    /// Random dense-vs-sparse equivalence check.
    Check(CheckArgs),
    /// Peak-memory sweep over constraint counts (CSV).
    Bench(BenchArgs),
    /// Analytic memory model (JSON).
    Estimate(EstimateArgs),
    /// Train a toy linear model with the logic loss (JSON report).
    TrainDemo(TrainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Godel,
    Lukasiewicz,
    Product,
}

impl From<KindArg> for TNormKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Godel => TNormKind::Godel,
            KindArg::Lukasiewicz => TNormKind::Lukasiewicz,
            KindArg::Product => TNormKind::Product,
        }
    }
}

#[derive(Args)]
struct ProblemArgs {
    /// DIMACS CNF clause file.
    #[arg(long)]
    constraints: PathBuf,
    /// Label map, one name per line.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_enum)]
    tnorm: KindArg,
}

#[derive(Args)]
struct LossArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Predictions as CSV or PMAT.
    #[arg(long)]
    pred: PathBuf,
    /// Write ∂L/∂P (unweighted) here in PMAT format.
    #[arg(long)]
    grad_out: Option<PathBuf>,
    /// Weight applied to the printed weighted loss.
    #[arg(long, default_value_t = TrainConfig::DEFAULT_WEIGHT)]
    weight: f64,
    /// Clamp predictions slightly outside [0, 1] instead of rejecting them.
    #[arg(long)]
    clamp: bool,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,
}

#[derive(Args)]
struct GradArgs {
    #[command(flatten)]
    loss: LossArgs,
    /// Compare against central finite differences and print the report.
    #[arg(long)]
    fd_check: bool,
    #[arg(long, default_value_t = grad::DEFAULT_STEP)]
    step: f64,
    #[arg(long, default_value_t = grad::DEFAULT_NONSMOOTH_MARGIN)]
    margin: f64,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    max_d: u64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    max_labels: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    max_constraints: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Dense,
    Sparse,
    Both,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = PathArg::Both)]
    path: PathArg,
    #[arg(long, value_enum, default_value_t = KindArg::Godel)]
    tnorm: KindArg,
    #[arg(long, default_value_t = memory::DEFAULT_BENCH_ROWS)]
    d: usize,
    #[arg(long, default_value_t = memory::DEFAULT_BENCH_LABELS)]
    labels_n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = memory::DEFAULT_CONSTRAINT_COUNTS)]
    constraint_counts: Vec<usize>,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    iters: u64,
    /// Dense points whose estimate exceeds this are reported as estimates.
    /// Defaults to 24 GiB, capped at half of the host's available memory.
    #[arg(long)]
    budget_bytes: Option<u128>,
    /// Fail instead of emitting estimates for over-budget dense points.
    #[arg(long)]
    no_estimate: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    d: u64,
    #[arg(long)]
    constraints_n: u64,
    #[arg(long)]
    labels_n: u64,
    #[arg(long, default_value_t = 4)]
    elem_bytes: u64,
    /// Sparse auxiliary factor k (1..=8).
    #[arg(long, default_value_t = memory::DEFAULT_SPARSE_AUX_FACTOR)]
    k: u64,
    /// Budget used for the dense crossover figure.
    #[arg(long, default_value_t = DEFAULT_BUDGET_BYTES)]
    budget_bytes: u128,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = TrainConfig::DEFAULT_WEIGHT)]
    weight: f64,
    /// Defaults to a third of --epochs.
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    labelled_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    unlabelled_frac: f64,
    /// Size of the pool the labelled and unlabelled fractions are taken from.
    #[arg(long, default_value_t = 2000)]
    pool: usize,
    #[arg(long, default_value_t = 1000)]
    eval_size: usize,
    #[arg(long, default_value_t = 12)]
    features: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON destination; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Distinguishes usage problems (exit 2) from computation failures (exit 1).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Usage(format!("no such file: {}", path.display())).into());
    }
    Ok(())
}

fn load_problem(p: &ProblemArgs) -> Result<ConstraintSet> {
    require_file(&p.labels)?;
    require_file(&p.constraints)?;
    let labels = io::read_text(&p.labels)?;
    let cnf = io::read_text(&p.constraints)?;
    ConstraintSet::from_texts(&labels, &cnf)
        .with_context(|| format!("loading {} / {}", p.labels.display(), p.constraints.display()))
}

fn load_predictions(path: &Path, clamp: bool) -> Result<Matrix<f64>> {
    require_file(path)?;
    let mode = if clamp { DomainMode::Clamp } else { DomainMode::Strict };
    let p = io::read_predictions(path)?.into_unit_interval(mode)?;
    Ok(p)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn write_output(dest: Option<&Path>, text: &str) -> Result<()> {
    match dest {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn loss_lines(args: &LossArgs, want_grad: bool) -> Result<(String, Option<Matrix<f32>>)> {
    let cs = load_problem(&args.problem)?;
    let p: Matrix<f32> = load_predictions(&args.pred, args.clamp)?.cast();
    let kind = args.problem.tnorm.into();
    let rows_per_task = p.rows().div_ceil(args.threads as usize).max(1);
    let (loss, grad) = pool(args.threads as usize)?.install(|| -> Result<_> {
        let goal = sparse::sparse_goal_par(&cs, &p, kind, rows_per_task)?;
        let grad = if want_grad {
            Some(grad::grad_matrix_par(&cs, &p, kind, rows_per_task)?)
        } else {
            None
        };
        Ok((logic_loss(&goal), grad))
    })?;
    let weighted = (args.weight as f32) * loss;
    Ok((format!("loss: {loss}\nweighted_loss: {weighted}\n"), grad))
}

fn cmd_loss(args: &LossArgs) -> Result<()> {
    let (text, grad) = loss_lines(args, args.grad_out.is_some())?;
    if let (Some(path), Some(g)) = (&args.grad_out, grad) {
        io::write_pmat(path, &g)?;
    }
    write_output(None, &text)
}

fn cmd_grad(args: &GradArgs) -> Result<()> {
    if args.fd_check {
        let cs = load_problem(&args.loss.problem)?;
        let p = load_predictions(&args.loss.pred, args.loss.clamp)?;
        let report = finite_diff_check(&cs, &p, args.loss.problem.tnorm.into(), args.step, args.margin)?;
        return write_output(None, &(serde_json::to_string(&report)? + "\n"));
    }
    let (text, grad) = loss_lines(&args.loss, true)?;
    let grad = grad.expect("requested");
    match &args.loss.grad_out {
        Some(path) => {
            io::write_pmat(path, &grad)?;
            write_output(None, &text)
        }
        None => write_output(None, &(text + &io::write_csv_matrix(&grad))),
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let paths = match args.path {
        PathArg::Dense => vec![BenchPath::Dense],
        PathArg::Sparse => vec![BenchPath::Sparse],
        PathArg::Both => vec![BenchPath::Dense, BenchPath::Sparse],
    };
    if args.constraint_counts.is_empty() || args.constraint_counts.contains(&0) {
        return Err(Usage("--constraint-counts must list positive integers".into()).into());
    }
    let config = SweepConfig {
        constraint_counts: args.constraint_counts.clone(),
        rows: args.d,
        n_labels: args.labels_n,
        kind: args.tnorm.into(),
        paths,
        iterations: args.iters as usize,
        budget_bytes: args
            .budget_bytes
            .unwrap_or_else(|| memory::effective_budget(DEFAULT_BUDGET_BYTES)),
        estimate_fallback: !args.no_estimate,
        seed: args.seed,
        threads: args.threads as usize,
    };
    let records = run_sweep(&config, &ALLOC)?;
    write_output(args.out.as_deref(), &emit_csv(&records)?)
}

#[derive(Serialize)]
struct EstimateReport {
    #[serde(flatten)]
    model: memory::MemoryModel,
    budget_bytes: u128,
    dense_crossover_constraints: u64,
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let model = estimate(args.d, args.constraints_n, args.labels_n, args.elem_bytes, args.k)?;
    let crossover = memory::dense_crossover(args.d, args.labels_n, args.elem_bytes, args.budget_bytes)?;
    let report = EstimateReport {
        model,
        budget_bytes: args.budget_bytes,
        dense_crossover_constraints: crossover,
    };
    write_output(None, &(serde_json::to_string_pretty(&report)? + "\n"))
}

#[derive(Serialize)]
struct TrainReport {
    config: TrainConfig,
    task: TaskSpec,
    report: trainer::EvalReport,
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cs = load_problem(&args.problem)?;
    for (name, f) in [("--labelled-frac", args.labelled_frac), ("--unlabelled-frac", args.unlabelled_frac)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Usage(format!("{name} must lie in [0, 1]")).into());
        }
    }
    let spec = TaskSpec {
        n_features: args.features,
        labelled: (args.pool as f64 * args.labelled_frac).round() as usize,
        unlabelled: (args.pool as f64 * args.unlabelled_frac).round() as usize,
        eval: args.eval_size,
        noise: args.noise,
    };
    let config = TrainConfig {
        tnorm: args.problem.tnorm.into(),
        weight: args.weight,
        warmup_epochs: args.warmup_epochs.unwrap_or(args.epochs / 3),
        epochs: args.epochs,
        learning_rate: args.lr,
        threshold: args.threshold,
        seed: args.seed,
        use_unlabelled: spec.unlabelled > 0,
    };
    if let Err(e) = config.validate() {
        return Err(Usage(e.to_string()).into());
    }
    let task = trainer::make_task(args.seed, &spec, &cs)?;
    let (_, report) = trainer::train(&task, &config)?;
    let out = TrainReport {
        config,
        task: spec,
        report,
    };
    write_output(args.report.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Loss(a) => cmd_loss(&a),
        Command::Grad(a) => cmd_grad(&a),
        Command::Check(a) => {
            let report = check::run_check(a.trials, a.max_d, a.max_labels, a.max_constraints, a.seed)?;
            write_output(None, &(serde_json::to_string_pretty(&report)? + "\n"))?;
            if !report.pass {
                bail!("dense and sparse paths disagree beyond tolerance");
            }
            Ok(())
        }
        Command::Bench(a) => cmd_bench(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::TrainDemo(a) => cmd_train(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
