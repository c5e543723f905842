//! The `polk` command line: `gen`, `train`, `eval` and `diag`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O or parse
//! error, 3 capacity error, 4 diagnostic failure.
//!
//! Any subcommand accepts `--config <file>` with `key=value` lines (keys are
//! long flag names without dashes); flags given on the command line win.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{gen_multidist, load_dense_csv, load_sparse_text, write_dense_csv, Dataset, MultidistSpec};
use crate::diagnostics::{bias_check, norm_bound_check, summarize, variance_estimate, TheoryProbe};
use crate::error::{PolkError, Result};
use crate::kernel::KernelSpec;
use crate::komp::PruneStrategy;
use crate::loss::{error_rate, LossKind};
use crate::metrics::metrics_csv;
use crate::model::SavedModel;
use crate::polk::{train, BudgetRule, StepSchedule, TrainConfig, TrainOutput};

#[derive(Debug, Parser)]
#[command(name = "polk", version, about = "Parsimonious online learning with kernels")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the multidist Gaussian-mixture benchmark as train.csv / test.csv.
    Gen(GenArgs),
    /// Train a sparse kernel classifier on a stream.
    Train(TrainArgs),
    /// Report the error rate of a saved model on a dataset.
    Eval(EvalArgs),
    /// Train with bound checks on every step; exit 4 if any check fails.
    Diag(DiagArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 5000)]
    train: usize,
    #[arg(long, default_value_t = 2500)]
    test: usize,
    #[arg(long, default_value_t = 3)]
    modes: usize,
    #[arg(long, default_value_t = 0.2)]
    within_var: f64,
    #[arg(long, default_value_t = 1.0)]
    scatter_var: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Task {
    /// Multi-class kernel SVM (hinge loss).
    Mksvm,
    /// Multi-class kernel logistic regression.
    Mlogistic,
    /// Binary kernel logistic regression, labels {0, 1}.
    Blogistic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelFamily {
    Gaussian,
    Polynomial,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Schedule {
    Constant,
    Diminishing,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Auto,
    Csv,
    Sparse,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Strategy {
    Downdate,
    Exact,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset format; `auto` picks csv for `.csv` files and sparse otherwise.
    #[arg(long, value_enum, default_value_t = Format::Auto)]
    format: Format,
    /// Feature dimension (required for sparse files).
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    task: Task,
    #[arg(long)]
    data: PathBuf,
    /// Evaluation set for the metrics; defaults to the training data.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[command(flatten)]
    data_fmt: DataArgs,
    #[arg(long, value_enum, default_value_t = KernelFamily::Gaussian)]
    kernel: KernelFamily,
    /// Gaussian bandwidth sigma^2.
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    /// Polynomial offset b.
    #[arg(long, default_value_t = 1.0)]
    offset: f64,
    /// Polynomial degree c.
    #[arg(long, default_value_t = 2)]
    degree: u32,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, value_enum, default_value_t = Schedule::Constant)]
    schedule: Schedule,
    /// matchedK=<K> | matched-dim | fixed=<eps> | dense
    #[arg(long, default_value = "matchedK=0.04")]
    budget: String,
    #[arg(long, default_value_t = 1e-6)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    passes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reshuffle the stream every pass (seeded).
    #[arg(long)]
    shuffle: bool,
    #[arg(long, default_value_t = 10)]
    checkpoint_every: usize,
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long)]
    max_model_order: Option<usize>,
    #[arg(long, value_enum, default_value_t = Strategy::Downdate)]
    prune_strategy: Strategy,
    /// Append an elapsed_s column to the metrics.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    data_fmt: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Per-step diagnostics CSV.
    #[arg(long)]
    probe: Option<PathBuf>,
}

/// Parse a `--budget` value.
pub fn parse_budget(s: &str) -> Result<BudgetRule> {
    let bad = || PolkError::Usage(format!("bad budget '{s}': want matchedK=<K>, matched-dim, fixed=<eps> or dense"));
    match s {
        "dense" => Ok(BudgetRule::Dense),
        "matched-dim" => Ok(BudgetRule::MatchedDiminishing),
        _ => {
            let (key, val) = s.split_once('=').ok_or_else(bad)?;
            let v: f64 = val.parse().map_err(|_| bad())?;
            match key {
                "matchedK" => Ok(BudgetRule::MatchedConstant(v)),
                "fixed" => Ok(BudgetRule::Fixed(v)),
                _ => Err(bad()),
            }
        }
    }
}

fn load_data(path: &Path, fmt: &DataArgs) -> Result<Dataset> {
    let format = match fmt.format {
        Format::Auto if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => Format::Csv,
        Format::Auto => Format::Sparse,
        other => other,
    };
    match format {
        Format::Csv => load_dense_csv(path),
        _ => {
            let dim = fmt
                .dim
                .ok_or_else(|| PolkError::Usage(format!("--dim is required for sparse file {}", path.display())))?;
            load_sparse_text(path, dim)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| PolkError::io(path, e))
}

fn train_config(args: &TrainArgs, data: &Dataset) -> Result<TrainConfig> {
    let kernel = match args.kernel {
        KernelFamily::Gaussian => KernelSpec::gaussian(args.bandwidth)?,
        KernelFamily::Polynomial => KernelSpec::polynomial(args.offset, args.degree)?,
    };
    let classes = data.num_classes().max(2);
    let loss = match args.task {
        Task::Mksvm => LossKind::multi_hinge(classes)?,
        Task::Mlogistic => LossKind::multi_logistic(classes)?,
        Task::Blogistic => LossKind::BinaryLogistic,
    };
    let mut cfg = TrainConfig::new(kernel, loss);
    cfg.lambda = args.lambda;
    cfg.schedule = match args.schedule {
        Schedule::Constant => StepSchedule::Constant(args.eta),
        Schedule::Diminishing => StepSchedule::Diminishing(args.eta),
    };
    cfg.budget = parse_budget(&args.budget)?;
    cfg.batch_size = args.batch;
    cfg.max_model_order = args.max_model_order;
    cfg.seed = args.seed;
    cfg.checkpoint_every = args.checkpoint_every;
    cfg.passes = args.passes;
    cfg.shuffle = args.shuffle;
    cfg.timing = args.timing;
    cfg.prune_strategy = match args.prune_strategy {
        Strategy::Downdate => PruneStrategy::Downdate,
        Strategy::Exact => PruneStrategy::Exact,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run_training(args: &TrainArgs) -> Result<(TrainConfig, TrainOutput)> {
    let data = load_data(&args.data, &args.data_fmt)?;
    let eval = match &args.eval {
        Some(p) => Some(load_data(p, &args.data_fmt)?),
        None => None,
    };
    let cfg = train_config(args, &data)?;
    let out = train(&cfg, &data, Some(eval.as_ref().unwrap_or(&data)))?;
    if let Some(p) = &args.model_out {
        SavedModel {
            model: out.model.clone(),
            loss: cfg.loss,
            lambda: cfg.lambda,
        }
        .save(p)?;
    }
    if let Some(p) = &args.metrics_out {
        write_file(p, &metrics_csv(&out.metrics, cfg.timing))?;
    }
    Ok((cfg, out))
}

fn summary_line(out: &TrainOutput) -> String {
    match out.final_metrics() {
        Some(m) => format!(
            "risk={:.6} error={:.3}% order={:.2}",
            m.trailing_risk, m.trailing_error_pct, m.trailing_model_order
        ),
        None => "risk=NaN error=NaN% order=NaN".into(),
    }
}

fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let spec = MultidistSpec {
        num_classes: args.classes,
        modes_per_class: args.modes,
        within_mode_var: args.within_var,
        mean_scatter_var: args.scatter_var,
        n_train: args.train,
        n_test: args.test,
        seed: args.seed,
    };
    let (train_set, test_set) = gen_multidist(&spec)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| PolkError::io(&args.out_dir, e))?;
    write_dense_csv(&train_set, args.out_dir.join("train.csv"))?;
    write_dense_csv(&test_set, args.out_dir.join("test.csv"))?;
    writeln!(
        out,
        "multidist classes={} modes={} within_var={} scatter_var={} train={} test={} seed={} out_dir={}",
        spec.num_classes,
        spec.modes_per_class,
        spec.within_mode_var,
        spec.mean_scatter_var,
        spec.n_train,
        spec.n_test,
        spec.seed,
        args.out_dir.display()
    )
    .ok();
    Ok(())
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let (_, result) = run_training(args)?;
    writeln!(out, "{}", summary_line(&result)).ok();
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let saved = SavedModel::load(&args.model)?;
    let data = load_data(&args.data, &args.data_fmt)?;
    if data.dim() != saved.model.dim() {
        return Err(PolkError::Usage(format!(
            "data has dimension {}, model expects {}",
            data.dim(),
            saved.model.dim()
        )));
    }
    for (_, y) in data.iter() {
        saved.loss.check_label(y)?;
    }
    let err = error_rate(&saved.model, &saved.loss, &data);
    writeln!(out, "error={err:.3}% n={} order={}", data.len(), saved.model.order()).ok();
    Ok(())
}

/// Per-step probe records as CSV.
pub fn probe_csv(probe: &TheoryProbe) -> String {
    let mut s = String::from("t,eta,epsilon,bias,bias_bound,bias_ok,iterate_norm,norm_bound,norm_ok,grad_norm_sq\n");
    for r in probe.records() {
        let norm_ok = match norm_bound_check(r, probe) {
            crate::diagnostics::Check::NotApplicable => "na",
            c if c.failed() => "fail",
            _ => "pass",
        };
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.eta,
            r.epsilon,
            r.bias,
            r.epsilon / r.eta,
            if bias_check(r).failed() { "fail" } else { "pass" },
            r.iterate_norm,
            probe.norm_bound(),
            norm_ok,
            r.grad_norm_sq
        )
        .unwrap();
    }
    s
}

/// Summarize the probe and turn any failed check into a diagnostic error.
pub fn check_probe(probe: &TheoryProbe, out: &mut dyn Write) -> Result<()> {
    let s = summarize(probe);
    let sigma = variance_estimate(probe.records()).unwrap_or(f64::NAN);
    writeln!(
        out,
        "diag steps={} bias_failures={} norm_failures={}{} sigma2={sigma:.6}",
        s.steps,
        s.bias_failures,
        s.norm_failures,
        if s.norm_checks_applicable { "" } else { " (norm check n/a: lambda=0)" },
    )
    .ok();
    if s.passed() {
        Ok(())
    } else {
        Err(PolkError::Diagnostic(format!(
            "{} bias and {} norm-bound violations over {} steps",
            s.bias_failures, s.norm_failures, s.steps
        )))
    }
}

fn cmd_diag(args: &DiagArgs, out: &mut dyn Write) -> Result<()> {
    let (_, result) = run_training(&args.train)?;
    if let Some(p) = &args.probe {
        write_file(p, &probe_csv(&result.probe))?;
    }
    writeln!(out, "{}", summary_line(&result)).ok();
    check_probe(&result.probe, out)
}

/// Expand `--config <file>` into flags placed ahead of the explicit ones.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or_else(|| PolkError::Usage("--config needs a path".into()))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = fs::read_to_string(&path).map_err(|e| PolkError::io(&path, e))?;
    let mut from_file = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| PolkError::parse(&path, i + 1, format!("expected key=value, got '{line}'")))?;
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        match v {
            "true" => from_file.push(format!("--{k}")),
            "false" => {}
            _ => {
                from_file.push(format!("--{k}"));
                from_file.push(v.to_string());
            }
        }
    }
    // program name and subcommand stay in front
    let split = rest.len().min(2);
    let mut merged: Vec<String> = rest[..split].to_vec();
    merged.extend(from_file);
    merged.extend_from_slice(&rest[split..]);
    Ok(merged)
}

/// Run the CLI on `args` (including the program name); returns the exit code.
pub fn run(args: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            if code == 0 {
                write!(out, "{}", e.render()).ok();
            } else {
                write!(err, "{}", e.render()).ok();
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Diag(a) => cmd_diag(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            e.exit_code()
        }
    }
}
