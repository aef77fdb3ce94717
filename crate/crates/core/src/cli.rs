//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::basis::SvdMode;
use crate::dataset::{load_dense, split, DataFormat, LabeledDataset, LoadOptions, SplitSpec, Task};
use crate::error::{Error, Result};
use crate::network::{deserialize, serialize, PolyNetwork, SCHEMA_VERSION};
use crate::oracle::{monomial_matrix, span_rank};
use crate::output::{decide, LossKind};
use crate::trainer::{default_lambda_grid, evaluate, train, BuildMode, StopRule, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "basis-learner",
    version,
    about = "Train and run deep polynomial networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write the model file.
    Train(TrainArgs),
    /// Print one decision and score line per input row.
    Predict(PredictArgs),
    /// Print error, mean loss and (for multiclass) the confusion matrix.
    Evaluate(EvaluateArgs),
    /// Print an architecture summary of a model file.
    Inspect(InspectArgs),
    /// Rank of the monomial matrix of a dataset (debugging aid).
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Csv,
    Sparse,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Regression,
    Binary,
    Multiclass,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Exact,
    Width,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Squared,
    Hinge,
    Logistic,
    McHinge,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SvdArg {
    Exact,
    Randomized,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Data file: CSV with the label first, or sparse `label idx:val ...`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Skip the first CSV line.
    #[arg(long)]
    pub header: bool,
    /// Feature count for sparse files.
    #[arg(long)]
    pub dims: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Task type; inferred from the labels when omitted.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Class count for `--task multiclass`; defaults to the largest label + 1.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    /// Nodes per layer in width mode.
    #[arg(long = "width", default_value_t = 50)]
    pub gamma: usize,
    /// Maximum network depth, output layer included.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Candidates selected per round in width mode; defaults to min(50, width).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Defaults to squared for regression, hinge for binary, mc-hinge for multiclass.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Regularization grid, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lambda: Vec<f64>,
    /// Hold out the last n rows for validation.
    #[arg(long, default_value_t = 0)]
    pub valid_count: usize,
    /// Depths without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 2)]
    pub patience: usize,
    /// Stop once the training objective reaches this value.
    #[arg(long, allow_negative_numbers = true)]
    pub stop_train_loss: Option<f64>,
    /// Residual tolerance for accepting a node.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum, default_value = "exact")]
    pub svd: SvdArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Passes over the data for non-squared losses.
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Trace log to write.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write `secs=0` in the trace so that runs can be compared byte for byte.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Write predictions here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub degree: usize,
}

/// Process exit status for an error: 2 for invalid configuration, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn load_options(data: &DataArgs, task: Option<Task>) -> LoadOptions {
    LoadOptions {
        format: match data.format {
            FormatArg::Csv => DataFormat::Csv,
            FormatArg::Sparse => DataFormat::Sparse,
        },
        header: data.header,
        dims: data.dims,
        task,
    }
}

fn read_model(path: &PathBuf) -> Result<PolyNetwork> {
    deserialize(&fs::read(path)?)
}

/// Loads rows for a trained model; labels are checked against its task only
/// when `labeled` is set.
fn load_for_model(net: &PolyNetwork, data: &DataArgs, labeled: bool) -> Result<LabeledDataset> {
    let task = if labeled {
        net.task()
    } else {
        Task::Regression
    };
    let mut opts = load_options(data, Some(task));
    if opts.dims.is_none() && matches!(opts.format, DataFormat::Sparse) {
        opts.dims = Some(net.input_dim());
    }
    let ds = load_dense(&data.data, &opts)?;
    if ds.dims() != net.input_dim() {
        return Err(Error::Input(format!(
            "data has {} features, model expects {}",
            ds.dims(),
            net.input_dim()
        )));
    }
    Ok(ds)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(args) => run_train(args, out),
        Command::Predict(args) => run_predict(args, out),
        Command::Evaluate(args) => run_evaluate(args, out),
        Command::Inspect(args) => run_inspect(args, out),
        Command::Oracle(args) => run_oracle(args, out),
    }
}

fn resolve_task(args: &TrainArgs) -> Result<Option<Task>> {
    Ok(match (args.task, args.classes) {
        (None, None) => None,
        (Some(TaskArg::Regression), None) => Some(Task::Regression),
        (Some(TaskArg::Binary), None) => Some(Task::Binary),
        (Some(TaskArg::Multiclass), Some(k)) | (None, Some(k)) => {
            Some(Task::Multiclass { classes: k })
        }
        (Some(TaskArg::Multiclass), None) => None,
        (Some(t), Some(_)) => {
            return Err(Error::Config(format!(
                "--classes does not apply to task {t:?}"
            )))
        }
    })
}

fn run_train(args: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let task_override = resolve_task(&args)?;
    let ds = load_dense(&args.data.data, &load_options(&args.data, task_override))?;
    if matches!(args.task, Some(TaskArg::Multiclass))
        && !matches!(ds.task(), Task::Multiclass { .. })
    {
        return Err(Error::Config(
            "--task multiclass needs nonnegative integer labels".into(),
        ));
    }
    let task = ds.task();
    let loss = match (args.loss, task) {
        (Some(LossArg::Squared), _) | (None, Task::Regression) => LossKind::Squared,
        (Some(LossArg::Hinge), _) | (None, Task::Binary) => LossKind::Hinge,
        (Some(LossArg::Logistic), _) => LossKind::Logistic,
        (Some(LossArg::McHinge), Task::Multiclass { classes })
        | (None, Task::Multiclass { classes }) => LossKind::MulticlassHinge { classes },
        (Some(LossArg::McHinge), t) => {
            return Err(Error::Config(format!(
                "mc-hinge loss needs a multiclass task, data is {t:?}"
            )))
        }
    };
    let (train_ds, valid_ds) = split(
        &ds,
        SplitSpec {
            validation_count: args.valid_count,
        },
    )
    .map_err(|e| Error::Config(e.to_string()))?;

    let config = TrainConfig {
        mode: match args.mode {
            ModeArg::Exact => BuildMode::Exact,
            ModeArg::Width => BuildMode::Width,
        },
        gamma: args.gamma,
        max_depth: args.depth,
        batch: args.batch.unwrap_or(args.gamma.clamp(1, 50)),
        tol: args.tol,
        loss,
        lambda_grid: if args.lambda.is_empty() {
            default_lambda_grid()
        } else {
            args.lambda.clone()
        },
        svd: match args.svd {
            SvdArg::Exact => SvdMode::Exact,
            SvdArg::Randomized => SvdMode::Randomized { seed: args.seed },
        },
        stop: StopRule {
            validation_patience: args.patience,
            error_threshold: args.stop_train_loss,
        },
        seed: args.seed,
        epochs: args.epochs,
    };
    let (net, trace) = train(&train_ds, &valid_ds, &config)?;
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    fs::write(&args.out, serialize(&net))?;
    if let Some(path) = &args.trace {
        fs::write(path, trace.to_log(!args.no_timing))?;
    }

    let train_metrics = evaluate(&net, &train_ds)?;
    let mut summary = format!(
        "depth={} nodes={} lambda={} termination={} train_err={}",
        net.depth(),
        net.total_nodes(),
        trace.best_lambda,
        trace.termination.name(),
        train_metrics.error
    );
    if loss == LossKind::Squared {
        summary.push_str(&format!(" train_mse={}", train_metrics.mean_loss));
    }
    if !valid_ds.is_empty() {
        summary.push_str(&format!(" valid_err={}", evaluate(&net, &valid_ds)?.error));
    }
    writeln!(out, "{summary}")?;
    Ok(())
}

fn run_predict(args: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let net = read_model(&args.model)?;
    let ds = load_for_model(&net, &args.data, false)?;
    let mut text = String::new();
    for i in 0..ds.rows() {
        let scores = net.predict(&ds.row(i))?;
        let mut line = decide(net.task(), &scores).to_string();
        if net.task().is_classification() {
            for s in &scores {
                line.push(' ');
                line.push_str(&s.to_string());
            }
        }
        text.push_str(&line);
        text.push('\n');
    }
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let net = read_model(&args.model)?;
    let ds = load_for_model(&net, &args.data, true)?;
    let m = evaluate(&net, &ds)?;
    let label = if net.task().is_classification() {
        "error_rate"
    } else {
        "mse"
    };
    writeln!(out, "rows: {}", ds.rows())?;
    writeln!(out, "{label}: {}", m.error)?;
    writeln!(out, "mean_loss: {}", m.mean_loss)?;
    if let Some(c) = m.confusion {
        writeln!(out, "confusion (rows = true class):")?;
        for row in c {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(out, "  {}", cells.join(" "))?;
        }
    }
    Ok(())
}

fn run_inspect(args: InspectArgs, out: &mut dyn Write) -> Result<()> {
    let net = read_model(&args.model)?;
    let widths: Vec<String> = net.layer_widths().iter().map(usize::to_string).collect();
    writeln!(out, "schema: {SCHEMA_VERSION}")?;
    writeln!(out, "input_dim: {}", net.input_dim())?;
    writeln!(out, "task: {:?}", net.task())?;
    writeln!(out, "layer_widths: {}", widths.join(" "))?;
    writeln!(out, "product_layers: {}", net.product_layers().len())?;
    writeln!(out, "total_nodes: {}", net.total_nodes())?;
    writeln!(out, "depth: {}", net.depth())?;
    writeln!(out, "degree_bound: {}", net.degree_bound())?;
    writeln!(out, "arithmetic_cost: {}", net.arithmetic_cost())?;
    writeln!(out, "loss: {}", net.head().loss.name())?;
    writeln!(out, "lambda: {}", net.head().lambda)?;
    Ok(())
}

fn run_oracle(args: OracleArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dense(
        &args.data.data,
        &load_options(&args.data, Some(Task::Regression)),
    )?;
    let m = monomial_matrix(ds.features(), args.degree)?;
    writeln!(out, "rows: {}", m.rows())?;
    writeln!(out, "monomials: {}", m.cols())?;
    writeln!(out, "rank: {}", span_rank(&m, None)?)?;
    Ok(())
}
