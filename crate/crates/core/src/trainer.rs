//! The layer-by-layer training loop.
//!
//! At every depth `t` a head is fit for each `lambda` in the grid over all
//! nodes built so far and scored on the validation set. The best head seen at
//! any depth is kept. Only after the stopping rules have been checked is the
//! next layer constructed.

use std::fmt::Write as _;
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{
    build_basis1_exact, build_basis1_width, build_basis_t_exact, build_basis_t_width,
    default_tolerance, lift_input, BasisState, LayerNodes, ProductNode, SvdMode,
};
use crate::dataset::{target_matrix, LabeledDataset, Task};
use crate::error::{input, Error, Result};
use crate::linalg::DenseMatrix;
use crate::network::{OutputHead, PolyNetwork};
use crate::output::{
    fit_head, loss_value, prediction_error, validation_error, FitResult, LossKind, OptimizerConfig,
    SquaredSolver,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    Exact,
    Width,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Stop after this many consecutive depths without a validation improvement; 0 disables.
    pub validation_patience: usize,
    /// Stop once the training objective is at or below this value.
    pub error_threshold: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            validation_patience: 2,
            error_threshold: None,
        }
    }
}

/// `10^-7, 10^-6.5, ..., 10^1`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=16)
        .map(|i| 10f64.powf(-7.0 + 0.5 * f64::from(i)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: BuildMode,
    /// Per-layer width in width mode.
    pub gamma: usize,
    /// Network depth cap, output layer included.
    pub max_depth: Option<usize>,
    pub batch: usize,
    /// Residual tolerance; `1e-8 * sqrt(m)` when unset.
    pub tol: Option<f64>,
    pub loss: LossKind,
    pub lambda_grid: Vec<f64>,
    /// First-layer SVD in width mode. Exact mode always uses the exact SVD.
    pub svd: SvdMode,
    pub stop: StopRule,
    pub seed: u64,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: BuildMode::Exact,
            gamma: 50,
            max_depth: None,
            batch: 50,
            tol: None,
            loss: LossKind::Squared,
            lambda_grid: default_lambda_grid(),
            svd: SvdMode::Exact,
            stop: StopRule::default(),
            seed: 0,
            epochs: OptimizerConfig::default().epochs,
        }
    }
}

impl TrainConfig {
    fn validate(&self, task: Task, has_validation: bool) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.loss
            .check_task(task)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.lambda_grid.is_empty() {
            return bad("lambda grid is empty".into());
        }
        if let Some(l) = self
            .lambda_grid
            .iter()
            .find(|l| !(**l >= 0.0 && l.is_finite()))
        {
            return bad(format!("lambda {l} is not a nonnegative real"));
        }
        if let Some(d) = self.max_depth {
            if d < 2 {
                return bad(format!("depth cap {d} is below 2"));
            }
        }
        if let Some(t) = self.tol {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("tolerance {t} must be positive"));
            }
        }
        if let Some(e) = self.stop.error_threshold {
            if !e.is_finite() {
                return bad(format!("error threshold {e} is not finite"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.mode == BuildMode::Width {
            if self.gamma == 0 {
                return bad("width must be at least 1".into());
            }
            if self.batch == 0 || self.batch > self.gamma {
                return bad(format!(
                    "batch {} must be in 1..={}",
                    self.batch, self.gamma
                ));
            }
            if !has_validation && self.max_depth.is_none() && self.stop.error_threshold.is_none() {
                return bad(
                    "width mode without a validation set needs a depth cap or an error threshold"
                        .into(),
                );
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ValidationStop,
    EmptyLayer,
    DepthCap,
    ErrorThreshold,
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::ValidationStop => "validation_stop",
            Termination::EmptyLayer => "empty_layer",
            Termination::DepthCap => "depth_cap",
            Termination::ErrorThreshold => "error_threshold",
        }
    }
}

/// One line of the trace: the best head at network depth `depth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub depth: usize,
    /// Width of the newest hidden layer.
    pub layer_width: usize,
    pub total_cols: usize,
    pub lambda: f64,
    /// Regularized training objective.
    pub train_loss: f64,
    pub train_error: f64,
    pub valid_error: Option<f64>,
    pub secs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
    pub termination: Termination,
    /// Depth of the returned network.
    pub best_depth: usize,
    pub best_lambda: f64,
    pub warnings: Vec<String>,
}

impl TrainingTrace {
    /// One `key=value` line per depth. With `with_timing` false, `secs` is written as 0.
    pub fn to_log(&self, with_timing: bool) -> String {
        let mut out = String::new();
        for r in &self.records {
            let valid = r
                .valid_error
                .map_or_else(|| "na".to_string(), |v| v.to_string());
            let secs = if with_timing { r.secs } else { 0.0 };
            writeln!(
                out,
                "depth={} layer_width={} total_cols={} lambda={} train_loss={} train_err={} valid_err={} secs={:.6}",
                r.depth, r.layer_width, r.total_cols, r.lambda, r.train_loss, r.train_error, valid, secs
            )
            .expect("writing to a string");
        }
        out
    }
}

/// Training settings and outcome stored with a model. Timing is left out so
/// that identical runs give identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: TrainConfig,
    pub train_rows: usize,
    pub valid_rows: usize,
    pub termination: Termination,
    pub layer_widths: Vec<usize>,
    pub best_depth: usize,
    pub best_lambda: f64,
}

/// Trains a network on `train`, selecting depth and `lambda` on `valid`.
pub fn train(
    train: &LabeledDataset,
    valid: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(PolyNetwork, TrainingTrace)> {
    train_with_state(train, valid, config).map(|(net, trace, _)| (net, trace))
}

struct Best {
    key: (f64, f64),
    layers: usize,
    fit: FitResult,
}

/// Like [`train`], also returning the final basis state (every layer built,
/// not only those kept in the network).
pub fn train_with_state(
    train: &LabeledDataset,
    valid: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(PolyNetwork, TrainingTrace, BasisState)> {
    if train.is_empty() {
        return input("training set is empty");
    }
    let task = train.task();
    if !valid.is_empty() && (valid.dims() != train.dims() || valid.task() != task) {
        return input(format!(
            "validation set ({} features, {:?}) does not match training set ({} features, {:?})",
            valid.dims(),
            valid.task(),
            train.dims(),
            task
        ));
    }
    let has_valid = !valid.is_empty();
    config.validate(task, has_valid)?;

    let mut warnings = Vec::new();
    if !train.rows_distinct() {
        let w = "training set has duplicate rows; interpolation is not guaranteed".to_string();
        warn!("{w}");
        warnings.push(w);
    }

    let m = train.rows();
    let tol = config.tol.unwrap_or_else(|| default_tolerance(m));
    let targets = target_matrix(train);
    let lifted = lift_input(train.features());

    let mut clock = Instant::now();
    let first = match config.mode {
        BuildMode::Exact => build_basis1_exact(&lifted)?,
        BuildMode::Width => build_basis1_width(&lifted, config.gamma, config.svd)?,
    };
    let mut state = BasisState::new(first)?;

    let mut records = Vec::new();
    let mut best: Option<Best> = None;
    let mut stale = 0usize;
    let termination;
    let mut depth = 2;
    loop {
        let features = state.feature_matrix();
        let fits = fit_grid(&features, train, config)?;
        let valid_features = if has_valid {
            Some(
                network_for(
                    &state,
                    state.depth(),
                    task,
                    zero_head(state.width(), task, config.loss),
                )?
                .feature_rows(valid.features())?,
            )
        } else {
            None
        };

        // best lambda at this depth
        let mut depth_best: Option<((f64, f64), Option<f64>, FitResult)> = None;
        for fit in fits {
            let valid_error = match &valid_features {
                Some(vf) => Some(validation_error(vf, &fit.weights, valid.labels(), task)?),
                None => None,
            };
            let key = (valid_error.unwrap_or(fit.train_error), fit.train_loss);
            if depth_best
                .as_ref()
                .is_none_or(|(k, _, _)| lex_less(key, *k))
            {
                depth_best = Some((key, valid_error, fit));
            }
        }
        let (key, valid_error, fit) = depth_best.expect("lambda grid is nonempty");

        let record = TraceRecord {
            depth,
            layer_width: state.layer_ranges().last().map_or(0, |r| r.len()),
            total_cols: state.width(),
            lambda: fit.lambda,
            train_loss: fit.train_loss,
            train_error: fit.train_error,
            valid_error,
            secs: clock.elapsed().as_secs_f64(),
        };
        info!(
            "depth {} |F|={} lambda={} train_loss={} valid_err={:?}",
            record.depth, record.total_cols, record.lambda, record.train_loss, record.valid_error
        );
        records.push(record);

        let improved = best.as_ref().is_none_or(|b| lex_less(key, b.key));
        let train_loss = fit.train_loss;
        if improved {
            best = Some(Best {
                key,
                layers: state.depth(),
                fit,
            });
            stale = 0;
        } else {
            stale += 1;
        }

        if config.stop.error_threshold.is_some_and(|e| train_loss <= e) {
            termination = Termination::ErrorThreshold;
            break;
        }
        if has_valid
            && config.stop.validation_patience > 0
            && stale >= config.stop.validation_patience
        {
            termination = Termination::ValidationStop;
            break;
        }
        if config.max_depth == Some(depth) {
            termination = Termination::DepthCap;
            break;
        }

        clock = Instant::now();
        let layer = match config.mode {
            BuildMode::Exact => build_basis_t_exact(&state, tol),
            BuildMode::Width => {
                build_basis_t_width(&state, &targets, config.gamma, config.batch, tol)?
            }
        };
        debug!("layer {} has {} nodes", state.depth() + 1, layer.width());
        if layer.is_empty() {
            termination = Termination::EmptyLayer;
            break;
        }
        state.push_layer(layer)?;
        depth += 1;
    }

    let best = best.expect("at least one depth is evaluated");
    let head = OutputHead {
        weights: best.fit.weights,
        loss: config.loss,
        lambda: best.fit.lambda,
    };
    let layer_widths: Vec<usize> = state.layers()[..best.layers]
        .iter()
        .map(LayerNodes::width)
        .collect();
    let trace = TrainingTrace {
        records,
        termination,
        best_depth: best.layers + 1,
        best_lambda: best.fit.lambda,
        warnings,
    };
    let provenance = Provenance {
        config: config.clone(),
        train_rows: m,
        valid_rows: valid.rows(),
        termination,
        layer_widths,
        best_depth: trace.best_depth,
        best_lambda: trace.best_lambda,
    };
    let net = network_for(&state, best.layers, task, head)?.with_provenance(provenance);
    Ok((net, trace, state))
}

fn lex_less(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// One head per grid value; SGD fits are seeded with `seed + index`.
fn fit_grid(
    features: &DenseMatrix,
    train: &LabeledDataset,
    config: &TrainConfig,
) -> Result<Vec<FitResult>> {
    let task = train.task();
    if config.loss == LossKind::Squared {
        // share one factorization across the grid
        let solver = SquaredSolver::new(features)?;
        let targets = target_matrix(train);
        return config
            .lambda_grid
            .iter()
            .map(|&lambda| {
                let weights = solver.solve(&targets, lambda)?;
                head_fit(features, weights, train, config.loss, lambda)
            })
            .collect();
    }
    config
        .lambda_grid
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let opt = OptimizerConfig {
                epochs: config.epochs,
                seed: config.seed.wrapping_add(i as u64),
                ..OptimizerConfig::default()
            };
            fit_head(features, train.labels(), task, config.loss, lambda, &opt)
        })
        .collect()
}

fn head_fit(
    features: &DenseMatrix,
    weights: DenseMatrix,
    train: &LabeledDataset,
    loss: LossKind,
    lambda: f64,
) -> Result<FitResult> {
    let scores = features.matmul(&weights)?;
    let reg = 0.5 * lambda * weights.frobenius_norm().powi(2);
    Ok(FitResult {
        train_loss: loss_value(loss, &scores, train.labels())? + reg,
        train_error: prediction_error(train.task(), &scores, train.labels())?,
        weights,
        lambda,
    })
}

fn zero_head(rows: usize, task: Task, loss: LossKind) -> OutputHead {
    OutputHead {
        weights: DenseMatrix::zeros(rows, task.outputs()),
        loss,
        lambda: 0.0,
    }
}

/// Network over the first `layers` layers of `state` with the given head weights.
fn network_for(
    state: &BasisState,
    layers: usize,
    task: Task,
    head: OutputHead,
) -> Result<PolyNetwork> {
    let LayerNodes::Linear(linear) = &state.layers()[0] else {
        unreachable!("the first layer is linear")
    };
    let products: Vec<Vec<ProductNode>> = state.layers()[1..layers]
        .iter()
        .map(|l| match l {
            LayerNodes::Product(nodes) => nodes.clone(),
            LayerNodes::Linear(_) => unreachable!("later layers are products"),
        })
        .collect();
    PolyNetwork::new(linear.rows() - 1, task, linear.clone(), products, head)
}

/// Evaluation summary of a network on a labeled dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    /// Misclassification rate, or mean squared error for regression.
    pub error: f64,
    /// Mean unregularized loss of the network's head loss.
    pub mean_loss: f64,
    /// `confusion[true][predicted]` for multiclass tasks.
    pub confusion: Option<Vec<Vec<usize>>>,
}

pub fn evaluate(net: &PolyNetwork, ds: &LabeledDataset) -> Result<Metrics> {
    if ds.is_empty() {
        return input("cannot evaluate on an empty dataset");
    }
    if ds.dims() != net.input_dim() {
        return input(format!(
            "dataset has {} features, network expects {}",
            ds.dims(),
            net.input_dim()
        ));
    }
    let task = net.task();
    let scores = net.predict_rows(ds.features())?;
    let confusion = match task {
        Task::Multiclass { classes } => {
            let mut c = vec![vec![0usize; classes]; classes];
            for (i, &y) in ds.labels().iter().enumerate() {
                let pred = crate::output::decide(task, &scores.row(i)) as usize;
                let y = y as usize;
                if y >= classes {
                    return input(format!("label {y} outside the network's {classes} classes"));
                }
                c[y][pred] += 1;
            }
            Some(c)
        }
        _ => None,
    };
    Ok(Metrics {
        error: prediction_error(task, &scores, ds.labels())?,
        mean_loss: loss_value(net.head().loss, &scores, ds.labels())?,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(xs: &[f64], ys: &[f64], task: Task) -> LabeledDataset {
        let x = DenseMatrix::from_columns(xs.len(), &[xs]).unwrap();
        LabeledDataset::new(x, ys.to_vec(), task).unwrap()
    }

    fn empty(d: usize, task: Task) -> LabeledDataset {
        LabeledDataset::new(DenseMatrix::zeros(0, d), vec![], task).unwrap()
    }

    #[test]
    fn grid_defaults() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 17);
        assert!((g[0] - 1e-7).abs() < 1e-20);
        assert!((g[16] - 10.0).abs() < 1e-12);
        assert!((g[1] / g[0] - 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exact_mode_interpolates() {
        let xs = [-1.0, -0.4, 0.1, 0.5, 0.9];
        let ys = [0.3, -1.2, 2.0, 0.7, -0.5];
        let ds = dataset(&xs, &ys, Task::Regression);
        let config = TrainConfig {
            lambda_grid: vec![0.0],
            stop: StopRule {
                validation_patience: 0,
                error_threshold: Some(1e-8),
            },
            ..TrainConfig::default()
        };
        let (net, trace) = train(&ds, &empty(1, Task::Regression), &config).unwrap();
        assert_eq!(trace.termination, Termination::ErrorThreshold);
        assert_eq!(net.total_nodes(), 5);
        let m = evaluate(&net, &ds).unwrap();
        assert!(m.error <= 1e-8, "{}", m.error);
    }

    #[test]
    fn depth_two_is_linear() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ds = dataset(&xs, &[1.0, -1.0, 1.0, -1.0], Task::Binary);
        let config = TrainConfig {
            loss: LossKind::Hinge,
            max_depth: Some(2),
            lambda_grid: vec![0.01],
            ..TrainConfig::default()
        };
        let (net, trace) = train(&ds, &empty(1, Task::Binary), &config).unwrap();
        assert_eq!(trace.termination, Termination::DepthCap);
        assert!(net.product_layers().is_empty());
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn width_one_reaches_cubic() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| x * x * x).collect();
        let ds = dataset(&xs, &ys, Task::Regression);
        let config = TrainConfig {
            mode: BuildMode::Width,
            gamma: 1,
            batch: 1,
            max_depth: Some(5),
            lambda_grid: vec![0.0],
            stop: StopRule {
                validation_patience: 0,
                error_threshold: Some(1e-12),
            },
            ..TrainConfig::default()
        };
        let (net, trace) = train(&ds, &empty(1, Task::Regression), &config).unwrap();
        assert!(trace.records.len() <= 4);
        let last = trace.records.last().unwrap();
        assert!(last.train_loss <= 1e-12 * 729.0, "{trace:?}");
        assert!(net.depth() <= 5);
    }

    #[test]
    fn width_mode_needs_a_stop_rule() {
        let ds = dataset(&[0.0, 1.0], &[0.0, 1.0], Task::Regression);
        let config = TrainConfig {
            mode: BuildMode::Width,
            gamma: 2,
            batch: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&ds, &empty(1, Task::Regression), &config),
            Err(Error::Config(_))
        ));
        let config = TrainConfig {
            batch: 3,
            max_depth: Some(3),
            ..config
        };
        assert!(matches!(
            train(&ds, &empty(1, Task::Regression), &config),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn keeps_best_head_across_depths() {
        // validation prefers the linear model on a linear target with noisy train labels
        let xs: Vec<f64> = (0..12).map(|i| f64::from(i) / 11.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 2.0 * x + if i % 2 == 0 { 0.3 } else { -0.3 })
            .collect();
        let ds = dataset(&xs, &ys, Task::Regression);
        let vx = [0.05, 0.35, 0.62, 0.97];
        let valid = dataset(&vx, &vx.map(|x| 2.0 * x), Task::Regression);
        let config = TrainConfig {
            lambda_grid: vec![0.0],
            stop: StopRule {
                validation_patience: 3,
                error_threshold: None,
            },
            ..TrainConfig::default()
        };
        let (net, trace) = train(&ds, &valid, &config).unwrap();
        let best = trace
            .records
            .iter()
            .min_by(|a, b| a.valid_error.unwrap().total_cmp(&b.valid_error.unwrap()))
            .unwrap();
        assert_eq!(net.depth(), best.depth);
        assert_eq!(trace.best_depth, best.depth);
        let vm = evaluate(&net, &valid).unwrap();
        assert!((vm.error - best.valid_error.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn evaluate_rejects_empty_and_counts_classes() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [0.0, 1.0, 2.0, 0.0, 1.0, 2.0];
        let task = Task::Multiclass { classes: 3 };
        let ds = dataset(&xs, &ys, task);
        let config = TrainConfig {
            lambda_grid: vec![0.0],
            stop: StopRule {
                validation_patience: 0,
                error_threshold: None,
            },
            ..TrainConfig::default()
        };
        let (net, _) = train(&ds, &empty(1, task), &config).unwrap();
        assert!(evaluate(&net, &empty(1, task)).is_err());
        let m = evaluate(&net, &ds).unwrap();
        assert_eq!(m.error, 0.0);
        let c = m.confusion.unwrap();
        assert_eq!(c, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
        assert_eq!(evaluate(&net, &ds).unwrap(), evaluate(&net, &ds).unwrap());
    }

    #[test]
    fn trace_log_format() {
        let trace = TrainingTrace {
            records: vec![TraceRecord {
                depth: 2,
                layer_width: 3,
                total_cols: 3,
                lambda: 0.5,
                train_loss: 0.25,
                train_error: 0.0,
                valid_error: None,
                secs: 1.5,
            }],
            termination: Termination::DepthCap,
            best_depth: 2,
            best_lambda: 0.5,
            warnings: vec![],
        };
        assert_eq!(
            trace.to_log(false),
            "depth=2 layer_width=3 total_cols=3 lambda=0.5 train_loss=0.25 train_err=0 valid_err=na secs=0.000000\n"
        );
        assert!(trace.to_log(true).ends_with("secs=1.500000\n"));
    }
}
