//! Convex losses over predicted scores and the regularized output-layer fit.
//!
//! All losses are averaged over the `m` rows. The regularized objective is
//! `loss(F w, y) + (lambda / 2) * |w|^2`; for squared loss it is minimized exactly
//! through an SVD of `F`, for the other losses with averaged stochastic
//! subgradient descent.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{encode_targets, Task};
use crate::error::{input, Result};
use crate::linalg::{dot, rank_tolerance, thin_svd, DenseMatrix, SvdResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    Squared,
    Hinge,
    Logistic,
    MulticlassHinge { classes: usize },
}

impl LossKind {
    /// Verifies that this loss can be used for `task`.
    pub fn check_task(&self, task: Task) -> Result<()> {
        match (self, task) {
            (LossKind::Squared, _) => Ok(()),
            (LossKind::Hinge | LossKind::Logistic, Task::Binary) => Ok(()),
            (LossKind::MulticlassHinge { classes }, Task::Multiclass { classes: k }) => {
                if *classes == k && k >= 2 {
                    Ok(())
                } else {
                    input(format!(
                        "multiclass hinge over {classes} classes used on a {k}-class task"
                    ))
                }
            }
            (kind, task) => input(format!("{kind:?} loss does not apply to a {task:?} task")),
        }
    }

    /// Short name used on the command line and in logs.
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Squared => "squared",
            LossKind::Hinge => "hinge",
            LossKind::Logistic => "logistic",
            LossKind::MulticlassHinge { .. } => "mc-hinge",
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Largest score among classes other than `label`; lowest index on ties.
fn strongest_rival(scores: &[f64], label: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &s) in scores.iter().enumerate() {
        if j != label && (best == usize::MAX || s > scores[best]) {
            best = j;
        }
    }
    best
}

fn squared_target(scores_len: usize, label: f64, j: usize) -> f64 {
    if scores_len == 1 {
        label
    } else if j == label as usize {
        1.0
    } else {
        0.0
    }
}

/// Loss of a single row. For squared loss with several score columns the label
/// is a class id and the target is its indicator vector.
pub fn example_loss(kind: LossKind, scores: &[f64], label: f64) -> f64 {
    match kind {
        LossKind::Squared => scores
            .iter()
            .enumerate()
            .map(|(j, s)| (s - squared_target(scores.len(), label, j)).powi(2))
            .sum(),
        LossKind::Hinge => (1.0 - label * scores[0]).max(0.0),
        LossKind::Logistic => softplus(-label * scores[0]),
        LossKind::MulticlassHinge { .. } => {
            let y = label as usize;
            let rival = strongest_rival(scores, y);
            (1.0 + scores[rival] - scores[y]).max(0.0)
        }
    }
}

/// A subgradient of [`example_loss`] with respect to the row's scores.
pub fn example_subgradient(kind: LossKind, scores: &[f64], label: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|g| *g = 0.0);
    match kind {
        LossKind::Squared => {
            for (j, (g, s)) in out.iter_mut().zip(scores).enumerate() {
                *g = 2.0 * (s - squared_target(scores.len(), label, j));
            }
        }
        LossKind::Hinge => {
            if label * scores[0] < 1.0 {
                out[0] = -label;
            }
        }
        LossKind::Logistic => out[0] = -label * sigmoid(-label * scores[0]),
        LossKind::MulticlassHinge { .. } => {
            let y = label as usize;
            let rival = strongest_rival(scores, y);
            if 1.0 + scores[rival] - scores[y] > 0.0 {
                out[rival] = 1.0;
                out[y] = -1.0;
            }
        }
    }
}

fn check_scores(kind: LossKind, scores: &DenseMatrix, labels: &[f64]) -> Result<()> {
    if scores.rows() != labels.len() {
        return input(format!(
            "{} score rows but {} labels",
            scores.rows(),
            labels.len()
        ));
    }
    let ok = match kind {
        LossKind::Hinge | LossKind::Logistic => scores.cols() == 1,
        LossKind::MulticlassHinge { classes } => scores.cols() == classes,
        LossKind::Squared => scores.cols() >= 1,
    };
    if !ok {
        return input(format!(
            "{} score columns do not fit {kind:?}",
            scores.cols()
        ));
    }
    if scores.cols() > 1 {
        if let Some(y) = labels
            .iter()
            .find(|&&y| !(y >= 0.0 && y.fract() == 0.0 && (y as usize) < scores.cols()))
        {
            return input(format!(
                "label {y} is not a class id below {}",
                scores.cols()
            ));
        }
    }
    Ok(())
}

/// Averaged loss over all rows of `scores` (m x k).
pub fn loss_value(kind: LossKind, scores: &DenseMatrix, labels: &[f64]) -> Result<f64> {
    check_scores(kind, scores, labels)?;
    let m = labels.len();
    if m == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..m)
        .map(|i| example_loss(kind, &scores.row(i), labels[i]))
        .sum();
    Ok(total / m as f64)
}

/// Subgradient of [`loss_value`] with respect to `scores`.
pub fn loss_gradient(kind: LossKind, scores: &DenseMatrix, labels: &[f64]) -> Result<DenseMatrix> {
    check_scores(kind, scores, labels)?;
    let (m, k) = (scores.rows(), scores.cols());
    let mut grad = DenseMatrix::zeros(m, k);
    let mut g = vec![0.0; k];
    for (i, &label) in labels.iter().enumerate() {
        example_subgradient(kind, &scores.row(i), label, &mut g);
        for (j, v) in g.iter().enumerate() {
            grad.set(i, j, v / m as f64);
        }
    }
    Ok(grad)
}

/// Decision for one row of scores: the score itself for regression, its sign
/// for binary tasks (`0` counts as `+1`), the arg-max class otherwise (lowest id
/// on ties).
pub fn decide(task: Task, scores: &[f64]) -> f64 {
    match task {
        Task::Regression => scores[0],
        Task::Binary => {
            if scores[0] >= 0.0 {
                1.0
            } else {
                -1.0
            }
        }
        Task::Multiclass { .. } => {
            let mut best = 0;
            for (j, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = j;
                }
            }
            best as f64
        }
    }
}

/// Misclassification rate for classification tasks, mean squared error for regression.
pub fn prediction_error(task: Task, scores: &DenseMatrix, labels: &[f64]) -> Result<f64> {
    if scores.rows() != labels.len() {
        return input(format!(
            "{} score rows but {} labels",
            scores.rows(),
            labels.len()
        ));
    }
    if labels.is_empty() {
        return input("cannot compute an error over zero rows");
    }
    let m = labels.len() as f64;
    let err = if task.is_classification() {
        (0..scores.rows())
            .filter(|&i| decide(task, &scores.row(i)) != labels[i])
            .count() as f64
    } else {
        (0..scores.rows())
            .map(|i| (scores.get(i, 0) - labels[i]).powi(2))
            .sum()
    };
    Ok(err / m)
}

/// Error of the linear head `weights` over precomputed node values.
pub fn validation_error(
    features: &DenseMatrix,
    weights: &DenseMatrix,
    labels: &[f64],
    task: Task,
) -> Result<f64> {
    prediction_error(task, &features.matmul(weights)?, labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub epochs: usize,
    /// Step scale when `lambda == 0`: `eta_s = eta0 / sqrt(s)`.
    pub eta0: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            epochs: 50,
            eta0: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// `|F| x outputs`.
    pub weights: DenseMatrix,
    pub lambda: f64,
    /// Regularized objective at `weights`.
    pub train_loss: f64,
    /// Training misclassification rate, or training MSE for regression.
    pub train_error: f64,
}

fn check_fit_inputs(
    features: &DenseMatrix,
    labels: &[f64],
    task: Task,
    kind: LossKind,
    lambda: f64,
) -> Result<()> {
    kind.check_task(task)?;
    if features.rows() != labels.len() {
        return input(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        ));
    }
    if labels.is_empty() {
        return input("cannot fit an output layer on zero rows");
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return input(format!("lambda must be a nonnegative real, got {lambda}"));
    }
    Ok(())
}

fn finish(
    features: &DenseMatrix,
    weights: DenseMatrix,
    labels: &[f64],
    task: Task,
    kind: LossKind,
    lambda: f64,
) -> Result<FitResult> {
    let scores = features.matmul(&weights)?;
    let reg = 0.5 * lambda * weights.frobenius_norm().powi(2);
    Ok(FitResult {
        train_loss: loss_value(kind, &scores, labels)? + reg,
        train_error: prediction_error(task, &scores, labels)?,
        weights,
        lambda,
    })
}

/// Exact regularized least squares over a fixed feature matrix.
///
/// `F = Q R` is factored once by Householder QR. Each `lambda` then solves the
/// small augmented problem `min |[R; sqrt(mu) I] w - [Q^T V; 0]|`, which never
/// forms `F^T F`. A rank-deficient `F` at `lambda == 0` uses the minimum-norm
/// SVD solution instead.
pub struct SquaredSolver {
    rows: usize,
    cols: usize,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    /// Present only when `F` is numerically rank deficient.
    svd: Option<SvdResult>,
}

impl SquaredSolver {
    pub fn new(features: &DenseMatrix) -> Result<Self> {
        let (rows, cols) = (features.rows(), features.cols());
        let f = features.as_nalgebra();
        let sv = f.clone().singular_values();
        let sigma_max = sv.iter().copied().fold(0.0, f64::max);
        let cutoff = rank_tolerance(rows, cols) * sigma_max;
        let rank = sv.iter().filter(|&&v| v > cutoff).count();
        let svd = if rank < cols {
            Some(thin_svd(features, 0.0)?)
        } else {
            None
        };
        let qr = f.clone().qr();
        Ok(SquaredSolver {
            rows,
            cols,
            q: qr.q(),
            r: qr.r(),
            svd,
        })
    }

    /// Solves `(F^T F + (lambda m / 2) I) w = F^T V`; with `lambda == 0` this is
    /// the minimum-norm least-squares solution, discarding modes below the rank cutoff.
    pub fn solve(&self, targets: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
        let mu = 0.5 * lambda * self.rows as f64;
        let n = self.cols;
        let k = targets.cols();
        if n == 0 {
            return Ok(DenseMatrix::zeros(0, k));
        }
        let z = self.q.transpose() * targets.as_nalgebra();
        if mu > 0.0 {
            let p = self.r.nrows();
            let mut a = DMatrix::zeros(p + n, n);
            a.view_mut((0, 0), (p, n)).copy_from(&self.r);
            a.view_mut((p, 0), (n, n)).fill_diagonal(mu.sqrt());
            let mut b = DMatrix::zeros(p + n, k);
            b.view_mut((0, 0), (p, k)).copy_from(&z);
            let qr = a.qr();
            let rhs = qr.q().transpose() * b;
            let w = qr
                .r()
                .solve_upper_triangular(&rhs)
                .expect("regularized system has full rank");
            return DenseMatrix::from_nalgebra(w);
        }
        match &self.svd {
            None => {
                let w = self
                    .r
                    .solve_upper_triangular(&z)
                    .expect("full-rank factor is invertible");
                DenseMatrix::from_nalgebra(w)
            }
            Some(svd) => {
                let s = &svd.singular_values;
                let cutoff =
                    rank_tolerance(self.rows, self.cols) * s.first().copied().unwrap_or(0.0);
                let u = svd.left_vectors.as_nalgebra();
                let v = svd.right_vectors.as_nalgebra();
                let mut coef = u.transpose() * targets.as_nalgebra();
                for (r, &sv) in s.iter().enumerate() {
                    coef.row_mut(r)
                        .scale_mut(if sv > cutoff { 1.0 / sv } else { 0.0 });
                }
                DenseMatrix::from_nalgebra(v * coef)
            }
        }
    }
}

/// Fits the output head over `features` (m x |F|).
pub fn fit_head(
    features: &DenseMatrix,
    labels: &[f64],
    task: Task,
    kind: LossKind,
    lambda: f64,
    opt: &OptimizerConfig,
) -> Result<FitResult> {
    check_fit_inputs(features, labels, task, kind, lambda)?;
    let weights = match kind {
        LossKind::Squared => {
            SquaredSolver::new(features)?.solve(&encode_targets(labels, task), lambda)?
        }
        _ => sgd(features, labels, task.outputs(), kind, lambda, opt)?,
    };
    finish(features, weights, labels, task, kind, lambda)
}

/// Fits one head per `lambda`, sharing the factorization for squared loss.
pub fn fit_heads(
    features: &DenseMatrix,
    labels: &[f64],
    task: Task,
    kind: LossKind,
    lambdas: &[f64],
    opt: &OptimizerConfig,
) -> Result<Vec<FitResult>> {
    for &lambda in lambdas {
        check_fit_inputs(features, labels, task, kind, lambda)?;
    }
    if kind == LossKind::Squared {
        let solver = SquaredSolver::new(features)?;
        let targets = encode_targets(labels, task);
        lambdas
            .iter()
            .map(|&lambda| {
                let w = solver.solve(&targets, lambda)?;
                finish(features, w, labels, task, kind, lambda)
            })
            .collect()
    } else {
        lambdas
            .iter()
            .map(|&lambda| fit_head(features, labels, task, kind, lambda, opt))
            .collect()
    }
}

/// Averaged stochastic subgradient descent.
///
/// Step `1 / (lambda s)` for `lambda > 0`, else `eta0 / sqrt(s)`. Iterates from
/// the second half of all steps are averaged.
fn sgd(
    features: &DenseMatrix,
    labels: &[f64],
    outputs: usize,
    kind: LossKind,
    lambda: f64,
    opt: &OptimizerConfig,
) -> Result<DenseMatrix> {
    let (m, n) = (features.rows(), features.cols());
    let rows: Vec<Vec<f64>> = (0..m).map(|i| features.row(i)).collect();
    let mut w = vec![vec![0.0; n]; outputs];
    let mut avg = vec![vec![0.0; n]; outputs];
    let mut averaged = 0usize;
    let total_steps = opt.epochs * m;
    let burn_in = total_steps / 2;

    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut scores = vec![0.0; outputs];
    let mut grad = vec![0.0; outputs];
    let mut step = 0usize;
    for _ in 0..opt.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            step += 1;
            let x = &rows[i];
            let eta = if lambda > 0.0 {
                1.0 / (lambda * step as f64)
            } else {
                opt.eta0 / (step as f64).sqrt()
            };
            for (s, wj) in scores.iter_mut().zip(&w) {
                *s = dot(wj, x);
            }
            example_subgradient(kind, &scores, labels[i], &mut grad);
            let shrink = 1.0 - eta * lambda;
            for (wj, &gj) in w.iter_mut().zip(&grad) {
                if lambda > 0.0 {
                    wj.iter_mut().for_each(|v| *v *= shrink);
                }
                if gj != 0.0 {
                    for (v, xi) in wj.iter_mut().zip(x) {
                        *v -= eta * gj * xi;
                    }
                }
            }
            if step > burn_in {
                averaged += 1;
                for (aj, wj) in avg.iter_mut().zip(&w) {
                    for (a, v) in aj.iter_mut().zip(wj) {
                        *a += v;
                    }
                }
            }
        }
    }
    if averaged > 0 {
        for aj in &mut avg {
            aj.iter_mut().for_each(|a| *a /= averaged as f64);
        }
    }
    DenseMatrix::from_columns(n, &avg)
}
