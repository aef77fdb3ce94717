//! Layer-by-layer basis construction.
//!
//! The builder keeps the feature matrix `F` (one column per network node, holding
//! that node's values on the training rows) together with an orthonormal matrix
//! `Q` spanning the same space. Layer 1 is a linear map of `[1 X]` obtained from
//! its SVD. Every later layer picks columns among the Hadamard products
//! `F^{t-1}_i o F^1_j` of the previous layer with the first layer:
//!
//! * exact mode keeps every product that is linearly independent of what is
//!   already in `F`, so after layer `t` the columns of `F` span the values of all
//!   polynomials of degree `<= t` on the training set;
//! * width-limited mode keeps at most `gamma` products per layer, chosen greedily
//!   in batches by how well their residuals align with the (deflated) targets.
//!
//! Candidates are generated one at a time from their two factor columns; the full
//! candidate matrix is never stored.
//!
//! Every column appended to `F` is the raw candidate scaled to norm `sqrt(m)`,
//! i.e. unit second moment. The scale factor is the node's weight, so evaluating
//! the network on a training row reproduces that row of `F` exactly.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::linalg::{
    dot, norm, orthonormal_direction, project_out, randomized_range_svd, rank_tolerance, thin_svd,
    DenseMatrix, DEFAULT_OVERSAMPLE, DEFAULT_POWER_ITERS,
};

/// How the first-layer SVD is computed in width-limited mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SvdMode {
    Exact,
    Randomized { seed: u64 },
}

/// A product candidate: column `prev_col` of the previous layer times column
/// `first_col` of layer 1 (both indices local to their layer).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateRef {
    pub prev_col: usize,
    pub first_col: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductNode {
    pub source: CandidateRef,
    pub weight: f64,
}

/// Parameters of one layer's nodes.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerNodes {
    /// First-layer weights `W1`, `(d+1) x k`; row 0 multiplies the constant input.
    Linear(DenseMatrix),
    Product(Vec<ProductNode>),
}

impl LayerNodes {
    pub fn width(&self) -> usize {
        match self {
            LayerNodes::Linear(w) => w.cols(),
            LayerNodes::Product(nodes) => nodes.len(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerBuildResult {
    /// New columns of `F`, each of norm `sqrt(m)`.
    pub new_columns: Vec<Vec<f64>>,
    pub nodes: LayerNodes,
    /// Orthonormal directions extending `Q` so that it keeps spanning `F`.
    directions: Vec<Vec<f64>>,
}

impl LayerBuildResult {
    pub fn width(&self) -> usize {
        self.new_columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.new_columns.is_empty()
    }
}

/// Feature matrix, its orthonormal companion and the layers built so far.
#[derive(Clone, Debug)]
pub struct BasisState {
    rows: usize,
    columns: Vec<Vec<f64>>,
    ortho: Vec<Vec<f64>>,
    layer_ranges: Vec<Range<usize>>,
    layers: Vec<LayerNodes>,
}

impl BasisState {
    /// Starts a state from a first-layer build.
    pub fn new(first: LayerBuildResult) -> Result<Self> {
        if !matches!(first.nodes, LayerNodes::Linear(_)) {
            return input("the first layer must be linear");
        }
        let rows = first.new_columns.first().map_or(0, Vec::len);
        let width = first.width();
        Ok(BasisState {
            rows,
            columns: first.new_columns,
            ortho: first.directions,
            layer_ranges: std::iter::once(0..width).collect(),
            layers: vec![first.nodes],
        })
    }

    /// Appends a product layer. Empty layers are rejected: they signal termination.
    pub fn push_layer(&mut self, layer: LayerBuildResult) -> Result<()> {
        if !matches!(layer.nodes, LayerNodes::Product(_)) {
            return input("only product layers can follow the first layer");
        }
        if layer.is_empty() {
            return input("cannot append an empty layer");
        }
        let start = self.columns.len();
        self.columns.extend(layer.new_columns);
        self.ortho.extend(layer.directions);
        self.layer_ranges.push(start..self.columns.len());
        self.layers.push(layer.nodes);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Total number of columns `|F|`.
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Number of constructed layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layer1_cols(&self) -> usize {
        self.layer_ranges[0].len()
    }

    pub fn layer_ranges(&self) -> &[Range<usize>] {
        &self.layer_ranges
    }

    pub fn layers(&self) -> &[LayerNodes] {
        &self.layers
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn feature_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_columns(self.rows, &self.columns).expect("columns are finite")
    }

    /// The first `cols` columns of `F`.
    pub fn feature_prefix(&self, cols: usize) -> DenseMatrix {
        DenseMatrix::from_columns(self.rows, &self.columns[..cols]).expect("columns are finite")
    }

    pub fn orthonormal_basis(&self) -> DenseMatrix {
        DenseMatrix::from_columns(self.rows, &self.ortho).expect("basis is finite")
    }

    fn last_range(&self) -> Range<usize> {
        self.layer_ranges.last().cloned().unwrap_or(0..0)
    }

    /// Number of product candidates for the next layer.
    pub fn candidate_count(&self) -> usize {
        self.last_range().len() * self.layer1_cols()
    }

    /// Candidate with scan position `index`; the first-layer index varies fastest.
    pub fn candidate_ref(&self, index: usize) -> CandidateRef {
        let k1 = self.layer1_cols();
        CandidateRef {
            prev_col: index / k1,
            first_col: index % k1,
        }
    }

    /// Checks the structural invariants: unit second moments, orthonormal `Q`,
    /// and every `F` column inside `span(Q)`.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let m = self.rows as f64;
        if self.ortho.len() != self.columns.len() {
            return Err(format!(
                "|Q| = {} but |F| = {}",
                self.ortho.len(),
                self.columns.len()
            ));
        }
        if self.columns.len() > self.rows {
            return Err(format!(
                "|F| = {} exceeds m = {}",
                self.columns.len(),
                self.rows
            ));
        }
        for (j, c) in self.columns.iter().enumerate() {
            let moment = dot(c, c) / m;
            if (moment - 1.0).abs() > 1e-8 {
                return Err(format!("column {j} has second moment {moment}"));
            }
        }
        for (i, qi) in self.ortho.iter().enumerate() {
            for (j, qj) in self.ortho.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                let g = dot(qi, qj);
                if (g - target).abs() > 1e-8 {
                    return Err(format!("Q^T Q differs from I at ({i}, {j}): {g}"));
                }
            }
        }
        for (j, c) in self.columns.iter().enumerate() {
            let mut r = c.clone();
            project_out(&mut r, &self.ortho);
            let n = norm(&r);
            if n > 1e-6 * m.sqrt() {
                return Err(format!("column {j} leaves span(Q) by {n}"));
            }
        }
        Ok(())
    }
}

/// Default acceptance tolerance for residual norms, `1e-8 * sqrt(m)`.
pub fn default_tolerance(rows: usize) -> f64 {
    1e-8 * (rows as f64).sqrt()
}

/// `[1 X]`.
pub fn lift_input(x: &DenseMatrix) -> DenseMatrix {
    let ones = vec![1.0; x.rows()];
    let mut cols = vec![ones];
    cols.extend(x.columns());
    DenseMatrix::from_columns(x.rows(), &cols).expect("finite input")
}

/// Layer-1 nodes from the given right singular directions of `[1 X]`.
fn first_layer(f1_tilde: &DenseMatrix, directions: &DenseMatrix) -> Result<LayerBuildResult> {
    let m = f1_tilde.rows();
    let lifted: Vec<Vec<f64>> = (0..m).map(|i| f1_tilde.row(i)).collect();
    let target = (m as f64).sqrt();

    let mut weights = Vec::with_capacity(directions.cols());
    let mut new_columns: Vec<Vec<f64>> = Vec::with_capacity(directions.cols());
    for j in 0..directions.cols() {
        let raw = directions.column(j);
        let values: Vec<f64> = lifted.iter().map(|row| dot(row, raw)).collect();
        let scale = target / norm(&values);
        let w: Vec<f64> = raw.iter().map(|v| v * scale).collect();
        // recompute with the scaled weights so that B = [1 X] W1 holds exactly
        new_columns.push(lifted.iter().map(|row| dot(row, &w)).collect());
        weights.push(w);
    }

    let mut directions = Vec::with_capacity(new_columns.len());
    for c in &new_columns {
        if let Some(d) = orthonormal_direction(c, &directions, 0.0) {
            directions.push(d);
        }
    }
    if directions.len() != new_columns.len() {
        return input("first-layer columns are numerically dependent");
    }
    Ok(LayerBuildResult {
        nodes: LayerNodes::Linear(DenseMatrix::from_columns(f1_tilde.cols(), &weights)?),
        new_columns,
        directions,
    })
}

/// First layer spanning the full column space of `[1 X]`.
pub fn build_basis1_exact(f1_tilde: &DenseMatrix) -> Result<LayerBuildResult> {
    let svd = thin_svd(f1_tilde, rank_tolerance(f1_tilde.rows(), f1_tilde.cols()))?;
    first_layer(f1_tilde, &svd.right_vectors)
}

/// First layer keeping only the `gamma` leading non-zero singular directions.
pub fn build_basis1_width(
    f1_tilde: &DenseMatrix,
    gamma: usize,
    svd_mode: SvdMode,
) -> Result<LayerBuildResult> {
    if gamma == 0 {
        return input("layer width must be at least 1");
    }
    let (m, n) = (f1_tilde.rows(), f1_tilde.cols());
    let right = match svd_mode {
        SvdMode::Exact => thin_svd(f1_tilde, rank_tolerance(m, n))?.right_vectors,
        SvdMode::Randomized { seed } => {
            let k = gamma.min(m.min(n));
            let oversample = DEFAULT_OVERSAMPLE.min(m.min(n) - k);
            let r = randomized_range_svd(f1_tilde, k, oversample, DEFAULT_POWER_ITERS, seed)?;
            // the range finder can return modes below the rank cutoff
            let cutoff =
                rank_tolerance(m, n) * r.svd.singular_values.first().copied().unwrap_or(0.0);
            let keep = r
                .svd
                .singular_values
                .iter()
                .filter(|&&s| s > cutoff)
                .count();
            DenseMatrix::from_nalgebra(
                r.svd
                    .right_vectors
                    .as_nalgebra()
                    .columns(0, keep)
                    .into_owned(),
            )?
        }
    };
    let keep = gamma.min(right.cols());
    let right = DenseMatrix::from_nalgebra(right.as_nalgebra().columns(0, keep).into_owned())?;
    first_layer(f1_tilde, &right)
}

/// Hadamard product of the referenced previous-layer and first-layer columns.
pub fn candidate_column(state: &BasisState, r: CandidateRef) -> Vec<f64> {
    let prev = state.column(state.last_range().start + r.prev_col);
    let first = state.column(r.first_col);
    prev.iter().zip(first).map(|(a, b)| a * b).collect()
}

/// Residual of `v` against the concatenation of the given orthonormal sets,
/// computed with two projection passes. Returns the residual and its norm.
fn two_pass_residual(v: &[f64], sets: &[&[Vec<f64>]]) -> (Vec<f64>, f64) {
    let mut r = v.to_vec();
    for _ in 0..2 {
        for set in sets {
            project_out(&mut r, set.iter());
        }
    }
    let n = norm(&r);
    (r, n)
}

fn product_node(
    state: &BasisState,
    source: CandidateRef,
    candidate: &[f64],
) -> (Vec<f64>, ProductNode) {
    let weight = (state.rows() as f64).sqrt() / norm(candidate);
    let column = candidate.iter().map(|c| weight * c).collect();
    (column, ProductNode { source, weight })
}

/// Gram-Schmidt scan over all candidates: keep each one whose residual against
/// the current basis (including candidates accepted earlier in this scan) has
/// norm `> tol`.
pub fn build_basis_t_exact(state: &BasisState, tol: f64) -> LayerBuildResult {
    let mut new_columns = Vec::new();
    let mut nodes = Vec::new();
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for idx in 0..state.candidate_count() {
        let source = state.candidate_ref(idx);
        let c = candidate_column(state, source);
        let (r, n) = two_pass_residual(&c, &[&state.ortho, &directions]);
        if n > tol {
            let (column, node) = product_node(state, source, &c);
            new_columns.push(column);
            nodes.push(node);
            directions.push(r.into_iter().map(|x| x / n).collect());
        }
    }
    LayerBuildResult {
        new_columns,
        nodes: LayerNodes::Product(nodes),
        directions,
    }
}

/// Supervised orthogonal-least-squares selection of at most `gamma` candidates,
/// `batch` per round.
///
/// `targets` is the label vector (or class-indicator matrix); a working copy is
/// deflated against the current basis first and again after every round.
pub fn build_basis_t_width(
    state: &BasisState,
    targets: &DenseMatrix,
    gamma: usize,
    batch: usize,
    tol: f64,
) -> Result<LayerBuildResult> {
    if batch == 0 || batch > gamma {
        return input(format!("batch size {batch} must be in 1..={gamma}"));
    }
    if targets.rows() != state.rows() {
        return input(format!(
            "targets have {} rows, basis has {}",
            targets.rows(),
            state.rows()
        ));
    }

    let mut residual_targets: Vec<Vec<f64>> = targets
        .columns()
        .iter()
        .map(|v| two_pass_residual(v, &[&state.ortho]).0)
        .collect();

    let mut new_columns = Vec::new();
    let mut nodes = Vec::new();
    let mut directions: Vec<Vec<f64>> = Vec::new();
    let rounds = gamma.div_ceil(batch);

    for _ in 0..rounds {
        let want = batch.min(gamma - nodes.len());
        if want == 0 {
            break;
        }

        let mut target_basis: Vec<Vec<f64>> = Vec::new();
        for v in &residual_targets {
            if norm(v) > tol {
                if let Some(d) = orthonormal_direction(v, &target_basis, tol) {
                    target_basis.push(d);
                }
            }
        }

        let scores: Vec<Option<f64>> = (0..state.candidate_count())
            .into_par_iter()
            .map(|idx| {
                let c = candidate_column(state, state.candidate_ref(idx));
                let (r, n) = two_pass_residual(&c, &[&state.ortho, &directions]);
                if n <= tol {
                    return None;
                }
                let s2: f64 = target_basis.iter().map(|o| dot(o, &r).powi(2)).sum();
                Some(s2.sqrt() / n)
            })
            .collect();

        let mut order: Vec<(usize, f64)> = scores
            .into_iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|s| (i, s)))
            .collect();
        if order.is_empty() {
            break;
        }
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut round_dirs: Vec<Vec<f64>> = Vec::new();
        for (idx, _) in order {
            if round_dirs.len() == want {
                break;
            }
            let source = state.candidate_ref(idx);
            let c = candidate_column(state, source);
            let (r, n) = two_pass_residual(&c, &[&state.ortho, &directions, &round_dirs]);
            if n <= tol {
                continue;
            }
            let (column, node) = product_node(state, source, &c);
            new_columns.push(column);
            nodes.push(node);
            round_dirs.push(r.into_iter().map(|x| x / n).collect());
        }
        if round_dirs.is_empty() {
            break;
        }
        for v in &mut residual_targets {
            *v = two_pass_residual(v, &[&round_dirs]).0;
        }
        directions.extend(round_dirs);
    }

    Ok(LayerBuildResult {
        new_columns,
        nodes: LayerNodes::Product(nodes),
        directions,
    })
}
