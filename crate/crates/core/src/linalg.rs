//! Dense matrix primitives used by the basis construction.
//!
//! [`DenseMatrix`] wraps a column-major `nalgebra` matrix and guarantees finite
//! entries. Column access is contiguous, which is what the basis builder and the
//! Gram-Schmidt helpers want; rows are copied out on demand.
//!
//! The SVD routines drop zero modes according to a relative cutoff: singular
//! values `<= tol * sigma_max` are treated as zero. [`rank_tolerance`] gives the
//! default cutoff `max(rows, cols) * eps`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{input, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix(DMatrix::identity(n, n))
    }

    /// Builds a matrix from entries listed row by row.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return input(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            ));
        }
        Self::from_nalgebra(DMatrix::from_row_slice(rows, cols, &data))
    }

    /// Builds a matrix from a list of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return input(format!(
                "row {i} has {} entries, expected {cols}",
                rows[i].len()
            ));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_major(rows.len(), cols, data)
    }

    /// Builds an `rows x columns.len()` matrix from its columns.
    pub fn from_columns<C: AsRef<[f64]>>(rows: usize, columns: &[C]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, c) in columns.iter().enumerate() {
            let c = c.as_ref();
            if c.len() != rows {
                return input(format!(
                    "column {j} has length {}, expected {rows}",
                    c.len()
                ));
            }
            data.extend_from_slice(c);
        }
        Self::from_nalgebra(DMatrix::from_vec(rows, columns.len(), data))
    }

    pub fn from_nalgebra(m: DMatrix<f64>) -> Result<Self> {
        if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % m.nrows().max(1), pos / m.nrows().max(1));
            return input(format!("non-finite entry at ({r}, {c})"));
        }
        Ok(DenseMatrix(m))
    }

    pub fn as_nalgebra(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_nalgebra(self) -> DMatrix<f64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(value.is_finite(), "DenseMatrix entries must be finite");
        self.0[(row, col)] = value;
    }

    /// Column `j` as a contiguous slice.
    pub fn column(&self, j: usize) -> &[f64] {
        let m = self.rows();
        &self.0.as_slice()[j * m..(j + 1) * m]
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols()).map(|j| self.column(j).to_vec()).collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols()).map(|j| self.0[(i, j)]).collect()
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        (0..self.rows()).flat_map(|i| self.row(i)).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix(self.0.transpose())
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols() != rhs.rows() {
            return input(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            ));
        }
        Self::from_nalgebra(&self.0 * &rhs.0)
    }

    /// `[self other]`.
    pub fn hcat(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows() != other.rows() {
            return input(format!(
                "cannot concatenate matrices with {} and {} rows",
                self.rows(),
                other.rows()
            ));
        }
        let mut cols = self.columns();
        cols.extend(other.columns());
        Self::from_columns(self.rows(), &cols)
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_range(&self, start: usize, end: usize) -> DenseMatrix {
        DenseMatrix(self.0.rows(start, end - start).into_owned())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(self.0.as_slice())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Thin SVD `A = U diag(S) V^T` restricted to the numerically non-zero modes.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub left_vectors: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub right_vectors: DenseMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let u = self.left_vectors.as_nalgebra();
        let v = self.right_vectors.as_nalgebra();
        let mut us = u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        DenseMatrix(us * v.transpose())
    }

    fn empty(rows: usize, cols: usize) -> Self {
        SvdResult {
            left_vectors: DenseMatrix::zeros(rows, 0),
            singular_values: Vec::new(),
            right_vectors: DenseMatrix::zeros(cols, 0),
        }
    }
}

/// Output of [`randomized_range_svd`]. `rank_limited` is set when fewer than the
/// requested `k` non-zero modes were found.
#[derive(Clone, Debug)]
pub struct RandomizedSvd {
    pub svd: SvdResult,
    pub rank_limited: bool,
}

pub const DEFAULT_OVERSAMPLE: usize = 10;
pub const DEFAULT_POWER_ITERS: usize = 2;

/// Default relative rank cutoff, `max(rows, cols) * eps`.
pub fn rank_tolerance(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Thin SVD keeping singular values `> tol * sigma_max`, sorted nonincreasing.
pub fn thin_svd(a: &DenseMatrix, tol: f64) -> Result<SvdResult> {
    if tol.is_nan() || tol < 0.0 {
        return input(format!("rank tolerance must be nonnegative, got {tol}"));
    }
    if a.0.iter().any(|v| !v.is_finite()) {
        return input("matrix has non-finite entries");
    }
    let (m, n) = (a.rows(), a.cols());
    if m == 0 || n == 0 {
        return Ok(SvdResult::empty(m, n));
    }
    let svd = a.0.clone().svd(true, true);
    let u = svd.u.expect("left vectors requested");
    let v_t = svd.v_t.expect("right vectors requested");
    let values = svd.singular_values;

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    let sigma_max = order.first().map_or(0.0, |&i| values[i]);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| values[i] > 0.0 && values[i] > tol * sigma_max)
        .collect();

    let left = DMatrix::from_fn(m, keep.len(), |r, c| u[(r, keep[c])]);
    let right = DMatrix::from_fn(n, keep.len(), |r, c| v_t[(keep[c], r)]);
    Ok(SvdResult {
        left_vectors: DenseMatrix::from_nalgebra(left)?,
        singular_values: keep.iter().map(|&i| values[i]).collect(),
        right_vectors: DenseMatrix::from_nalgebra(right)?,
    })
}

fn orthonormal_range(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Approximate top-`k` SVD via a Gaussian range finder with `power_iters` rounds
/// of subspace iteration. Deterministic for a given `seed`.
pub fn randomized_range_svd(
    a: &DenseMatrix,
    k: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<RandomizedSvd> {
    let (m, n) = (a.rows(), a.cols());
    if k == 0 {
        return input("randomized SVD needs k >= 1");
    }
    let l = k + oversample;
    if l > m.min(n) {
        return input(format!(
            "k + oversample = {l} exceeds min(rows, cols) = {}",
            m.min(n)
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = DMatrix::<f64>::zeros(n, l);
    // column-major fill order is part of the determinism contract
    for v in omega.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }

    let a = &a.0;
    let mut q = orthonormal_range(a * omega);
    for _ in 0..power_iters {
        let z = orthonormal_range(a.transpose() * &q);
        q = orthonormal_range(a * z);
    }

    let b = DenseMatrix::from_nalgebra(q.transpose() * a)?;
    let small = thin_svd(&b, rank_tolerance(m, n))?;
    let r = small.rank().min(k);
    let u_full = &q * small.left_vectors.as_nalgebra();
    let left = u_full.columns(0, r).into_owned();
    let right = small.right_vectors.as_nalgebra().columns(0, r).into_owned();
    Ok(RandomizedSvd {
        svd: SvdResult {
            left_vectors: DenseMatrix::from_nalgebra(left)?,
            singular_values: small.singular_values[..r].to_vec(),
            right_vectors: DenseMatrix::from_nalgebra(right)?,
        },
        rank_limited: r < k,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Subtracts the projection onto each (orthonormal) basis vector in turn.
pub(crate) fn project_out<'a, C, I>(v: &mut [f64], basis: I)
where
    C: AsRef<[f64]> + ?Sized + 'a,
    I: IntoIterator<Item = &'a C>,
{
    for q in basis {
        let q = q.as_ref();
        let coef = dot(q, v);
        for (vi, qi) in v.iter_mut().zip(q) {
            *vi -= coef * qi;
        }
    }
}

/// `v - Q Q^T v` for a matrix `Q` with orthonormal columns.
pub fn residual(v: &[f64], q: &DenseMatrix) -> Result<Vec<f64>> {
    if v.len() != q.rows() {
        return input(format!(
            "vector length {} does not match basis rows {}",
            v.len(),
            q.rows()
        ));
    }
    let mut out = v.to_vec();
    project_out(&mut out, (0..q.cols()).map(|j| q.column(j)));
    Ok(out)
}

/// Appends the normalized residuals of `cols` to the orthonormal basis `q`.
///
/// Each column is projected twice (modified Gram-Schmidt, then one full
/// re-orthogonalization pass). Columns whose residual norm is `<= tol` times
/// their own norm are skipped.
pub fn append_orthonormal(q: &DenseMatrix, cols: &DenseMatrix, tol: f64) -> Result<DenseMatrix> {
    if q.rows() != cols.rows() {
        return Err(Error::Input(format!(
            "basis has {} rows but new columns have {}",
            q.rows(),
            cols.rows()
        )));
    }
    let mut basis = q.columns();
    for j in 0..cols.cols() {
        let c = cols.column(j);
        if let Some(dir) = orthonormal_direction(c, &basis, tol * norm(c)) {
            basis.push(dir);
        }
    }
    DenseMatrix::from_columns(q.rows(), &basis)
}

/// Normalized residual of `v` against `basis` (two projection passes), or
/// `None` if the residual norm is `<= threshold` or zero.
pub(crate) fn orthonormal_direction(
    v: &[f64],
    basis: &[Vec<f64>],
    threshold: f64,
) -> Option<Vec<f64>> {
    let mut r = v.to_vec();
    project_out(&mut r, basis);
    project_out(&mut r, basis);
    let n = norm(&r);
    if n <= threshold || n == 0.0 {
        return None;
    }
    r.iter_mut().for_each(|x| *x /= n);
    Some(r)
}
