//! Brute-force ground truth for small instances: explicit monomial value
//! matrices and numerical span comparisons.

use crate::error::{input, Result};
use crate::linalg::{rank_tolerance, thin_svd, DenseMatrix};

/// Largest number of monomials [`monomial_matrix`] will build.
pub const MAX_MONOMIALS: usize = 100_000;

/// `C(n, k)`, saturating at `usize::MAX`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

/// Exponent vectors of all monomials in `d` variables of total degree `<= t`,
/// ordered by degree and then lexicographically (higher power of `x_1` first).
pub fn monomial_exponents(d: usize, t: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for degree in 0..=t {
        let mut current = vec![0u32; d];
        exponents_of_degree(d, degree as u32, 0, &mut current, &mut out);
    }
    out
}

fn exponents_of_degree(
    d: usize,
    left: u32,
    pos: usize,
    current: &mut [u32],
    out: &mut Vec<Vec<u32>>,
) {
    if pos + 1 >= d {
        if d == 0 {
            if left == 0 {
                out.push(Vec::new());
            }
            return;
        }
        current[pos] = left;
        out.push(current.to_vec());
        return;
    }
    for e in (0..=left).rev() {
        current[pos] = e;
        exponents_of_degree(d, left - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// `m x C(d+t, t)` matrix of every monomial of degree `<= t` at every row of `x`.
pub fn monomial_matrix(x: &DenseMatrix, t: usize) -> Result<DenseMatrix> {
    let d = x.cols();
    let count = binomial(d + t, t);
    if count > MAX_MONOMIALS {
        return input(format!(
            "{count} monomials of degree <= {t} in {d} variables exceed the limit of {MAX_MONOMIALS}"
        ));
    }
    let exps = monomial_exponents(d, t);
    debug_assert_eq!(exps.len(), count);
    let mut m = DenseMatrix::zeros(x.rows(), count);
    for i in 0..x.rows() {
        let row = x.row(i);
        for (j, alpha) in exps.iter().enumerate() {
            let v: f64 = row
                .iter()
                .zip(alpha)
                .map(|(xv, &a)| xv.powi(a as i32))
                .product();
            m.set(i, j, v);
        }
    }
    Ok(m)
}

/// Numerical rank: singular values above `tol * sigma_max`.
/// A `tol` of `None` uses the linear-algebra rank cutoff.
pub fn span_rank(a: &DenseMatrix, tol: Option<f64>) -> Result<usize> {
    let tol = tol.unwrap_or_else(|| rank_tolerance(a.rows(), a.cols()));
    Ok(thin_svd(a, tol)?.rank())
}

/// Whether the column spans of `a` and `b` coincide at relative tolerance `tol`.
pub fn span_equal(a: &DenseMatrix, b: &DenseMatrix, tol: Option<f64>) -> Result<bool> {
    if a.rows() != b.rows() {
        return input(format!("row counts differ: {} vs {}", a.rows(), b.rows()));
    }
    let ra = span_rank(a, tol)?;
    let rb = span_rank(b, tol)?;
    if ra != rb {
        return Ok(false);
    }
    Ok(span_rank(&a.hcat(b)?, tol)? == ra)
}
