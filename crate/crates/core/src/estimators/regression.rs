//! Small weighted least-squares solver for the outcome-model fit used by
//! bias correction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Coefficients of a weighted linear fit. Aliased columns are dropped in
/// column order and carry a zero coefficient.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinearFit<F> {
    pub coefficients: Vec<F>,
    pub dropped: Vec<usize>,
}

impl<F: Scalar> LinearFit<F> {
    pub fn predict(&self, row: &[F]) -> F {
        self.coefficients
            .iter()
            .zip(row)
            .fold(F::zero(), |acc, (b, x)| acc + *b * *x)
    }
}

/// Weighted least squares of `y` on the rows of `design` via a
/// column-ordered Cholesky factorization of the normal equations. A column
/// whose residual diagonal falls below `sqrt(eps)` times its own diagonal is
/// treated as collinear with the columns before it and dropped.
///
/// Fails with [`Error::SingularRegression`] when no column survives.
pub(crate) fn weighted_least_squares<F: Scalar>(design: &[Vec<F>], y: &[F], w: &[F]) -> Result<LinearFit<F>> {
    let p = design.first().map_or(0, Vec::len);
    if p == 0 || design.len() != y.len() || y.len() != w.len() {
        return Err(Error::SingularRegression("empty or mismatched design".into()));
    }
    let mut xtx = vec![vec![F::zero(); p]; p];
    let mut xty = vec![F::zero(); p];
    for ((row, &yi), &wi) in design.iter().zip(y).zip(w) {
        if wi == F::zero() {
            continue;
        }
        for a in 0..p {
            let wa = wi * row[a];
            xty[a] = xty[a] + wa * yi;
            for b in a..p {
                xtx[a][b] = xtx[a][b] + wa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[a][b] = xtx[b][a];
        }
    }

    let tol = F::epsilon().sqrt();
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    // rows of the lower Cholesky factor over kept columns
    let mut chol: Vec<Vec<F>> = Vec::new();
    for j in 0..p {
        let diag = xtx[j][j];
        let mut z = Vec::with_capacity(kept.len());
        for (r, &kr) in kept.iter().enumerate() {
            let mut v = xtx[j][kr];
            for c in 0..r {
                v = v - z[c] * chol[r][c];
            }
            z.push(v / chol[r][r]);
        }
        let resid = diag - z.iter().map(|v| *v * *v).sum::<F>();
        if !(diag > F::zero()) || resid <= tol * diag {
            dropped.push(j);
            continue;
        }
        z.push(resid.sqrt());
        chol.push(z);
        kept.push(j);
    }
    if kept.is_empty() {
        return Err(Error::SingularRegression("no identifiable column".into()));
    }

    let k = kept.len();
    let rhs: Vec<F> = kept.iter().map(|&j| xty[j]).collect();
    let mut u = vec![F::zero(); k];
    for r in 0..k {
        let mut v = rhs[r];
        for c in 0..r {
            v = v - chol[r][c] * u[c];
        }
        u[r] = v / chol[r][r];
    }
    let mut beta = vec![F::zero(); k];
    for r in (0..k).rev() {
        let mut v = u[r];
        for c in r + 1..k {
            v = v - chol[c][r] * beta[c];
        }
        beta[r] = v / chol[r][r];
    }
    let mut coefficients = vec![F::zero(); p];
    for (b, &j) in beta.into_iter().zip(&kept) {
        coefficients[j] = b;
    }
    Ok(LinearFit { coefficients, dropped })
}
