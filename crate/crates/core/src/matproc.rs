//! Dense matrix primitives and the Lyapunov machinery behind the weighted
//! energy matrix `P`.
//!
//! Everything here works on `nalgebra` dynamic matrices. The Lyapunov solver
//! uses the vectorized (Kronecker-sum) form, which is fine at the desk-scale
//! dimensions this crate targets.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Real parts within this distance of zero count as non-negative.
pub const HURWITZ_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;

/// Extreme eigenvalues of a symmetric positive-definite matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSummary {
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl SpectralSummary {
    pub fn condition(&self) -> f64 {
        self.gamma_max / self.gamma_min
    }
}

/// Largest real part over the spectrum of a square matrix.
pub fn max_real_eigenvalue(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(a: &Matrix) -> bool {
    if !a.is_square() || a.iter().any(|x| !x.is_finite()) {
        return false;
    }
    max_real_eigenvalue(a) < -HURWITZ_TOL
}

/// Largest singular value. Zero for empty matrices.
pub fn operator_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// 2-norm condition number; infinite when the matrix is singular.
pub fn condition_number(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn max_asymmetry(m: &Matrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn lyapunov_residual(a: &Matrix, p: &Matrix, q: &Matrix) -> Matrix {
    a.transpose() * p + p * a + q
}

/// Solves `AᵀP + PA = -Q` for `P`.
///
/// `A` must be Hurwitz. The unknown is vectorized column-major, giving the
/// system `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = -vec(Q)`, which is solved by fully
/// pivoted LU followed by one step of iterative refinement.
pub fn solve_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let max_re = max_real_eigenvalue(a);
    if !(max_re < -HURWITZ_TOL) {
        return Err(Error::NotHurwitz { max_real_part: max_re });
    }

    let eye = Matrix::identity(n, n);
    let at = a.transpose();
    let kron_sum = eye.kronecker(&at) + at.kronecker(&eye);
    let lu = kron_sum.clone().full_piv_lu();
    if !lu.is_invertible() {
        return Err(Error::Singular("Kronecker-sum system".into()));
    }

    let rhs = -Vector::from_column_slice(q.as_slice());
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Kronecker-sum system".into()))?;
    let mut p = Matrix::from_column_slice(n, n, sol.as_slice());

    let r = lyapunov_residual(a, &p, q);
    let corr_rhs = -Vector::from_column_slice(r.as_slice());
    if let Some(corr) = lu.solve(&corr_rhs) {
        p += Matrix::from_column_slice(n, n, corr.as_slice());
    }
    let p = symmetrize(&p);

    let resid = lyapunov_residual(a, &p, q).norm();
    let tol = 1e-10 * (1.0 + q.norm());
    if !(resid <= tol) {
        return Err(Error::Singular(format!("Lyapunov residual {resid:e} exceeds {tol:e}")));
    }
    Ok(p)
}

/// Extreme eigenvalues of a symmetric positive-definite matrix.
pub fn spectral_bounds(p: &Matrix) -> Result<SpectralSummary> {
    if !p.is_square() || p.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "spectral_bounds needs a non-empty square matrix, got {:?}",
            p.shape()
        )));
    }
    let asym = max_asymmetry(p);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = symmetrize(p).symmetric_eigen();
    let gamma_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let gamma_max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(gamma_min > 0.0) {
        return Err(Error::NotPositiveDefinite(gamma_min));
    }
    Ok(SpectralSummary { gamma_min, gamma_max })
}

/// Floor applied to a vanishing block weight so the block matrix stays
/// positive definite.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Returns the weights `(ξ_u, ξ_v)` after flooring a zero entry to
/// `WEIGHT_FLOOR` times the other one.
pub fn floored_weights(xi_u: f64, xi_v: f64) -> Result<(f64, f64)> {
    if !(xi_u.is_finite() && xi_v.is_finite()) || xi_u < 0.0 || xi_v < 0.0 || xi_u + xi_v <= 0.0 {
        return Err(Error::DegenerateWeights { xi_u, xi_v });
    }
    let xu = if xi_u == 0.0 { WEIGHT_FLOOR * xi_v } else { xi_u };
    let xv = if xi_v == 0.0 { WEIGHT_FLOOR * xi_u } else { xi_v };
    Ok((xu, xv))
}

/// Block-diagonal `P = diag(ξ_v/(ξ_u+ξ_v)·P_u, ξ_u/(ξ_u+ξ_v)·P_v)`.
pub fn build_block_p(p_u: &Matrix, p_v: &Matrix, xi_u: f64, xi_v: f64) -> Result<Matrix> {
    if !p_u.is_square() || !p_v.is_square() {
        return Err(Error::DimensionMismatch("P_u and P_v must be square".into()));
    }
    let (xu, xv) = floored_weights(xi_u, xi_v)?;
    let total = xu + xv;
    let nu = p_u.nrows();
    let nv = p_v.nrows();
    let mut p = Matrix::zeros(nu + nv, nu + nv);
    p.view_mut((0, 0), (nu, nu)).copy_from(&(p_u * (xv / total)));
    p.view_mut((nu, nu), (nv, nv)).copy_from(&(p_v * (xu / total)));
    Ok(p)
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the plain-text matrix format: a `rows cols` line followed by one
/// line per row.
pub fn write_matrix(m: &Matrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// Parses one matrix from a token stream in the plain-text format.
pub fn read_matrix_tokens<'a, I>(tokens: &mut I) -> Result<Matrix>
where
    I: Iterator<Item = &'a str>,
{
    let mut next_usize = |what: &str| -> Result<usize> {
        let tok = tokens.next().ok_or_else(|| Error::Parse(format!("missing {what}")))?;
        tok.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad {what}: {tok:?}")))
    };
    let rows = next_usize("row count")?;
    let cols = next_usize("column count")?;
    let mut data = Vec::with_capacity(rows * cols);
    for idx in 0..rows * cols {
        let tok = tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("matrix truncated at entry {idx}")))?;
        let x: f64 = tok
            .parse()
            .map_err(|_| Error::Parse(format!("bad matrix entry {tok:?}")))?;
        if !x.is_finite() {
            return Err(Error::Parse(format!("non-finite matrix entry {tok:?}")));
        }
        data.push(x);
    }
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut tokens = text.split_whitespace();
    let m = read_matrix_tokens(&mut tokens)?;
    if let Some(extra) = tokens.next() {
        return Err(Error::Parse(format!("trailing token {extra:?}")));
    }
    Ok(m)
}
