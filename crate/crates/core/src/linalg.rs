//! Dense real-matrix kernel.
//!
//! Storage, products and SVD come from `nalgebra`, general eigenvalues from
//! `faer`. The Riccati and
//! Lyapunov solvers are plain fixed-point iterations, which converge quickly at
//! the dimensions this crate works with (n <= 8, r <= 12, stacked systems a few
//! dozen rows).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITER: usize = 100_000;
const DLE_TOL: f64 = 1e-13;
const DLE_MAX_ITER: usize = 200_000;
const RESIDUAL_TOL: f64 = 1e-9;

/// Largest eigenvalue modulus and largest singular value of a square matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub radius: f64,
    pub norm2: f64,
}

impl Spectrum {
    pub fn of(m: &Matrix) -> Result<Self> {
        Ok(Self {
            radius: spectral_radius(m)?,
            norm2: spectral_norm(m),
        })
    }
}

/// Builds a matrix from row-major nested rows, rejecting ragged or non-finite input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Dimension("matrix must have at least one row and column".into()));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    let m = Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(&m)?;
    Ok(m)
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn ensure_finite(m: &Matrix) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn ensure_square(m: &Matrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Kronecker product: block (i, j) of the result is `a[(i, j)] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows = blocks.iter().map(Matrix::nrows).sum();
    let cols = blocks.iter().map(Matrix::ncols).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// N x N all-ones matrix.
pub fn ones(n: usize) -> Matrix {
    Matrix::from_element(n, n, 1.0)
}

/// Max |lambda_i(M)| over the complete spectrum.
///
/// Uses faer's eigenvalue solver: nalgebra's real Schur iteration stalls on
/// the block-decoupled fusion matrices, which carry repeated eigenvalues.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    let n = ensure_square(m)?;
    if n == 1 {
        return Ok(m[(0, 0)].abs());
    }
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let eig = fm.eigenvalues().map_err(|_| Error::Eigen)?;
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    m.singular_values().max()
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Matrix) -> Result<f64> {
    ensure_square(m)?;
    Ok(symmetrize(m).symmetric_eigenvalues().min())
}

/// `M^k` by repeated squaring.
pub fn mat_pow(m: &Matrix, mut k: usize) -> Result<Matrix> {
    let n = ensure_square(m)?;
    let mut result = Matrix::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    Ok(result)
}

fn check_dims(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Dimension(what()))
    }
}

fn riccati_map(a: &Matrix, c: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let s = c * p * c.transpose() + r;
    let cpa = c * p * a.transpose();
    let correction = s
        .lu()
        .solve(&cpa)
        .ok_or_else(|| Error::Precondition("innovation covariance CPC' + R is singular".into()))?;
    Ok(symmetrize(&(a * p * a.transpose() + q - a * p * c.transpose() * correction)))
}

/// Spectral norm of `P - (APA' + Q - APC'(CPC'+R)^-1 CPA')`.
pub fn dare_residual(a: &Matrix, c: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    Ok(spectral_norm(&(p - riccati_map(a, c, q, r, p)?)))
}

/// Solves the filtering-form discrete algebraic Riccati equation
///
/// `P = APA' + Q - APC'(CPC' + R)^-1 CPA'`
///
/// by iterating the Riccati recursion from `P0 = Q`.
pub fn solve_dare(a: &Matrix, c: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let n = ensure_square(a)?;
    let m = ensure_square(r)?;
    check_dims(q.shape() == (n, n), || format!("Q is {:?}, expected {n}x{n}", q.shape()))?;
    check_dims(c.shape() == (m, n), || format!("C is {:?}, expected {m}x{n}", c.shape()))?;

    let mut p = symmetrize(q);
    let mut step = f64::INFINITY;
    for _ in 0..DARE_MAX_ITER {
        let next = riccati_map(a, c, q, r, &p)?;
        ensure_finite(&next)?;
        step = spectral_norm(&(&next - &p));
        p = next;
        if step <= DARE_TOL * (1.0 + spectral_norm(&p)) {
            let residual = dare_residual(a, c, q, r, &p)?;
            if residual > RESIDUAL_TOL * (1.0 + spectral_norm(&p)) {
                return Err(Error::NoConvergence {
                    what: "Riccati iteration",
                    iterations: DARE_MAX_ITER,
                    residual,
                });
            }
            return Ok(p);
        }
    }
    Err(Error::NoConvergence {
        what: "Riccati iteration",
        iterations: DARE_MAX_ITER,
        residual: step,
    })
}

/// Solves the discrete Lyapunov equation `X = F X F' + Phi` for Schur-stable `F`
/// by summing `X_{k+1} = F X_k F' + Phi` from `X_0 = Phi`.
pub fn solve_dle(f: &Matrix, phi: &Matrix) -> Result<Matrix> {
    let n = ensure_square(f)?;
    check_dims(phi.shape() == (n, n), || {
        format!("Phi is {:?}, expected {n}x{n}", phi.shape())
    })?;
    let rho = spectral_radius(f)?;
    if rho >= 1.0 {
        return Err(Error::Precondition(format!(
            "Lyapunov solve needs a Schur-stable matrix, spectral radius is {rho}"
        )));
    }

    let ft = f.transpose();
    let mut x = phi.clone();
    let mut step = f64::INFINITY;
    for _ in 0..DLE_MAX_ITER {
        let next = symmetrize(&(f * &x * &ft + phi));
        step = spectral_norm(&(&next - &x));
        x = next;
        if step <= DLE_TOL * (1.0 + spectral_norm(&x)) {
            let residual = spectral_norm(&(&x - f * &x * &ft - phi));
            if residual > RESIDUAL_TOL * (1.0 + spectral_norm(&x)) {
                break;
            }
            return Ok(x);
        }
    }
    Err(Error::NoConvergence {
        what: "Lyapunov iteration",
        iterations: DLE_MAX_ITER,
        residual: step,
    })
}

/// Binomial coefficient as a float; zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Upper bound on `||M^k||_2` from the spectral radius and spectral norm:
///
/// `sqrt(n) * sum_{j<n} C(n-1, j) C(k, j) ||M||^j rho(M)^(k-j)`.
pub fn power_norm_bound(m: &Matrix, k: usize) -> Result<f64> {
    let n = ensure_square(m)?;
    let rho = spectral_radius(m)?;
    let norm = spectral_norm(m);
    let sum: f64 = (0..n.min(k + 1))
        .map(|j| binomial(n - 1, j) * binomial(k, j) * norm.powi(j as i32) * rho.powi((k - j) as i32))
        .sum();
    Ok((n as f64).sqrt() * sum)
}
