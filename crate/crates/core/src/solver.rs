//! Direct solution of the assembled system and 1-norm condition estimates.
//!
//! Factorizations come from `faer`: dense LU with partial pivoting below
//! [`DENSE_LIMIT`] unknowns, sparse LU above.

use std::time::Instant;

use faer::linalg::solvers::{PartialPivLu, SolveCore};
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{c64, Conj, Mat};
use num_complex::Complex64;
use thiserror::Error;

use crate::assembly::{AssembledSystem, BlockSparseMatrix};

/// Systems with fewer unknowns use a dense factorization.
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("right-hand side has length {rhs}, matrix dimension is {dim}")]
    DimensionMismatch { dim: usize, rhs: usize },
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Dense,
    Sparse,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vec<Complex64>,
    /// `||M x - b|| / ||b||` recomputed from the block-sparse matrix
    /// (`||M x||` when `b = 0`).
    pub relative_residual: f64,
    /// 1-norm condition estimate, `+inf` if singular.
    pub condition: f64,
    pub factor_seconds: f64,
    pub solve_seconds: f64,
    pub backend: Backend,
}

enum Factor {
    Dense(PartialPivLu<c64>),
    Sparse(Lu<usize, c64>),
}

/// LU factorization of a block-sparse matrix.
pub struct Factorization {
    factor: Factor,
    dim: usize,
    norm_one: f64,
}

fn column_norm_one(matrix: &BlockSparseMatrix) -> f64 {
    let mut sums = vec![0.0; matrix.dim()];
    for (_, j, v) in matrix.triplets() {
        sums[j] += v.norm();
    }
    sums.into_iter().fold(0.0, f64::max)
}

impl Factorization {
    pub fn new(matrix: &BlockSparseMatrix) -> Result<Self, SolverError> {
        Self::with_backend(matrix, if matrix.dim() < DENSE_LIMIT { Backend::Dense } else { Backend::Sparse })
    }

    pub fn with_backend(matrix: &BlockSparseMatrix, backend: Backend) -> Result<Self, SolverError> {
        let n = matrix.dim();
        let factor = match backend {
            Backend::Dense => {
                let mut dense = Mat::<c64>::zeros(n, n);
                for (i, j, v) in matrix.triplets() {
                    dense[(i, j)] = v;
                }
                let lu = dense.partial_piv_lu();
                let u = lu.U();
                if (0..n).any(|k| {
                    let d = u[(k, k)];
                    d == c64::new(0.0, 0.0) || !d.re.is_finite() || !d.im.is_finite()
                }) {
                    return Err(SolverError::Singular);
                }
                Factor::Dense(lu)
            }
            Backend::Sparse => {
                let triplets: Vec<Triplet<usize, usize, c64>> =
                    matrix.triplets().map(|(row, col, val)| Triplet { row, col, val }).collect();
                let sparse = SparseColMat::<usize, c64>::try_new_from_triplets(n, n, &triplets)
                    .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
                let lu = sparse.sp_lu().map_err(|e| match e {
                    faer::sparse::linalg::LuError::SymbolicSingular { .. } => SolverError::Singular,
                    other => SolverError::Factorization(format!("{other:?}")),
                })?;
                Factor::Sparse(lu)
            }
        };
        Ok(Self { factor, dim: n, norm_one: column_norm_one(matrix) })
    }

    pub fn backend(&self) -> Backend {
        match self.factor {
            Factor::Dense(_) => Backend::Dense,
            Factor::Sparse(_) => Backend::Sparse,
        }
    }

    fn apply(&self, b: &[Complex64], adjoint: bool) -> Result<Vec<Complex64>, SolverError> {
        if b.len() != self.dim {
            return Err(SolverError::DimensionMismatch { dim: self.dim, rhs: b.len() });
        }
        let mut rhs = Mat::<c64>::from_fn(self.dim, 1, |i, _| b[i]);
        let solver: &dyn SolveCore<c64> = match &self.factor {
            Factor::Dense(lu) => lu,
            Factor::Sparse(lu) => lu,
        };
        if adjoint {
            solver.solve_transpose_in_place_with_conj(Conj::Yes, rhs.as_mut());
        } else {
            solver.solve_in_place_with_conj(Conj::No, rhs.as_mut());
        }
        let x: Vec<Complex64> = (0..self.dim).map(|i| rhs[(i, 0)]).collect();
        if x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            Ok(x)
        } else {
            Err(SolverError::Singular)
        }
    }

    /// `M^{-1} b`.
    pub fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>, SolverError> {
        self.apply(b, false)
    }

    /// `M^{-H} b`.
    pub fn solve_adjoint(&self, b: &[Complex64]) -> Result<Vec<Complex64>, SolverError> {
        self.apply(b, true)
    }

    /// Hager-Higham estimate of `||M||_1 ||M^{-1}||_1`; `+inf` if a solve breaks
    /// down.
    pub fn condition_estimate(&self) -> f64 {
        self.inverse_norm_estimate().map_or(f64::INFINITY, |inv| (self.norm_one * inv).max(1.0))
    }

    fn inverse_norm_estimate(&self) -> Result<f64, SolverError> {
        let n = self.dim;
        if n == 0 {
            return Ok(0.0);
        }
        let norm1 = |v: &[Complex64]| v.iter().map(|z| z.norm()).sum::<f64>();
        let mut x = vec![Complex64::new(1.0 / n as f64, 0.0); n];
        let mut estimate = 0.0;
        let mut last_index = usize::MAX;
        for _ in 0..5 {
            let y = self.solve(&x)?;
            let candidate = norm1(&y);
            if candidate <= estimate && last_index != usize::MAX {
                break;
            }
            estimate = candidate;
            let sign: Vec<Complex64> =
                y.iter().map(|z| if z.norm() > 0.0 { z / z.norm() } else { Complex64::new(1.0, 0.0) }).collect();
            let z = self.solve_adjoint(&sign)?;
            let (j, zmax) = z.iter().enumerate().fold(
                (0, 0.0),
                |(bj, bm), (k, v)| {
                    if v.norm() > bm {
                        (k, v.norm())
                    } else {
                        (bj, bm)
                    }
                },
            );
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
            if zmax <= ztx || j == last_index {
                break;
            }
            last_index = j;
            x = vec![Complex64::new(0.0, 0.0); n];
            x[j] = Complex64::new(1.0, 0.0);
        }
        // Higham's alternating test vector guards against unlucky iterations.
        let alt: Vec<Complex64> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                Complex64::new(s * (1.0 + t), 0.0)
            })
            .collect();
        let alt_estimate = 2.0 * norm1(&self.solve(&alt)?) / (3.0 * n as f64);
        Ok(estimate.max(alt_estimate))
    }
}

fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `||M x - b|| / ||b||` (or `||M x||` for `b = 0`).
pub fn relative_residual(matrix: &BlockSparseMatrix, x: &[Complex64], b: &[Complex64]) -> f64 {
    let mx = matrix.matvec(x);
    let r: Vec<Complex64> = mx.iter().zip(b).map(|(a, c)| a - c).collect();
    let nb = norm2(b);
    if nb > 0.0 {
        norm2(&r) / nb
    } else {
        norm2(&r)
    }
}

pub fn solve_direct(system: &AssembledSystem) -> Result<SolveReport, SolverError> {
    let dim = system.matrix.dim();
    if system.rhs.len() != dim {
        return Err(SolverError::DimensionMismatch { dim, rhs: system.rhs.len() });
    }
    let start = Instant::now();
    let factor = Factorization::new(&system.matrix)?;
    let factor_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let solution = factor.solve(&system.rhs)?;
    let solve_seconds = start.elapsed().as_secs_f64();
    let condition = factor.condition_estimate();
    let relative_residual = relative_residual(&system.matrix, &solution, &system.rhs);
    if condition <= 1e12 && relative_residual > 1e-8 {
        log::warn!("relative residual {relative_residual:e} with condition estimate {condition:e}");
    }
    Ok(SolveReport { solution, relative_residual, condition, factor_seconds, solve_seconds, backend: factor.backend() })
}

/// 1-norm condition estimate of `matrix`; `+inf` if it is singular.
pub fn condition_estimate(matrix: &BlockSparseMatrix) -> f64 {
    Factorization::new(matrix).map_or(f64::INFINITY, |f| f.condition_estimate())
}
