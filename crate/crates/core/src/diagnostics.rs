//! Sufficient convergence conditions for GaBP on a symmetric system.
//!
//! Three checks are provided: strict column diagonal dominance, the
//! per-chip noise threshold for augmented CDMA systems, and walk-summability.
//! Walk-summability is evaluated as `rho(|R|) < 1`, where `R` is the
//! off-diagonal part of `D^-1/2 A D^-1/2` with `D = |diag(A)|`. For a positive
//! diagonal this is the usual `rho(|I - D^-1/2 A D^-1/2|)`; taking `|diag|`
//! lets the indefinite augmented matrix (negative chip diagonal) be normalized.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{build_augmented, NoiseCovariance, RectangularMatrix, SparseSymmetricMatrix};

const POWER_MAX_ITERATIONS: usize = 100_000;
const POWER_TOLERANCE: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub is_diagonally_dominant: bool,
    /// Minimum over columns of `|A_jj| - sum_{i != j} |A_ij|`.
    pub dd_margin: f64,
    pub noise_threshold_satisfied: bool,
    /// Largest absolute row sum of `S` (`k / sqrt(n)` for normalized binary spreading).
    pub noise_threshold_value: f64,
    pub min_noise: f64,
    pub walk_summable: bool,
    /// Infinite when the matrix has a zero diagonal entry.
    pub spectral_radius_estimate: f64,
    /// Total diagonal increase `regularize_dd` would apply with the given epsilon.
    pub regularization_total: f64,
    pub regularization_epsilon: f64,
}

/// Strict column diagonal dominance. Returns the flag and the minimum slack
/// over columns, which is positive exactly when the flag is set.
pub fn check_diagonal_dominance(matrix: &SparseSymmetricMatrix) -> (bool, f64) {
    let margin = (0..matrix.dim())
        .map(|j| matrix.diagonal()[j].abs() - matrix.off_diagonal_abs_sum(j))
        .fold(f64::INFINITY, f64::min);
    (margin > 0.0, margin)
}

/// Whether every chip variance exceeds the largest absolute row sum of the
/// spreading matrix. That makes the last `n` columns of the augmented matrix
/// strictly diagonally dominant.
pub fn noise_threshold_check(
    spreading: &RectangularMatrix,
    noise: &NoiseCovariance,
) -> Result<(bool, f64)> {
    if noise.len() != spreading.rows() {
        return Err(Error::DimensionMismatch {
            what: "noise covariance length",
            expected: spreading.rows(),
            got: noise.len(),
        });
    }
    let threshold = spreading.max_abs_row_sum();
    Ok((noise.min() > threshold, threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regularized {
    pub matrix: SparseSymmetricMatrix,
    /// Amount added to `|A_jj|` per column; zero where no change was needed.
    pub additions: Vec<f64>,
}

impl Regularized {
    pub fn total(&self) -> f64 {
        self.additions.iter().sum()
    }
}

/// Raises each deficient diagonal magnitude until its column slack is at
/// least `epsilon`. The sign of each diagonal entry is kept (zero counts as
/// positive). Off-diagonal entries are untouched.
pub fn regularize_dd(matrix: &SparseSymmetricMatrix, epsilon: f64) -> Result<Regularized> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", "must be positive and finite"));
    }
    let mut diagonal = matrix.diagonal().to_vec();
    let mut additions = vec![0.0; diagonal.len()];
    for (j, d) in diagonal.iter_mut().enumerate() {
        let off = matrix.off_diagonal_abs_sum(j);
        if d.abs() - off >= epsilon {
            continue;
        }
        let mut magnitude = off + epsilon;
        while magnitude - off < epsilon {
            magnitude = magnitude.next_up();
        }
        additions[j] = magnitude - d.abs();
        *d = if *d < 0.0 { -magnitude } else { magnitude };
    }
    Ok(Regularized {
        matrix: matrix.with_diagonal(diagonal)?,
        additions,
    })
}

/// Spectral radius of the normalized absolute off-diagonal matrix, by
/// shifted power iteration with a Rayleigh-quotient estimate.
pub fn walk_summability_check(matrix: &SparseSymmetricMatrix) -> Result<(bool, f64)> {
    if let Some(index) = matrix.diagonal().iter().position(|&d| d == 0.0) {
        return Err(Error::ZeroDiagonal { index });
    }
    let dim = matrix.dim();
    if matrix.undirected_edges() == 0 {
        return Ok((true, 0.0));
    }
    let scale: Vec<f64> = matrix.diagonal().iter().map(|d| d.abs().sqrt()).collect();
    let normalized: Vec<Vec<(usize, f64)>> = (0..dim)
        .map(|i| {
            matrix
                .neighbors(i)
                .iter()
                .map(|&(j, v)| (j, v.abs() / (scale[i] * scale[j])))
                .collect()
        })
        .collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        for (i, row) in normalized.iter().enumerate() {
            out[i] = row.iter().map(|&(j, v)| v * x[j]).sum();
        }
    };

    // The matrix is nonnegative, so rho is its largest eigenvalue; a bipartite
    // graph also has -rho, which the positive shift separates.
    let gershgorin = normalized
        .iter()
        .map(|row| row.iter().map(|&(_, v)| v).sum::<f64>())
        .fold(0.0, f64::max);
    let shift = 0.5 * gershgorin;

    let mut x = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut mx = vec![0.0; dim];
    let mut rho = 0.0;
    for _ in 0..POWER_MAX_ITERATIONS {
        apply(&x, &mut mx);
        let estimate: f64 = x.iter().zip(&mx).map(|(a, b)| a * b).sum();
        for (m, xi) in mx.iter_mut().zip(&x) {
            *m += shift * xi;
        }
        let norm = mx.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        for (xi, m) in x.iter_mut().zip(&mx) {
            *xi = m / norm;
        }
        let done = (estimate - rho).abs() <= POWER_TOLERANCE * estimate.max(1.0);
        rho = estimate;
        if done {
            break;
        }
    }
    Ok((rho < 1.0, rho))
}

/// Runs every check on the augmented system of `(spreading, noise)`.
pub fn diagnose(
    spreading: &RectangularMatrix,
    noise: &NoiseCovariance,
    epsilon: f64,
) -> Result<DiagnosticsReport> {
    let augmented = build_augmented(spreading, noise)?;
    let (is_dd, dd_margin) = check_diagonal_dominance(&augmented);
    let (noise_ok, threshold) = noise_threshold_check(spreading, noise)?;
    let (walk_summable, rho) = match walk_summability_check(&augmented) {
        Ok(pair) => pair,
        Err(Error::ZeroDiagonal { .. }) => (false, f64::INFINITY),
        Err(e) => return Err(e),
    };
    let regularized = regularize_dd(&augmented, epsilon)?;
    Ok(DiagnosticsReport {
        is_diagonally_dominant: is_dd,
        dd_margin,
        noise_threshold_satisfied: noise_ok,
        noise_threshold_value: threshold,
        min_noise: noise.min(),
        walk_summable,
        spectral_radius_estimate: rho,
        regularization_total: regularized.total(),
        regularization_epsilon: epsilon,
    })
}
