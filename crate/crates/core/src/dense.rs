//! Small dense direct solves used to audit iterative results.

use crate::error::{Error, Result};
use crate::matrix::{NoiseCovariance, RectangularMatrix};

/// Gaussian elimination with partial pivoting. `a` is row-major and square.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            what: "right-hand side length",
            expected: n,
            got: b.len(),
        });
    }
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot][col].abs() <= f64::EPSILON * scale * n as f64 {
            return Err(Error::Singular);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// `(I + S^T Psi^-1 S)^-1 S^T Psi^-1 y`, the MMSE estimate for unit-power
/// users and chip noise covariance `Psi`. Every chip variance must be positive.
pub fn mmse_estimate(
    spreading: &RectangularMatrix,
    noise: &NoiseCovariance,
    observation: &[f64],
) -> Result<Vec<f64>> {
    let (n, k) = (spreading.rows(), spreading.cols());
    if noise.diagonal().contains(&0.0) {
        return Err(Error::invalid(
            "noise",
            "MMSE estimate needs positive variances",
        ));
    }
    let weights: Vec<f64> = noise.diagonal().iter().map(|p| 1.0 / p).collect();
    let mut gram = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for a in 0..n {
        let row = spreading.row(a);
        for i in 0..k {
            rhs[i] += row[i] * weights[a] * observation[a];
            for j in 0..k {
                gram[i][j] += row[i] * weights[a] * row[j];
            }
        }
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    solve(gram, rhs)
}

/// `(S^T S)^-1 S^T y` via the normal equations.
pub fn least_squares(spreading: &RectangularMatrix, observation: &[f64]) -> Result<Vec<f64>> {
    let (n, k) = (spreading.rows(), spreading.cols());
    let mut gram = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for a in 0..n {
        let row = spreading.row(a);
        for i in 0..k {
            rhs[i] += row[i] * observation[a];
            for j in 0..k {
                gram[i][j] += row[i] * row[j];
            }
        }
    }
    solve(gram, rhs)
}
