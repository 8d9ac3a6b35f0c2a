//! Vector and matrix types, plus the augmented symmetric embedding of a
//! rectangular detection problem.
//!
//! The spreading matrix is stored with one row per chip and one column per
//! user, so `S x` maps a length-`k` symbol vector to a length-`n` chip
//! vector. The augmented system
//!
//! ```text
//!     [ I_k   S^T ] [ x ]   [ 0 ]
//!     [ S    -Psi ] [ z ] = [ y ]
//! ```
//!
//! has `k + n` variables, users first, and one undirected off-diagonal pair
//! per nonzero spreading entry.

use std::collections::BTreeMap;
use std::ops::Deref;

use crate::error::{Error, Result};

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// A dense real vector with finite entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        check_finite(&entries)?;
        Ok(Vector(entries))
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Largest absolute entrywise difference. Panics on length mismatch.
    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        assert_eq!(self.len(), other.len(), "length mismatch");
        self.iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_vec_unchecked(entries: Vec<f64>) -> Self {
        Vector(entries)
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

/// Symmetric matrix stored as its diagonal plus the strictly upper
/// off-diagonal nonzeros. Each stored `(i, j, v)` with `i < j` stands for
/// both `A[i][j]` and `A[j][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricMatrix {
    diagonal: Vec<f64>,
    off_diagonal: Vec<(usize, usize, f64)>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl SparseSymmetricMatrix {
    /// Builds a matrix from its diagonal and off-diagonal entries given in any
    /// orientation. Zero off-diagonal values are dropped; giving both `(i, j)`
    /// and `(j, i)` is an error.
    pub fn new(
        diagonal: Vec<f64>,
        off_diagonal: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let dim = diagonal.len();
        if dim == 0 {
            return Err(Error::EmptyMatrix);
        }
        check_finite(&diagonal)?;
        let mut upper = BTreeMap::new();
        for (row, col, value) in off_diagonal {
            if row >= dim || col >= dim {
                return Err(Error::IndexOutOfBounds { row, col, dim });
            }
            if row == col {
                return Err(Error::DuplicateEntry { row, col });
            }
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    index: row * dim + col,
                    value,
                });
            }
            let key = (row.min(col), row.max(col));
            if upper.insert(key, value).is_some() {
                return Err(Error::DuplicateEntry { row, col });
            }
        }
        let off_diagonal: Vec<_> = upper
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((i, j), v)| (i, j, v))
            .collect();
        let mut neighbors = vec![Vec::new(); dim];
        for &(i, j, v) in &off_diagonal {
            neighbors[i].push((j, v));
            neighbors[j].push((i, v));
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(j, _)| j);
        }
        Ok(SparseSymmetricMatrix {
            diagonal,
            off_diagonal,
            neighbors,
        })
    }

    /// Builds a matrix from `(row, col, value)` triplets where diagonal
    /// entries appear as `(i, i, value)`. Missing diagonal entries are zero.
    pub fn from_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyMatrix);
        }
        let mut diagonal = vec![0.0; dim];
        let mut seen_diag = vec![false; dim];
        let mut off = Vec::new();
        for (row, col, value) in triplets {
            if row >= dim || col >= dim {
                return Err(Error::IndexOutOfBounds { row, col, dim });
            }
            if row == col {
                if std::mem::replace(&mut seen_diag[row], true) {
                    return Err(Error::DuplicateEntry { row, col });
                }
                diagonal[row] = value;
            } else {
                off.push((row, col, value));
            }
        }
        Self::new(diagonal, off)
    }

    /// Builds a symmetric matrix from a dense row-major square array, reading
    /// the upper triangle. Entries below the diagonal are ignored.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "dense row length",
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        let diagonal = (0..dim).map(|i| rows[i][i]).collect();
        let off = (0..dim).flat_map(|i| ((i + 1)..dim).map(move |j| (i, j, rows[i][j])));
        Self::new(diagonal, off)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(vec![1.0; dim], std::iter::empty())
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Stored strictly-upper entries `(i, j, v)` with `i < j`, sorted.
    pub fn off_diagonal(&self) -> &[(usize, usize, f64)] {
        &self.off_diagonal
    }

    /// Neighbors of `i` with the connecting entry value, sorted by index.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Number of stored undirected off-diagonal pairs.
    pub fn undirected_edges(&self) -> usize {
        self.off_diagonal.len()
    }

    /// Number of directed message slots GaBP keeps on this matrix.
    pub fn directed_edges(&self) -> usize {
        2 * self.off_diagonal.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diagonal[i];
        }
        let (lo, hi) = (i.min(j), i.max(j));
        self.neighbors[lo]
            .binary_search_by_key(&hi, |&(n, _)| n)
            .map(|pos| self.neighbors[lo][pos].1)
            .unwrap_or(0.0)
    }

    /// Sum of `|A_ij|` over `i != j` for column `j`.
    pub fn off_diagonal_abs_sum(&self, j: usize) -> f64 {
        self.neighbors[j].iter().map(|&(_, v)| v.abs()).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "vector length",
                expected: self.dim(),
                got: x.len(),
            });
        }
        let out = (0..self.dim())
            .map(|i| {
                self.diagonal[i] * x[i]
                    + self.neighbors[i]
                        .iter()
                        .map(|&(j, v)| v * x[j])
                        .sum::<f64>()
            })
            .collect();
        Ok(Vector(out))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            out[i][i] = self.diagonal[i];
        }
        for &(i, j, v) in &self.off_diagonal {
            out[i][j] = v;
            out[j][i] = v;
        }
        out
    }

    /// Same off-diagonal structure with a replaced diagonal.
    pub fn with_diagonal(&self, diagonal: Vec<f64>) -> Result<Self> {
        if diagonal.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "diagonal length",
                expected: self.dim(),
                got: diagonal.len(),
            });
        }
        check_finite(&diagonal)?;
        Ok(SparseSymmetricMatrix {
            diagonal,
            off_diagonal: self.off_diagonal.clone(),
            neighbors: self.neighbors.clone(),
        })
    }
}

/// Dense `rows x cols` real matrix, row-major. Used for the spreading matrix
/// with one row per chip and one column per user.
#[derive(Debug, Clone, PartialEq)]
pub struct RectangularMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RectangularMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix data length",
                expected: rows * cols,
                got: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(RectangularMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "row length",
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, data)
    }

    /// Number of chips `n`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of users `k`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn nonzeros(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    /// `S x` for a length-`cols` vector.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                what: "user vector length",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(Vector(
            (0..self.rows)
                .map(|r| self.row(r).iter().zip(x).map(|(s, v)| s * v).sum())
                .collect(),
        ))
    }

    /// `S^T y` for a length-`rows` vector.
    pub fn transpose_mul_vec(&self, y: &[f64]) -> Result<Vector> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch {
                what: "chip vector length",
                expected: self.rows,
                got: y.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            for (o, s) in out.iter_mut().zip(self.row(r)) {
                *o += s * yr;
            }
        }
        Ok(Vector(out))
    }

    /// Largest absolute row sum, i.e. the largest off-diagonal column sum
    /// of a chip column in the augmented matrix.
    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Diagonal noise covariance, one nonnegative variance per received chip.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance(Vec<f64>);

impl NoiseCovariance {
    pub fn new(diagonal: Vec<f64>) -> Result<Self> {
        if diagonal.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        check_finite(&diagonal)?;
        if let Some(index) = diagonal.iter().position(|&v| v < 0.0) {
            return Err(Error::NegativeNoise {
                index,
                value: diagonal[index],
            });
        }
        Ok(NoiseCovariance(diagonal))
    }

    pub fn uniform(len: usize, variance: f64) -> Result<Self> {
        Self::new(vec![variance; len])
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// The common variance when every chip has the same one.
    pub fn uniform_value(&self) -> Option<f64> {
        let first = self.0[0];
        self.0.iter().all(|&v| v == first).then_some(first)
    }
}

/// Builds `[[I_k, S^T], [S, -Psi]]`. Users occupy indices `0..k`, chips
/// `k..k+n`; every nonzero `S[a][i]` becomes the undirected pair `(i, k + a)`.
pub fn build_augmented(
    spreading: &RectangularMatrix,
    noise: &NoiseCovariance,
) -> Result<SparseSymmetricMatrix> {
    let (n, k) = (spreading.rows(), spreading.cols());
    if noise.len() != n {
        return Err(Error::DimensionMismatch {
            what: "noise covariance length",
            expected: n,
            got: noise.len(),
        });
    }
    let diagonal = std::iter::repeat_n(1.0, k)
        .chain(
            noise
                .diagonal()
                .iter()
                .map(|&p| if p == 0.0 { 0.0 } else { -p }),
        )
        .collect();
    let off = (0..k).flat_map(|i| (0..n).map(move |a| (i, k + a, spreading.get(a, i))));
    SparseSymmetricMatrix::new(diagonal, off)
}

/// `k` zeros followed by the observation.
pub fn build_augmented_rhs(observation: &[f64], users: usize) -> Result<Vector> {
    check_finite(observation)?;
    let mut out = vec![0.0; users];
    out.extend_from_slice(observation);
    Ok(Vector(out))
}
