//! Gaussian belief propagation (GaBP) solver and linear multiuser detectors.
//!
//! The crate solves symmetric linear systems by GaBP message passing and uses
//! the augmented symmetric embedding `[[I, S^T], [S, -Psi]]` to compute MMSE,
//! decorrelator and pseudoinverse CDMA detectors without forming `S^T S`.

pub mod dense;
pub mod detectors;
pub mod diagnostics;
pub mod error;
pub mod gabp;
pub mod io;
pub mod matrix;
pub mod montanari;
pub mod simulator;

pub use error::{Error, Result};
pub use gabp::{Clipping, Schedule, SolveResult, SolverConfig};
pub use matrix::{NoiseCovariance, RectangularMatrix, SparseSymmetricMatrix, Vector};
