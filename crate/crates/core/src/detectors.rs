//! Linear multiuser detectors.
//!
//! Observations are raw chip samples `y = S x + noise`. The matched filter
//! correlates them with each user's signature; the other detectors solve the
//! augmented symmetric system by GaBP and keep the first `k` posterior means.
//! `S^T S` is never formed.
//!
//! Solving `[[I, S^T], [S, -Psi]] [x; z] = [0; y]` gives `x = -S^T z` and
//! `z = Psi^-1 (S x - y)`, hence `(I + S^T Psi^-1 S) x = S^T Psi^-1 y`. With
//! `Psi = sigma^2 I` this is the MMSE estimate `(S^T S + sigma^2 I)^-1 S^T y`,
//! and as `Psi -> 0` it tends to the pseudoinverse solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabp::{self, Clipping, SolveResult, SolverConfig};
use crate::matrix::{
    build_augmented, build_augmented_rhs, NoiseCovariance, RectangularMatrix, Vector,
};

/// Chip variance substituted for zero noise so that every augmented diagonal
/// entry is nonzero. Perturbs the estimate by `O(eta)`.
pub const DEFAULT_ETA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "mf")]
    MatchedFilter,
    #[serde(rename = "zf")]
    Decorrelator,
    #[serde(rename = "mmse")]
    Mmse,
    #[serde(rename = "pinv")]
    Pseudoinverse,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::MatchedFilter,
        DetectorKind::Decorrelator,
        DetectorKind::Mmse,
        DetectorKind::Pseudoinverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::MatchedFilter => "mf",
            DetectorKind::Decorrelator => "zf",
            DetectorKind::Mmse => "mmse",
            DetectorKind::Pseudoinverse => "pinv",
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "detector",
                    format!("unknown detector {s:?}; expected mf, zf, mmse or pinv"),
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub clipping: Clipping,
}

impl DetectorSpec {
    pub fn new(kind: DetectorKind, clipping: Clipping) -> Self {
        DetectorSpec { kind, clipping }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Clipped estimates, one per user.
    pub decisions: Vector,
    /// Estimates before clipping.
    pub raw: Vector,
    /// Solver output on the augmented system (users first, then chips).
    /// `None` for the matched filter.
    pub solve: Option<SolveResult>,
}

impl Detection {
    pub fn converged(&self) -> bool {
        self.solve.as_ref().is_none_or(|s| s.converged)
    }

    pub fn iterations(&self) -> usize {
        self.solve.as_ref().map_or(0, |s| s.iterations)
    }
}

fn check_observation(spreading: &RectangularMatrix, observation: &[f64]) -> Result<()> {
    if observation.len() != spreading.rows() {
        return Err(Error::DimensionMismatch {
            what: "observation length",
            expected: spreading.rows(),
            got: observation.len(),
        });
    }
    Ok(())
}

/// `Delta(S^T y)`.
pub fn detect_mf(
    spreading: &RectangularMatrix,
    observation: &[f64],
    clipping: Clipping,
) -> Result<Detection> {
    check_observation(spreading, observation)?;
    let raw = spreading.transpose_mul_vec(observation)?;
    Ok(Detection {
        decisions: gabp::decide(&raw, clipping),
        raw,
        solve: None,
    })
}

fn detect_augmented(
    spreading: &RectangularMatrix,
    noise: &NoiseCovariance,
    observation: &[f64],
    clipping: Clipping,
    config: &SolverConfig,
) -> Result<Detection> {
    check_observation(spreading, observation)?;
    let users = spreading.cols();
    let matrix = build_augmented(spreading, noise)?;
    let rhs = build_augmented_rhs(observation, users)?;
    let solve = gabp::run(&matrix, &rhs, config)?;
    let raw = Vector::new(solve.means[..users].to_vec())?;
    Ok(Detection {
        decisions: gabp::decide(&raw, clipping),
        raw,
        solve: Some(solve),
    })
}

/// MMSE estimate `(I + S^T Psi^-1 S)^-1 S^T Psi^-1 y` by GaBP on the
/// augmented system. Every chip variance must be positive.
pub fn detect_mmse(
    spreading: &RectangularMatrix,
    noise: &NoiseCovariance,
    observation: &[f64],
    clipping: Clipping,
    config: &SolverConfig,
) -> Result<Detection> {
    if let Some(index) = noise.diagonal().iter().position(|&v| v == 0.0) {
        return Err(Error::invalid(
            "noise",
            format!("chip {index} has zero variance; use the pseudoinverse detector"),
        ));
    }
    detect_augmented(spreading, noise, observation, clipping, config)
}

/// Least-squares estimate `(S^T S)^-1 S^T y` through the augmented system with
/// every chip variance set to `eta`.
pub fn detect_pseudoinverse_with_eta(
    spreading: &RectangularMatrix,
    observation: &[f64],
    clipping: Clipping,
    eta: f64,
    config: &SolverConfig,
) -> Result<Detection> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid("eta", "must be positive and finite"));
    }
    let noise = NoiseCovariance::uniform(spreading.rows(), eta)?;
    detect_augmented(spreading, &noise, observation, clipping, config)
}

pub fn detect_pseudoinverse(
    spreading: &RectangularMatrix,
    observation: &[f64],
    config: &SolverConfig,
) -> Result<Detection> {
    detect_pseudoinverse_with_eta(
        spreading,
        observation,
        Clipping::Identity,
        DEFAULT_ETA,
        config,
    )
}

/// Zero-forcing detector. Identical to the pseudoinverse path followed by
/// clipping.
pub fn detect_decorrelator(
    spreading: &RectangularMatrix,
    observation: &[f64],
    clipping: Clipping,
    config: &SolverConfig,
) -> Result<Detection> {
    detect_pseudoinverse_with_eta(spreading, observation, clipping, DEFAULT_ETA, config)
}

/// Dispatches on the detector kind. `noise` is only read by MMSE.
pub fn detect(
    spec: DetectorSpec,
    spreading: &RectangularMatrix,
    noise: &NoiseCovariance,
    observation: &[f64],
    config: &SolverConfig,
) -> Result<Detection> {
    match spec.kind {
        DetectorKind::MatchedFilter => detect_mf(spreading, observation, spec.clipping),
        DetectorKind::Decorrelator => {
            detect_decorrelator(spreading, observation, spec.clipping, config)
        }
        DetectorKind::Mmse => detect_mmse(spreading, noise, observation, spec.clipping, config),
        DetectorKind::Pseudoinverse => detect_pseudoinverse_with_eta(
            spreading,
            observation,
            spec.clipping,
            DEFAULT_ETA,
            config,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn mf_identity_spreading() {
        let s = RectangularMatrix::identity(2).unwrap();
        let d = detect_mf(&s, &[0.2, -3.0], Clipping::Sign).unwrap();
        assert_eq!(d.decisions.as_slice(), &[1.0, -1.0]);
        assert!(d.converged());
    }

    #[test]
    fn mf_orthonormal_noiseless() {
        let h = 0.5;
        let s = RectangularMatrix::from_rows(&[vec![h, h], vec![h, -h], vec![h, h], vec![h, -h]])
            .unwrap();
        let x = [1.0, -1.0];
        let y = s.mul_vec(&x).unwrap();
        let d = detect_mf(&s, &y, Clipping::Sign).unwrap();
        assert_eq!(d.decisions.as_slice(), &x);
        assert!(d.raw.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn mmse_identity_spreading() {
        let s = RectangularMatrix::identity(2).unwrap();
        let psi = NoiseCovariance::uniform(2, 1.0).unwrap();
        let d = detect_mmse(&s, &psi, &[2.0, 4.0], Clipping::Identity, &cfg()).unwrap();
        assert!(d.converged());
        assert!(d.raw.max_abs_diff(&[1.0, 2.0]) < 1e-12);
    }

    #[test]
    fn mmse_scalar() {
        let s = RectangularMatrix::from_rows(&[vec![2.0]]).unwrap();
        let psi = NoiseCovariance::new(vec![1.0]).unwrap();
        let d = detect_mmse(&s, &psi, &[10.0], Clipping::Identity, &cfg()).unwrap();
        assert!((d.raw[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mmse_rejects_zero_noise() {
        let s = RectangularMatrix::identity(2).unwrap();
        let psi = NoiseCovariance::new(vec![1.0, 0.0]).unwrap();
        assert!(detect_mmse(&s, &psi, &[1.0, 1.0], Clipping::Sign, &cfg()).is_err());
    }

    #[test]
    fn mf_and_mmse_differ_under_interference() {
        let s = RectangularMatrix::from_rows(&[vec![1.0, 0.9], vec![0.0, 0.4]]).unwrap();
        let y = s.mul_vec(&[1.0, -1.0]).unwrap();
        let psi = NoiseCovariance::uniform(2, 0.1).unwrap();
        let mf = detect_mf(&s, &y, Clipping::Sign).unwrap();
        let mmse = detect_mmse(&s, &psi, &y, Clipping::Sign, &cfg()).unwrap();
        // MF raw is (0.1, -0.07); MMSE raw is about (0.463, -0.455)
        assert!(mf.raw.max_abs_diff(&mmse.raw) > 0.1);
        assert_eq!(mmse.decisions.as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn decorrelator_scalar() {
        let s = RectangularMatrix::from_rows(&[vec![3.0]]).unwrap();
        let d = detect_decorrelator(&s, &[6.0], Clipping::Identity, &cfg()).unwrap();
        assert!((d.raw[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn pseudoinverse_mean_of_observations() {
        let s = RectangularMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let d = detect_pseudoinverse(&s, &[1.0, 3.0], &cfg()).unwrap();
        assert!((d.raw[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn pseudoinverse_orthonormal_columns() {
        let h = 0.5;
        let s = RectangularMatrix::from_rows(&[vec![h, h], vec![h, -h], vec![h, h], vec![h, -h]])
            .unwrap();
        let y = [0.3, -1.2, 2.0, 0.7];
        let d = detect_pseudoinverse(&s, &y, &cfg()).unwrap();
        let st_y = s.transpose_mul_vec(&y).unwrap();
        assert!(d.raw.max_abs_diff(&st_y) < 1e-6);
    }

    #[test]
    fn detector_names_round_trip() {
        for kind in DetectorKind::ALL {
            assert_eq!(kind.name().parse::<DetectorKind>().unwrap(), kind);
        }
        assert!("ml".parse::<DetectorKind>().is_err());
    }
}
