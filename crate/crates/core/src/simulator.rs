//! CDMA detection scenarios and Monte Carlo trials.
//!
//! Randomness is fully determined by the scenario seed. The spreading matrix
//! draws from ChaCha20 stream 0 and frame `f` from stream `f + 1`, so frames
//! can be generated and detected in any order. Draws are defined on the raw
//! 64-bit output:
//!
//! * a bit is `next_u64() >> 63`, giving `+1` for 0 and `-1` for 1;
//! * a uniform is `(next_u64() >> 11) * 2^-53` in `[0, 1)`;
//! * a standard normal comes from the Marsaglia polar method on
//!   `u = 2 * uniform - 1` pairs, both outputs of an accepted pair used in order.
//!
//! Within a frame the `k` symbols are drawn first, then the `n` noise samples.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dense;
use crate::detectors::{self, DetectorKind, DetectorSpec};
use crate::error::{Error, Result};
use crate::gabp::{Clipping, SolveResult, SolverConfig};
use crate::matrix::{NoiseCovariance, RectangularMatrix, SparseSymmetricMatrix, Vector};

/// Identifies the random number pipeline in output metadata.
pub const RNG_ID: &str = "chacha20-rand_chacha0.3/stream-per-frame/marsaglia-polar";

const WILSON_Z: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq)]
pub enum Spreading {
    /// Entries `+-1/sqrt(n)` drawn uniformly.
    RandomBinary,
    /// Caller-provided `n x k` matrix.
    Supplied(RectangularMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    Uniform(f64),
    PerChip(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symbols {
    #[default]
    Binary,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub users: usize,
    pub chips: usize,
    pub spreading: Spreading,
    pub noise: NoiseModel,
    pub symbols: Symbols,
    pub frames: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.chips == 0 {
            return Err(Error::invalid(
                "scenario",
                "users and chips must be at least 1",
            ));
        }
        if let Spreading::Supplied(s) = &self.spreading {
            if s.rows() != self.chips || s.cols() != self.users {
                return Err(Error::invalid(
                    "spreading",
                    format!(
                        "supplied matrix is {}x{}, scenario needs {}x{}",
                        s.rows(),
                        s.cols(),
                        self.chips,
                        self.users
                    ),
                ));
            }
        }
        self.noise_covariance().map(|_| ())
    }

    pub fn noise_covariance(&self) -> Result<NoiseCovariance> {
        match &self.noise {
            NoiseModel::Uniform(v) => NoiseCovariance::uniform(self.chips, *v),
            NoiseModel::PerChip(v) => {
                if v.len() != self.chips {
                    return Err(Error::DimensionMismatch {
                        what: "per-chip noise length",
                        expected: self.chips,
                        got: v.len(),
                    });
                }
                NoiseCovariance::new(v.clone())
            }
        }
    }

    /// Short stable digest of every field that influences trial results.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "k={};n={};symbols={:?};frames={};seed={};",
            self.users, self.chips, self.symbols, self.frames, self.seed
        ));
        match &self.spreading {
            Spreading::RandomBinary => h.update("spreading=random-binary;"),
            Spreading::Supplied(s) => {
                h.update("spreading=supplied:");
                for a in 0..s.rows() {
                    for v in s.row(a) {
                        h.update(v.to_bits().to_le_bytes());
                    }
                }
            }
        }
        match &self.noise {
            NoiseModel::Uniform(v) => h.update(format!("noise=uniform:{:016x}", v.to_bits())),
            NoiseModel::PerChip(vs) => {
                h.update("noise=per-chip:");
                for v in vs {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub symbols: Vector,
    pub observation: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScenario {
    pub spreading: RectangularMatrix,
    pub noise: NoiseCovariance,
    pub frames: Vec<Frame>,
}

/// Raw draws on one ChaCha20 stream.
struct Draws {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl Draws {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Draws { rng, spare: None }
    }

    fn sign(&mut self) -> f64 {
        if self.rng.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * factor);
                return u * factor;
            }
        }
    }
}

fn generate_frame(
    scenario: &Scenario,
    spreading: &RectangularMatrix,
    noise: &NoiseCovariance,
    index: usize,
) -> Frame {
    let mut draws = Draws::new(scenario.seed, index as u64 + 1);
    let symbols: Vec<f64> = (0..scenario.users)
        .map(|_| match scenario.symbols {
            Symbols::Binary => draws.sign(),
            Symbols::Gaussian => draws.normal(),
        })
        .collect();
    let mut observation = spreading
        .mul_vec(&symbols)
        .expect("spreading matches scenario")
        .into_inner();
    for (y, &variance) in observation.iter_mut().zip(noise.diagonal()) {
        let z = draws.normal();
        if variance > 0.0 {
            *y += variance.sqrt() * z;
        }
    }
    Frame {
        symbols: Vector::from_vec_unchecked(symbols),
        observation: Vector::from_vec_unchecked(observation),
    }
}

pub fn generate_scenario(scenario: &Scenario) -> Result<GeneratedScenario> {
    scenario.validate()?;
    let noise = scenario.noise_covariance()?;
    let spreading = match &scenario.spreading {
        Spreading::Supplied(s) => s.clone(),
        Spreading::RandomBinary => {
            let mut draws = Draws::new(scenario.seed, 0);
            let scale = 1.0 / (scenario.chips as f64).sqrt();
            let data = (0..scenario.chips * scenario.users)
                .map(|_| scale * draws.sign())
                .collect();
            RectangularMatrix::new(scenario.chips, scenario.users, data)?
        }
    };
    let frames = (0..scenario.frames)
        .into_par_iter()
        .map(|f| generate_frame(scenario, &spreading, &noise, f))
        .collect();
    Ok(GeneratedScenario {
        spreading,
        noise,
        frames,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub frame: usize,
    pub detector: DetectorKind,
    pub bit_errors: usize,
    pub bits_sent: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Excluded from every determinism comparison.
    pub wall_time: Duration,
    pub message_slots: usize,
    /// `max |estimate - dense oracle|` before clipping.
    pub oracle_deviation: f64,
}

fn oracle_estimate(
    kind: DetectorKind,
    spreading: &RectangularMatrix,
    noise: &NoiseCovariance,
    observation: &[f64],
) -> Result<Vec<f64>> {
    match kind {
        DetectorKind::MatchedFilter => Ok(spreading.transpose_mul_vec(observation)?.into_inner()),
        DetectorKind::Mmse => dense::mmse_estimate(spreading, noise, observation),
        DetectorKind::Decorrelator | DetectorKind::Pseudoinverse => {
            dense::least_squares(spreading, observation)
        }
    }
}

/// Detects every frame with every detector, auditing each estimate against a
/// dense direct solve. Frames run in parallel; the output is ordered by frame
/// then by detector and does not depend on the degree of parallelism.
pub fn run_trials(
    generated: &GeneratedScenario,
    detectors: &[DetectorSpec],
    config: &SolverConfig,
) -> Result<Vec<TrialRecord>> {
    if detectors.is_empty() {
        return Err(Error::invalid(
            "detectors",
            "at least one detector is required",
        ));
    }
    let augmented_slots = 2 * generated.spreading.nonzeros();
    let per_frame: Vec<Result<Vec<TrialRecord>>> = generated
        .frames
        .par_iter()
        .enumerate()
        .map(|(index, frame)| {
            detectors
                .iter()
                .map(|spec| {
                    let start = Instant::now();
                    let detection = detectors::detect(
                        *spec,
                        &generated.spreading,
                        &generated.noise,
                        &frame.observation,
                        config,
                    )?;
                    let wall_time = start.elapsed();
                    let oracle = oracle_estimate(
                        spec.kind,
                        &generated.spreading,
                        &generated.noise,
                        &frame.observation,
                    )?;
                    let bit_errors = detection
                        .decisions
                        .iter()
                        .zip(frame.symbols.iter())
                        .filter(|(d, x)| Clipping::Sign.apply(**d) != Clipping::Sign.apply(**x))
                        .count();
                    Ok(TrialRecord {
                        frame: index,
                        detector: spec.kind,
                        bit_errors,
                        bits_sent: frame.symbols.len(),
                        iterations: detection.iterations(),
                        converged: detection.converged(),
                        wall_time,
                        message_slots: if spec.kind == DetectorKind::MatchedFilter {
                            0
                        } else {
                            augmented_slots
                        },
                        oracle_deviation: detection.raw.max_abs_diff(&oracle),
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(generated.frames.len() * detectors.len());
    for frame in per_frame {
        out.extend(frame?);
    }
    Ok(out)
}

/// Standard Jacobi iteration from `x0 = D^-1 b`, stopping on the same scaled
/// change as GaBP. Reported precisions are the diagonal of `A`. Divergence
/// ends the run early with `converged = false` and the last finite iterate.
pub fn jacobi_baseline(
    matrix: &SparseSymmetricMatrix,
    rhs: &[f64],
    config: &SolverConfig,
) -> Result<SolveResult> {
    config.validate()?;
    if rhs.len() != matrix.dim() {
        return Err(Error::DimensionMismatch {
            what: "right-hand side length",
            expected: matrix.dim(),
            got: rhs.len(),
        });
    }
    if let Some(index) = matrix.diagonal().iter().position(|&d| d == 0.0) {
        return Err(Error::ZeroDiagonal { index });
    }
    let diag = matrix.diagonal();
    let mut x: Vec<f64> = rhs.iter().zip(diag).map(|(b, d)| b / d).collect();
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iterations {
        let next: Vec<f64> = (0..matrix.dim())
            .map(|i| {
                let off: f64 = matrix.neighbors(i).iter().map(|&(j, v)| v * x[j]).sum();
                (rhs[i] - off) / diag[i]
            })
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        let residual = x
            .iter()
            .zip(&next)
            .map(|(old, new)| (new - old).abs() / new.abs().max(1.0))
            .fold(0.0, f64::max);
        x = next;
        history.push(residual);
        if residual <= config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(SolveResult {
        means: Vector::new(x)?,
        precisions: Vector::new(diag.to_vec())?,
        converged,
        iterations: history.len(),
        residual_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MessageAccounting {
    pub directed_slots: usize,
    /// `2 * dim^2`, the slot count of a fully dense system of the same size.
    pub dense_equivalent: usize,
}

pub fn message_accounting(matrix: &SparseSymmetricMatrix) -> MessageAccounting {
    MessageAccounting {
        directed_slots: matrix.directed_edges(),
        dense_equivalent: 2 * matrix.dim() * matrix.dim(),
    }
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(errors: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let low = if errors == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let high = if errors == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (low, high)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    #[serde(rename = "scenario-hash")]
    pub scenario_hash: String,
    pub detector: DetectorKind,
    pub ber: f64,
    pub ber_ci_low: f64,
    pub ber_ci_high: f64,
    pub mean_iterations: f64,
    pub convergence_rate: f64,
    pub message_slots: usize,
}

/// Aggregates records into one row per (frame batch, detector). A
/// `batch_frames` of zero puts every frame in one batch.
pub fn summarize(
    scenario_hash: &str,
    records: &[TrialRecord],
    batch_frames: usize,
) -> Vec<SummaryRow> {
    let frames = records.iter().map(|r| r.frame + 1).max().unwrap_or(0);
    let batch = if batch_frames == 0 {
        frames.max(1)
    } else {
        batch_frames
    };
    let mut detectors: Vec<DetectorKind> = Vec::new();
    for r in records {
        if !detectors.contains(&r.detector) {
            detectors.push(r.detector);
        }
    }
    let mut rows = Vec::new();
    for start in (0..frames).step_by(batch) {
        for &kind in &detectors {
            let selected: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.detector == kind && r.frame >= start && r.frame < start + batch)
                .collect();
            if selected.is_empty() {
                continue;
            }
            let errors: usize = selected.iter().map(|r| r.bit_errors).sum();
            let bits: usize = selected.iter().map(|r| r.bits_sent).sum();
            let (lo, hi) = wilson_interval(errors, bits);
            let count = selected.len() as f64;
            rows.push(SummaryRow {
                scenario_hash: scenario_hash.to_string(),
                detector: kind,
                ber: errors as f64 / bits.max(1) as f64,
                ber_ci_low: lo,
                ber_ci_high: hi,
                mean_iterations: selected.iter().map(|r| r.iterations as f64).sum::<f64>() / count,
                convergence_rate: selected.iter().filter(|r| r.converged).count() as f64 / count,
                message_slots: selected[0].message_slots,
            });
        }
    }
    rows
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes summary rows as CSV with the fixed column set.
pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Csv(e.to_string());
    w.write_record([
        "scenario-hash",
        "detector",
        "ber",
        "ber_ci_low",
        "ber_ci_high",
        "mean_iterations",
        "convergence_rate",
        "message_slots",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.scenario_hash.clone(),
            r.detector.name().to_string(),
            format_float(r.ber),
            format_float(r.ber_ci_low),
            format_float(r.ber_ci_high),
            format_float(r.mean_iterations),
            format_float(r.convergence_rate),
            r.message_slots.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

/// GaBP and Jacobi on the same augmented MMSE system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineRow {
    pub frame: usize,
    pub users: usize,
    pub chips: usize,
    pub gabp_iterations: usize,
    pub gabp_converged: bool,
    pub jacobi_iterations: usize,
    pub jacobi_converged: bool,
    /// `max |gabp - jacobi|` over user estimates; NaN unless both converged.
    pub max_difference: f64,
}

pub fn compare_with_jacobi(
    generated: &GeneratedScenario,
    config: &SolverConfig,
) -> Result<Vec<BaselineRow>> {
    let matrix = crate::matrix::build_augmented(&generated.spreading, &generated.noise)?;
    let users = generated.spreading.cols();
    generated
        .frames
        .iter()
        .enumerate()
        .map(|(frame, f)| {
            let rhs = crate::matrix::build_augmented_rhs(&f.observation, users)?;
            let gabp = crate::gabp::run(&matrix, &rhs, config)?;
            let jacobi = jacobi_baseline(&matrix, &rhs, config)?;
            let max_difference = if gabp.converged && jacobi.converged {
                Vector::from_vec_unchecked(gabp.means[..users].to_vec())
                    .max_abs_diff(&jacobi.means[..users])
            } else {
                f64::NAN
            };
            Ok(BaselineRow {
                frame,
                users,
                chips: generated.spreading.rows(),
                gabp_iterations: gabp.iterations,
                gabp_converged: gabp.converged,
                jacobi_iterations: jacobi.iterations,
                jacobi_converged: jacobi.converged,
                max_difference,
            })
        })
        .collect()
}

pub fn write_baseline_csv<W: Write>(out: W, rows: &[BaselineRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Csv(e.to_string());
    w.write_record([
        "frame",
        "users",
        "chips",
        "gabp_iterations",
        "gabp_converged",
        "jacobi_iterations",
        "jacobi_converged",
        "max_difference",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.frame.to_string(),
            r.users.to_string(),
            r.chips.to_string(),
            r.gabp_iterations.to_string(),
            r.gabp_converged.to_string(),
            r.jacobi_iterations.to_string(),
            r.jacobi_converged.to_string(),
            format_float(r.max_difference),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gabp::Clipping;

    fn scenario(noise: NoiseModel, frames: usize, seed: u64) -> Scenario {
        Scenario {
            users: 3,
            chips: 8,
            spreading: Spreading::RandomBinary,
            noise,
            symbols: Symbols::Binary,
            frames,
            seed,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = scenario(NoiseModel::Uniform(0.5), 20, 7);
        assert_eq!(
            generate_scenario(&s).unwrap(),
            generate_scenario(&s).unwrap()
        );
        let other = scenario(NoiseModel::Uniform(0.5), 20, 8);
        assert_ne!(
            generate_scenario(&s).unwrap().frames,
            generate_scenario(&other).unwrap().frames
        );
    }

    #[test]
    fn frames_do_not_depend_on_frame_count() {
        let short = generate_scenario(&scenario(NoiseModel::Uniform(0.5), 3, 1)).unwrap();
        let long = generate_scenario(&scenario(NoiseModel::Uniform(0.5), 10, 1)).unwrap();
        assert_eq!(short.frames[..], long.frames[..3]);
        assert_eq!(short.spreading, long.spreading);
    }

    #[test]
    fn noiseless_observation_is_exact() {
        let g = generate_scenario(&scenario(NoiseModel::Uniform(0.0), 5, 3)).unwrap();
        for f in &g.frames {
            assert_eq!(g.spreading.mul_vec(&f.symbols).unwrap(), f.observation);
        }
        let scale = 1.0 / 8f64.sqrt();
        for a in 0..8 {
            assert!(g
                .spreading
                .row(a)
                .iter()
                .all(|v| (v.abs() - scale).abs() < 1e-15));
        }
    }

    #[test]
    fn per_chip_noise_variance() {
        let psi = vec![0.25, 1.0, 4.0];
        let s = Scenario {
            users: 1,
            chips: 3,
            spreading: Spreading::Supplied(RectangularMatrix::new(3, 1, vec![0.0; 3]).unwrap()),
            noise: NoiseModel::PerChip(psi.clone()),
            symbols: Symbols::Binary,
            frames: 100_000,
            seed: 11,
        };
        let g = generate_scenario(&s).unwrap();
        for (chip, &target) in psi.iter().enumerate() {
            let samples: Vec<f64> = g.frames.iter().map(|f| f.observation[chip]).collect();
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (samples.len() - 1) as f64;
            assert!((var / target - 1.0).abs() < 0.05, "chip {chip}: {var}");
        }
    }

    #[test]
    fn scenario_validation() {
        let mut s = scenario(NoiseModel::PerChip(vec![1.0; 3]), 1, 0);
        assert!(generate_scenario(&s).is_err());
        s.noise = NoiseModel::Uniform(1.0);
        s.spreading = Spreading::Supplied(RectangularMatrix::identity(2).unwrap());
        assert!(generate_scenario(&s).is_err());
        s.spreading = Spreading::RandomBinary;
        s.users = 0;
        assert!(generate_scenario(&s).is_err());
    }

    #[test]
    fn scenario_hash_tracks_inputs() {
        let a = scenario(NoiseModel::Uniform(0.5), 10, 1);
        let b = scenario(NoiseModel::Uniform(0.5), 10, 2);
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn noiseless_decorrelator_has_no_errors() {
        let g = generate_scenario(&scenario(NoiseModel::Uniform(0.0), 50, 5)).unwrap();
        let spec = DetectorSpec::new(DetectorKind::Decorrelator, Clipping::Sign);
        let records = run_trials(&g, &[spec], &SolverConfig::default()).unwrap();
        assert_eq!(records.len(), 50);
        assert!(records.iter().all(|r| r.bit_errors == 0 && r.converged));
    }

    #[test]
    fn guarantee_regime_always_converges() {
        let (k, n) = (3usize, 8usize);
        let psi = k as f64 / (n as f64).sqrt() + 0.05;
        let g = generate_scenario(&scenario(NoiseModel::Uniform(psi), 30, 9)).unwrap();
        let spec = DetectorSpec::new(DetectorKind::Mmse, Clipping::Sign);
        let records = run_trials(&g, &[spec], &SolverConfig::default()).unwrap();
        assert!(records
            .iter()
            .all(|r| r.converged && r.oracle_deviation <= 1e-6));
        assert!(records.iter().all(|r| r.message_slots == 2 * k * n));
    }

    #[test]
    fn run_trials_requires_detectors() {
        let g = generate_scenario(&scenario(NoiseModel::Uniform(1.0), 1, 0)).unwrap();
        assert!(run_trials(&g, &[], &SolverConfig::default()).is_err());
    }

    #[test]
    fn jacobi_identity_one_iteration() {
        let a = SparseSymmetricMatrix::identity(3).unwrap();
        let r = jacobi_baseline(&a, &[1.0, 2.0, 3.0], &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.means.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn jacobi_dominant_system() {
        let a = SparseSymmetricMatrix::from_dense(&[
            vec![3.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 3.0],
        ])
        .unwrap();
        let r = jacobi_baseline(&a, &[1.0, 2.0, 3.0], &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.means.max_abs_diff(&[5.0 / 21.0, 6.0 / 21.0, 19.0 / 21.0]) < 1e-9);
    }

    #[test]
    fn jacobi_divergence_is_not_an_error() {
        let a = SparseSymmetricMatrix::from_dense(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap();
        let config = SolverConfig {
            max_iterations: 5000,
            ..SolverConfig::default()
        };
        let r = jacobi_baseline(&a, &[1.0, 1.0], &config).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn accounting_counts() {
        let s = RectangularMatrix::new(8, 3, vec![0.5; 24]).unwrap();
        let a =
            crate::matrix::build_augmented(&s, &NoiseCovariance::uniform(8, 1.0).unwrap()).unwrap();
        assert_eq!(
            message_accounting(&a),
            MessageAccounting {
                directed_slots: 48,
                dense_equivalent: 2 * 11 * 11
            }
        );
        let sq = RectangularMatrix::new(4, 4, vec![1.0; 16]).unwrap();
        let a = crate::matrix::build_augmented(&sq, &NoiseCovariance::uniform(4, 1.0).unwrap())
            .unwrap();
        assert_eq!(message_accounting(&a).directed_slots, 2 * 4 * 4);
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5);
        assert!(((lo + hi) / 2.0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn summary_and_csv() {
        let g = generate_scenario(&scenario(NoiseModel::Uniform(0.3), 10, 2)).unwrap();
        let specs = [
            DetectorSpec::new(DetectorKind::MatchedFilter, Clipping::Sign),
            DetectorSpec::new(DetectorKind::Mmse, Clipping::Sign),
        ];
        let records = run_trials(&g, &specs, &SolverConfig::default()).unwrap();
        let rows = summarize("abc", &records, 5);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].detector, DetectorKind::MatchedFilter);
        assert_eq!(rows[1].message_slots, 48);
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "scenario-hash,detector,ber,ber_ci_low,ber_ci_high,mean_iterations,convergence_rate,message_slots"
        );
        assert_eq!(lines.count(), 4);
    }
}
