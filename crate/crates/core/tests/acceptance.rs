//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Oracles use nalgebra dense factorizations.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gabp_mud::detectors::{self, DetectorKind, DetectorSpec};
use gabp_mud::diagnostics::check_diagonal_dominance;
use gabp_mud::gabp::{self, EdgeIndex, SolveResult};
use gabp_mud::matrix::build_augmented;
use gabp_mud::montanari::{lockstep, NotationMap};
use gabp_mud::simulator::{
    self, compare_with_jacobi, Frame, GeneratedScenario, NoiseModel, Scenario, Spreading, Symbols,
};
use gabp_mud::{
    Clipping, NoiseCovariance, RectangularMatrix, SolverConfig, SparseSymmetricMatrix, Vector,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dense_sym(a: &SparseSymmetricMatrix) -> DMatrix<f64> {
    let n = a.dim();
    DMatrix::from_fn(n, n, |i, j| a.get(i, j))
}

fn dense_rect(s: &RectangularMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(s.rows(), s.cols(), |i, j| s.get(i, j))
}

fn inf_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Random symmetric, strictly diagonally dominant system with positive diagonal.
fn dd_system(seed: u64) -> (SparseSymmetricMatrix, Vec<f64>) {
    let mut r = rng(seed);
    let dim = r.gen_range(2..=50);
    let density: f64 = r.gen_range(0.1..=1.0);
    let mut off = Vec::new();
    let mut row_sum = vec![0.0; dim];
    for i in 0..dim {
        for j in i + 1..dim {
            if r.gen_bool(density) {
                let v: f64 = r.gen_range(-1.0..1.0);
                off.push((i, j, v));
                row_sum[i] += v.abs();
                row_sum[j] += v.abs();
            }
        }
    }
    let diag = row_sum.iter().map(|s| s + r.gen_range(0.05..1.0)).collect();
    let b = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    (SparseSymmetricMatrix::new(diag, off).unwrap(), b)
}

fn dd_set() -> Vec<(SparseSymmetricMatrix, Vec<f64>)> {
    (0..200).map(|s| dd_system(1000 + s)).collect()
}

fn binary_spreading(r: &mut ChaCha8Rng, n: usize, k: usize) -> RectangularMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    let data = (0..n * k)
        .map(|_| if r.gen_bool(0.5) { scale } else { -scale })
        .collect();
    RectangularMatrix::new(n, k, data).unwrap()
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; independent of the simulator's polar method.
    let u1: f64 = 1.0 - r.gen::<f64>();
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

struct MmseCase {
    spreading: RectangularMatrix,
    noise: NoiseCovariance,
    symbols: Vec<f64>,
    observation: Vec<f64>,
}

/// Scenarios with every chip variance above `k / sqrt(n)`. Even cases use a
/// single variance, odd cases a per-chip one.
fn mmse_cases() -> Vec<MmseCase> {
    (0..100)
        .map(|c| {
            let mut r = rng(5000 + c);
            let k = r.gen_range(1..=10);
            let n = r.gen_range(1..=40);
            let s = binary_spreading(&mut r, n, k);
            let threshold = k as f64 / (n as f64).sqrt();
            let psi: Vec<f64> = if c % 2 == 0 {
                vec![threshold + r.gen_range(0.01..1.0); n]
            } else {
                (0..n).map(|_| threshold + r.gen_range(0.01..1.0)).collect()
            };
            let x: Vec<f64> = (0..k)
                .map(|_| if r.gen_bool(0.5) { 1.0 } else { -1.0 })
                .collect();
            let clean = s.mul_vec(&x).unwrap();
            let y = clean
                .iter()
                .zip(&psi)
                .map(|(v, p)| v + p.sqrt() * normal(&mut r))
                .collect();
            MmseCase {
                spreading: s,
                noise: NoiseCovariance::new(psi).unwrap(),
                symbols: x,
                observation: y,
            }
        })
        .collect()
}

fn mmse_oracle(case: &MmseCase) -> Vec<f64> {
    let s = dense_rect(&case.spreading);
    let y = DVector::from_column_slice(&case.observation);
    let psi = case.noise.diagonal();
    let x = match case.noise.uniform_value() {
        // (S^T S + sigma^2 I)^-1 S^T y
        Some(sigma2) => {
            let m = s.transpose() * &s + DMatrix::identity(s.ncols(), s.ncols()) * sigma2;
            m.lu().solve(&(s.transpose() * y)).unwrap()
        }
        // (I + S^T Psi^-1 S)^-1 S^T Psi^-1 y
        None => {
            let w = DMatrix::from_diagonal(&DVector::from_iterator(
                psi.len(),
                psi.iter().map(|p| 1.0 / p),
            ));
            let st_w = s.transpose() * w;
            let m = DMatrix::identity(s.ncols(), s.ncols()) + &st_w * &s;
            m.lu().solve(&(st_w * y)).unwrap()
        }
    };
    x.as_slice().to_vec()
}

fn c1_fixed_point() -> Outcome {
    let start = Instant::now();
    let config = SolverConfig::default();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for (a, b) in dd_set() {
        let r = gabp::run(&a, &b, &config).unwrap();
        let oracle = dense_sym(&a)
            .lu()
            .solve(&DVector::from_column_slice(&b))
            .unwrap();
        let err = inf_norm(&r.means, oracle.as_slice());
        worst = worst.max(err);
        if !r.converged || err > 1e-6 {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && elapsed < Duration::from_secs(30),
        format!("200 systems, {failures} failures, max error {worst:.2e}, {elapsed:.2?}"),
    )
}

fn c2_mmse_identity() -> Outcome {
    let config = SolverConfig::default();
    let (mut worst_est, mut worst_res, mut failures) = (0.0f64, 0.0f64, 0);
    for case in mmse_cases() {
        let spec = DetectorSpec::new(DetectorKind::Mmse, Clipping::Identity);
        let d = detectors::detect(
            spec,
            &case.spreading,
            &case.noise,
            &case.observation,
            &config,
        )
        .unwrap();
        let solve = d.solve.as_ref().unwrap();
        let k = case.spreading.cols();
        let (x, z) = solve.means.split_at(k);
        let est = inf_norm(&d.raw, &mmse_oracle(&case));
        let st_z = case.spreading.transpose_mul_vec(z).unwrap();
        let r1 = x
            .iter()
            .zip(st_z.iter())
            .map(|(a, b)| (a + b).abs())
            .fold(0.0, f64::max);
        let sx = case.spreading.mul_vec(x).unwrap();
        let r2 = (0..z.len())
            .map(|a| (sx[a] - case.noise.diagonal()[a] * z[a] - case.observation[a]).abs())
            .fold(0.0, f64::max);
        worst_est = worst_est.max(est);
        worst_res = worst_res.max(r1.max(r2));
        if !d.converged() || est > 1e-6 || r1 > 1e-6 || r2 > 1e-6 {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("100 scenarios, {failures} failures, max estimate error {worst_est:.2e}, max residual {worst_res:.2e}"),
    )
}

fn c3_convergence_guarantee() -> Outcome {
    let config = SolverConfig {
        max_iterations: 10_000,
        ..SolverConfig::default()
    };
    let mut converged = 0;
    let mut max_iter = 0;
    for seed in 0..100u64 {
        let mut r = rng(7000 + seed);
        let k: usize = r.gen_range(1..=10);
        let n: usize = r.gen_range(1..=40);
        let scenario = Scenario {
            users: k,
            chips: n,
            spreading: Spreading::RandomBinary,
            noise: NoiseModel::Uniform(k as f64 / (n as f64).sqrt() + 0.05),
            symbols: Symbols::Binary,
            frames: 1,
            seed,
        };
        let g = simulator::generate_scenario(&scenario).unwrap();
        let spec = DetectorSpec::new(DetectorKind::Mmse, Clipping::Sign);
        let d = detectors::detect(
            spec,
            &g.spreading,
            &g.noise,
            &g.frames[0].observation,
            &config,
        )
        .unwrap();
        if d.converged() {
            converged += 1;
        }
        max_iter = max_iter.max(d.iterations());
    }
    outcome(
        converged == 100,
        format!("{converged}/100 converged, max {max_iter} iterations"),
    )
}

fn c4_non_dd_witness() -> Outcome {
    let mut checked = 0;
    let mut dominant = Vec::new();
    for k in 2..=8 {
        for n in 2..=8 {
            for rep in 0..3 {
                let mut r = rng((k * 100 + n * 10 + rep) as u64);
                let s = binary_spreading(&mut r, n, k);
                let noise =
                    NoiseCovariance::uniform(n, k as f64 / (n as f64).sqrt() + 0.05).unwrap();
                let a = build_augmented(&s, &noise).unwrap();
                let (dd, _) = check_diagonal_dominance(&a);
                let dense = dense_sym(&a);
                let brute = (0..a.dim()).all(|j| {
                    let off: f64 = (0..a.dim())
                        .filter(|&i| i != j)
                        .map(|i| dense[(i, j)].abs())
                        .sum();
                    dense[(j, j)].abs() > off
                });
                if dd || brute {
                    dominant.push((k, n));
                }
                checked += 1;
            }
        }
    }
    outcome(
        dominant.is_empty(),
        format!("{checked} systems for k, n in 2..=8, diagonally dominant: {dominant:?}"),
    )
}

fn c5_montanari() -> Outcome {
    let mut worst = 0.0f64;
    let mut runs = 0;
    for k in 1..=6usize {
        for n in 1..=6usize {
            for &sigma2 in &[0.5, 1.0, 2.0] {
                for seed in 0..5u64 {
                    let mut r = rng(9000 + seed * 1000 + (k * 10 + n) as u64);
                    let signs = RectangularMatrix::new(
                        n,
                        k,
                        (0..n * k)
                            .map(|_| if r.gen_bool(0.5) { 1.0 } else { -1.0 })
                            .collect(),
                    )
                    .unwrap();
                    let y: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
                    let map = NotationMap::new(&signs, sigma2).unwrap();
                    let report = lockstep(&map, &y, 30).unwrap();
                    worst = worst.max(report.max_message_discrepancy());
                    runs += 1;
                }
            }
        }
    }
    outcome(
        worst < 1e-10,
        format!("{runs} lockstep runs of 30 sweeps, max discrepancy {worst:.2e}"),
    )
}

fn c6_pseudoinverse() -> Outcome {
    let config = SolverConfig::default();
    let (mut worst, mut failures, mut case) = (0.0f64, 0, 0u64);
    let mut done = 0;
    while done < 50 {
        let mut r = rng(11_000 + case);
        case += 1;
        let k = r.gen_range(1..=10);
        let n = r.gen_range(k..=30);
        let data: Vec<f64> = (0..n * k).map(|_| r.gen_range(-1.0..1.0)).collect();
        let s = RectangularMatrix::new(n, k, data).unwrap();
        let dense = dense_rect(&s);
        let svd = dense.clone().svd(false, false);
        let smin = svd.singular_values.min();
        if smin < 1e-2 {
            continue;
        }
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let normal = (dense.transpose() * &dense).cholesky().unwrap();
        let oracle = normal.solve(&(dense.transpose() * DVector::from_column_slice(&y)));
        let d = detectors::detect_pseudoinverse(&s, &y, &config).unwrap();
        let err = inf_norm(&d.raw, oracle.as_slice());
        worst = worst.max(err);
        if err > 1e-4 {
            failures += 1;
        }
        done += 1;
    }
    outcome(
        failures == 0,
        format!("50 full-rank cases, {failures} failures, max error {worst:.2e}"),
    )
}

fn c7_message_accounting() -> Outcome {
    let mut mismatches = Vec::new();
    for k in 1..=12usize {
        for n in 1..=12usize {
            let data = (0..n * k)
                .map(|i| if i % 3 == 0 { -0.5 } else { 0.25 })
                .collect();
            let s = RectangularMatrix::new(n, k, data).unwrap();
            let a = build_augmented(&s, &NoiseCovariance::uniform(n, 1.0).unwrap()).unwrap();
            let counted = simulator::message_accounting(&a).directed_slots;
            let engine = EdgeIndex::new(&a).len();
            if counted != 2 * n * k || engine != 2 * n * k || a.undirected_edges() != n * k {
                mismatches.push((k, n));
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("144 shapes, mismatches: {mismatches:?}"),
    )
}

fn bits(r: &SolveResult) -> (Vec<u64>, Vec<u64>, Vec<u64>, usize, bool) {
    (
        r.means.iter().map(|v| v.to_bits()).collect(),
        r.precisions.iter().map(|v| v.to_bits()).collect(),
        r.residual_history.iter().map(|v| v.to_bits()).collect(),
        r.iterations,
        r.converged,
    )
}

fn c8_determinism() -> Outcome {
    let mut differing = 0;
    for (a, b) in dd_set() {
        let runs: Vec<_> = [1, 2, 8]
            .into_iter()
            .map(|w| {
                let config = SolverConfig {
                    workers: Some(w),
                    ..SolverConfig::default()
                };
                bits(&gabp::run(&a, &b, &config).unwrap())
            })
            .collect();
        if runs[0] != runs[1] || runs[0] != runs[2] {
            differing += 1;
        }
    }
    outcome(
        differing == 0,
        format!("200 systems x 3 worker counts, {differing} differ"),
    )
}

fn c9_noiseless_decorrelator() -> Outcome {
    let (k, n) = (5, 20);
    let scenario = Scenario {
        users: k,
        chips: n,
        spreading: Spreading::RandomBinary,
        noise: NoiseModel::Uniform(0.0),
        symbols: Symbols::Binary,
        frames: 2000,
        seed: 42,
    };
    let g = simulator::generate_scenario(&scenario).unwrap();
    let gram = dense_rect(&g.spreading).transpose() * dense_rect(&g.spreading);
    let smallest = gram.symmetric_eigenvalues().min();
    let spec = DetectorSpec::new(DetectorKind::Decorrelator, Clipping::Sign);
    let records = simulator::run_trials(&g, &[spec], &SolverConfig::default()).unwrap();
    let bits: usize = records.iter().map(|r| r.bits_sent).sum();
    let errors: usize = records.iter().map(|r| r.bit_errors).sum();
    outcome(
        smallest > 1e-6 && errors == 0 && bits >= 10_000,
        format!("{errors} errors in {bits} bits, smallest eigenvalue of S^T S {smallest:.3}"),
    )
}

fn c10_baseline() -> Outcome {
    let config = SolverConfig::default();
    let mut rows = Vec::new();
    for (idx, case) in mmse_cases().into_iter().enumerate() {
        let generated = GeneratedScenario {
            spreading: case.spreading,
            noise: case.noise,
            frames: vec![Frame {
                symbols: Vector::new(case.symbols).unwrap(),
                observation: Vector::new(case.observation).unwrap(),
            }],
        };
        for mut row in compare_with_jacobi(&generated, &config).unwrap() {
            row.frame = idx;
            rows.push(row);
        }
    }
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("baseline.csv");
    simulator::write_baseline_csv(fs::File::create(&path).unwrap(), &rows).unwrap();
    let both: Vec<_> = rows
        .iter()
        .filter(|r| r.gabp_converged && r.jacobi_converged)
        .collect();
    let disagree = both
        .iter()
        .filter(|r| r.max_difference.is_nan() || r.max_difference > 1e-6)
        .count();
    let faster = both
        .iter()
        .filter(|r| r.gabp_iterations < r.jacobi_iterations)
        .count();
    let jacobi_failed = rows.iter().filter(|r| !r.jacobi_converged).count();
    outcome(
        disagree == 0,
        format!(
            "{} rows to {}; both converged {}, disagree {disagree}, GaBP fewer iterations {faster}, Jacobi non-converged {jacobi_failed}",
            rows.len(),
            path.display(),
            both.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("fixed-point correctness", c1_fixed_point),
        ("MMSE identity", c2_mmse_identity),
        ("convergence guarantee", c3_convergence_guarantee),
        ("non-dominant witness", c4_non_dd_witness),
        ("Montanari equivalence", c5_montanari),
        ("pseudoinverse", c6_pseudoinverse),
        ("message accounting", c7_message_accounting),
        ("determinism", c8_determinism),
        ("noiseless decorrelator", c9_noiseless_decorrelator),
        ("baseline comparison", c10_baseline),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let status = if result.pass { "PASS" } else { "FAIL" };
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<24} {status}  {} [{:.2?}]",
            i + 1,
            name,
            result.detail,
            start.elapsed()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
