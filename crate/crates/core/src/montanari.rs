//! Montanari-style BP detector for randomly spread CDMA and its exact
//! correspondence with GaBP on the augmented system.
//!
//! The detector works on a complete bipartite graph between `k` users and
//! `N` chips with spreading signs `s_ai` in `{-1, +1}` and a single noise
//! variance `sigma^2`. Its potentials carry the imaginary unit through
//! `A_ia = -j s_ai / sqrt(N)`, but only the product `A_ia A_ai = -s_ai^2 / N`
//! enters the precision updates and the mean updates are linear in `j` on
//! both ends, so every message stays real. Written out in reals, one sweep is
//!
//! ```text
//!   lambda_{i->a}   = 1       + 1/N       sum_{b != a} s_bi^2 / lhat_{b->i}
//!   lhat_{a->i}     = sigma^2 + 1/N       sum_{l != i} s_al^2 / lambda_{l->a}
//!   gamma_{i->a}    =           1/sqrt(N) sum_{b != a} s_bi ghat_{b->i} / lhat_{b->i}
//!   ghat_{a->i}     = y_a     - 1/sqrt(N) sum_{l != i} s_al gamma_{l->a} / lambda_{l->a}
//! ```
//!
//! and user `i` infers `L_i = 1 + 1/N sum_b s_bi^2 / lhat_{b->i}`,
//! `G_i = 1/sqrt(N) sum_b s_bi ghat_{b->i} / lhat_{b->i}`, mean `G_i / L_i`.
//!
//! The mean updates use `1/sqrt(N)`, the only scaling consistent with the
//! `G_i` sum and with GaBP on `build_augmented(S / sqrt(N), sigma^2 I)`.
//!
//! On that augmented system (users `0..k`, chip `a` at node `k + a`, right
//! hand side `(0, y)`), the state after `t` sweeps from [`MontanariState::initial`]
//! equals the GaBP messages after `t + 1` synchronous sweeps from zero under
//!
//! ```text
//!   lambda_{i->a} = -s^2 / (N P_{i->a})     gamma_{i->a} = s mu_{i->a} / sqrt(N)
//!   lhat_{a->i}   =  s^2 / (N P_{a->i})     ghat_{a->i}  = s mu_{a->i} / sqrt(N)
//! ```
//!
//! so `lambda` and `lhat` are the user and chip cavity precisions (the latter
//! negated) and `gamma`, `ghat` the matching cavity information terms.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gabp::{EdgeIndex, GabpSystem, MessageState, Schedule, SolverConfig};
use crate::matrix::{
    build_augmented, build_augmented_rhs, NoiseCovariance, RectangularMatrix,
    SparseSymmetricMatrix, Vector,
};

/// Messages on the complete user/chip bipartite graph. Every family is
/// indexed by `user * chips + chip` regardless of direction.
#[derive(Debug, Clone, PartialEq)]
pub struct MontanariState {
    users: usize,
    chips: usize,
    /// User to chip precision.
    pub lambda: Vec<f64>,
    /// Chip to user precision.
    pub lambda_hat: Vec<f64>,
    /// User to chip mean.
    pub gamma: Vec<f64>,
    /// Chip to user mean.
    pub gamma_hat: Vec<f64>,
}

impl MontanariState {
    pub fn zeros(users: usize, chips: usize) -> Self {
        let len = users * chips;
        MontanariState {
            users,
            chips,
            lambda: vec![0.0; len],
            lambda_hat: vec![0.0; len],
            gamma: vec![0.0; len],
            gamma_hat: vec![0.0; len],
        }
    }

    /// The state corresponding to zero GaBP messages: `lambda = 1`,
    /// `lhat = sigma^2`, `gamma = 0`, `ghat_{a->i} = y_a`.
    pub fn initial(map: &NotationMap, observation: &[f64]) -> Result<Self> {
        map.check_observation(observation)?;
        let mut state = Self::zeros(map.users, map.chips);
        for i in 0..map.users {
            for a in 0..map.chips {
                let idx = i * map.chips + a;
                state.lambda[idx] = 1.0;
                state.lambda_hat[idx] = map.sigma2;
                state.gamma_hat[idx] = observation[a];
            }
        }
        Ok(state)
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn chips(&self) -> usize {
        self.chips
    }

    /// Largest absolute difference over all four families.
    pub fn max_abs_diff(&self, other: &MontanariState) -> f64 {
        [
            (&self.lambda, &other.lambda),
            (&self.lambda_hat, &other.lambda_hat),
            (&self.gamma, &other.gamma),
            (&self.gamma_hat, &other.gamma_hat),
        ]
        .into_iter()
        .flat_map(|(a, b)| a.iter().zip(b.iter()))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
    }

    fn check_shape(&self, map: &NotationMap) -> Result<()> {
        if self.users != map.users || self.chips != map.chips {
            return Err(Error::SupportMismatch(format!(
                "state is {}x{}, spreading is {}x{}",
                self.users, self.chips, map.users, map.chips
            )));
        }
        Ok(())
    }
}

/// The spreading signs, noise level and scaling that tie Montanari messages
/// to GaBP messages on the augmented system.
#[derive(Debug, Clone, PartialEq)]
pub struct NotationMap {
    users: usize,
    chips: usize,
    /// `s_ai`, row `a` (chip), column `i` (user).
    signs: RectangularMatrix,
    sigma2: f64,
}

impl NotationMap {
    /// `signs` must hold only `-1` and `+1`; `sigma2` must be positive.
    pub fn new(signs: &RectangularMatrix, sigma2: f64) -> Result<Self> {
        for a in 0..signs.rows() {
            if let Some(i) = signs.row(a).iter().position(|&s| s != 1.0 && s != -1.0) {
                return Err(Error::invalid(
                    "spreading",
                    format!("entry ({a}, {i}) is {}, expected +1 or -1", signs.get(a, i)),
                ));
            }
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid("sigma2", "must be positive and finite"));
        }
        Ok(NotationMap {
            users: signs.cols(),
            chips: signs.rows(),
            signs: signs.clone(),
            sigma2,
        })
    }

    /// Like [`NotationMap::new`], taking the noise as a covariance that must
    /// be uniform across chips.
    pub fn with_noise(signs: &RectangularMatrix, noise: &NoiseCovariance) -> Result<Self> {
        let sigma2 = noise.uniform_value().ok_or_else(|| {
            Error::invalid(
                "noise",
                "the Montanari detector needs a single noise variance",
            )
        })?;
        if noise.len() != signs.rows() {
            return Err(Error::DimensionMismatch {
                what: "noise covariance length",
                expected: signs.rows(),
                got: noise.len(),
            });
        }
        Self::new(signs, sigma2)
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn chips(&self) -> usize {
        self.chips
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    fn sign(&self, user: usize, chip: usize) -> f64 {
        self.signs.get(chip, user)
    }

    fn n(&self) -> f64 {
        self.chips as f64
    }

    fn check_observation(&self, observation: &[f64]) -> Result<()> {
        if observation.len() != self.chips {
            return Err(Error::DimensionMismatch {
                what: "observation length",
                expected: self.chips,
                got: observation.len(),
            });
        }
        Ok(())
    }

    /// `S / sqrt(N)`.
    pub fn normalized_spreading(&self) -> Result<RectangularMatrix> {
        self.signs.scaled(1.0 / self.n().sqrt())
    }

    /// `build_augmented(S / sqrt(N), sigma^2 I)` and its right-hand side.
    pub fn augmented_system(&self, observation: &[f64]) -> Result<(SparseSymmetricMatrix, Vector)> {
        self.check_observation(observation)?;
        let matrix = build_augmented(
            &self.normalized_spreading()?,
            &NoiseCovariance::uniform(self.chips, self.sigma2)?,
        )?;
        let rhs = build_augmented_rhs(observation, self.users)?;
        Ok((matrix, rhs))
    }

    fn check_edges(&self, edges: &EdgeIndex) -> Result<()> {
        let (k, n) = (self.users, self.chips);
        if edges.nodes() != k + n || edges.len() != 2 * k * n {
            return Err(Error::SupportMismatch(format!(
                "expected {} nodes and {} directed edges, got {} and {}",
                k + n,
                2 * k * n,
                edges.nodes(),
                edges.len()
            )));
        }
        Ok(())
    }

    fn edge(&self, edges: &EdgeIndex, from: usize, to: usize) -> Result<usize> {
        edges
            .find(from, to)
            .ok_or_else(|| Error::SupportMismatch(format!("missing edge {from} -> {to}")))
    }

    /// GaBP messages on the augmented system to Montanari messages.
    pub fn to_montanari(&self, gabp: &MessageState) -> Result<MontanariState> {
        let edges = gabp.edges();
        self.check_edges(edges)?;
        let (k, n) = (self.users, self.chips);
        let big_n = self.n();
        let root_n = big_n.sqrt();
        let mut out = MontanariState::zeros(k, n);
        for i in 0..k {
            for a in 0..n {
                let idx = i * n + a;
                let s = self.sign(i, a);
                let up = self.edge(edges, i, k + a)?;
                let down = self.edge(edges, k + a, i)?;
                let (p_up, mu_up) = (gabp.precisions()[up], gabp.means()[up]);
                let (p_down, mu_down) = (gabp.precisions()[down], gabp.means()[down]);
                if p_up == 0.0 {
                    return Err(Error::ZeroPrecisionMessage {
                        side: "user->chip",
                        user: i,
                        chip: a,
                    });
                }
                if p_down == 0.0 {
                    return Err(Error::ZeroPrecisionMessage {
                        side: "chip->user",
                        user: i,
                        chip: a,
                    });
                }
                out.lambda[idx] = -(s * s) / (big_n * p_up);
                out.lambda_hat[idx] = (s * s) / (big_n * p_down);
                out.gamma[idx] = s * mu_up / root_n;
                out.gamma_hat[idx] = s * mu_down / root_n;
            }
        }
        Ok(out)
    }

    /// Inverse of [`NotationMap::to_montanari`] onto the given edge layout.
    pub fn to_gabp(&self, state: &MontanariState, edges: Arc<EdgeIndex>) -> Result<MessageState> {
        state.check_shape(self)?;
        self.check_edges(&edges)?;
        let (k, n) = (self.users, self.chips);
        let big_n = self.n();
        let root_n = big_n.sqrt();
        let mut precision = vec![0.0; edges.len()];
        let mut mean = vec![0.0; edges.len()];
        for i in 0..k {
            for a in 0..n {
                let idx = i * n + a;
                let s = self.sign(i, a);
                if state.lambda[idx] == 0.0 {
                    return Err(Error::ZeroPrecisionMessage {
                        side: "user->chip",
                        user: i,
                        chip: a,
                    });
                }
                if state.lambda_hat[idx] == 0.0 {
                    return Err(Error::ZeroPrecisionMessage {
                        side: "chip->user",
                        user: i,
                        chip: a,
                    });
                }
                let up = self.edge(&edges, i, k + a)?;
                let down = self.edge(&edges, k + a, i)?;
                precision[up] = -(s * s) / (big_n * state.lambda[idx]);
                precision[down] = (s * s) / (big_n * state.lambda_hat[idx]);
                mean[up] = root_n * state.gamma[idx] / s;
                mean[down] = root_n * state.gamma_hat[idx] / s;
            }
        }
        MessageState::from_parts(edges, precision, mean)
    }
}

fn nonzero(value: f64, side: &'static str, user: usize, chip: usize) -> Result<f64> {
    if value == 0.0 {
        Err(Error::ZeroPrecisionMessage { side, user, chip })
    } else {
        Ok(value)
    }
}

/// One synchronous sweep of all four message families.
pub fn montanari_iterate(
    map: &NotationMap,
    observation: &[f64],
    state: &MontanariState,
) -> Result<MontanariState> {
    map.check_observation(observation)?;
    state.check_shape(map)?;
    let (k, n) = (map.users, map.chips);
    let big_n = map.n();
    let root_n = big_n.sqrt();
    let mut next = MontanariState::zeros(k, n);
    for i in 0..k {
        for a in 0..n {
            let idx = i * n + a;

            let mut precision = 0.0;
            let mut info = 0.0;
            for b in (0..n).filter(|&b| b != a) {
                let s = map.sign(i, b);
                let lhat = nonzero(state.lambda_hat[i * n + b], "chip->user", i, b)?;
                precision += s * s / lhat;
                info += s * state.gamma_hat[i * n + b] / lhat;
            }
            next.lambda[idx] = 1.0 + precision / big_n;
            next.gamma[idx] = info / root_n;

            let mut precision = 0.0;
            let mut info = 0.0;
            for l in (0..k).filter(|&l| l != i) {
                let s = map.sign(l, a);
                let lambda = nonzero(state.lambda[l * n + a], "user->chip", l, a)?;
                precision += s * s / lambda;
                info += s * state.gamma[l * n + a] / lambda;
            }
            next.lambda_hat[idx] = map.sigma2 + precision / big_n;
            next.gamma_hat[idx] = observation[a] - info / root_n;
        }
    }
    Ok(next)
}

/// Posterior mean `G_i / L_i` and precision `L_i` of every user.
pub fn montanari_infer(map: &NotationMap, state: &MontanariState) -> Result<(Vector, Vector)> {
    state.check_shape(map)?;
    let (k, n) = (map.users, map.chips);
    let big_n = map.n();
    let root_n = big_n.sqrt();
    let mut means = Vec::with_capacity(k);
    let mut precisions = Vec::with_capacity(k);
    for i in 0..k {
        let mut precision = 0.0;
        let mut info = 0.0;
        for b in 0..n {
            let s = map.sign(i, b);
            let lhat = nonzero(state.lambda_hat[i * n + b], "chip->user", i, b)?;
            precision += s * s / lhat;
            info += s * state.gamma_hat[i * n + b] / lhat;
        }
        let l = 1.0 + precision / big_n;
        if l == 0.0 {
            return Err(Error::ZeroPosteriorPrecision { index: i });
        }
        means.push(info / root_n / l);
        precisions.push(l);
    }
    Ok((Vector::new(means)?, Vector::new(precisions)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MontanariRun {
    pub state: MontanariState,
    pub means: Vector,
    pub precisions: Vector,
    pub converged: bool,
    pub iterations: usize,
}

/// Sweeps from [`MontanariState::initial`] until no message moves by more
/// than `tolerance` or `max_iterations` is reached.
pub fn montanari_run(
    map: &NotationMap,
    observation: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<MontanariRun> {
    let mut state = MontanariState::initial(map, observation)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        let next = montanari_iterate(map, observation, &state)?;
        iterations += 1;
        let delta = next.max_abs_diff(&state);
        state = next;
        if delta <= tolerance {
            converged = true;
            break;
        }
    }
    let (means, precisions) = montanari_infer(map, &state)?;
    Ok(MontanariRun {
        state,
        means,
        precisions,
        converged,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LockstepReport {
    /// Largest message discrepancy at each compared iteration, starting with
    /// the initial state.
    pub message_discrepancy: Vec<f64>,
    /// Largest posterior-mean discrepancy at each compared iteration.
    pub mean_discrepancy: Vec<f64>,
    pub final_means: Vec<f64>,
}

impl LockstepReport {
    pub fn max_message_discrepancy(&self) -> f64 {
        self.message_discrepancy.iter().copied().fold(0.0, f64::max)
    }

    pub fn final_mean_discrepancy(&self) -> f64 {
        self.mean_discrepancy.last().copied().unwrap_or(0.0)
    }
}

/// Runs the Montanari sweep and synchronous GaBP on the mapped augmented
/// system side by side for `iterations` sweeps, comparing translated
/// messages and user posterior means after every sweep.
pub fn lockstep(
    map: &NotationMap,
    observation: &[f64],
    iterations: usize,
) -> Result<LockstepReport> {
    let (matrix, rhs) = map.augmented_system(observation)?;
    let system = GabpSystem::new(&matrix, &rhs)?;
    let config = SolverConfig {
        schedule: Schedule::Synchronous,
        damping: 0.0,
        ..SolverConfig::default()
    };
    let k = map.users;

    let mut gabp = system.iterate(&system.initial_state(), &config, 1)?;
    let mut montanari = MontanariState::initial(map, observation)?;
    let mut report = LockstepReport {
        message_discrepancy: Vec::with_capacity(iterations + 1),
        mean_discrepancy: Vec::with_capacity(iterations + 1),
        final_means: Vec::new(),
    };
    for t in 0..=iterations {
        if t > 0 {
            gabp = system.iterate(&gabp, &config, t + 1)?;
            montanari = montanari_iterate(map, observation, &montanari)?;
        }
        let translated = map.to_montanari(&gabp)?;
        report
            .message_discrepancy
            .push(translated.max_abs_diff(&montanari));
        let (gabp_means, _) = system.infer(&gabp)?;
        let (m_means, _) = montanari_infer(map, &montanari)?;
        report
            .mean_discrepancy
            .push(m_means.max_abs_diff(&gabp_means[..k]));
        report.final_means = m_means.into_inner();
    }
    Ok(report)
}
