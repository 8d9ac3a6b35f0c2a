//! Gaussian belief propagation for `A x = b` with symmetric `A`.
//!
//! Every off-diagonal nonzero `A_ij` yields two directed edges `i -> j` and
//! `j -> i`, each carrying a precision message `P_ij` and a mean message
//! `mu_ij`. One sweep computes, for every directed edge,
//!
//! ```text
//!   P_i\j  = P_ii + sum_{k in N(i)\j} P_ki
//!   mu_i\j = (P_ii mu_ii + sum_{k in N(i)\j} P_ki mu_ki) / P_i\j
//!   P_ij   = -A_ij^2 / P_i\j
//!   mu_ij  = -A_ij mu_i\j / P_ij
//! ```
//!
//! with node priors `P_ii = A_ii`, `mu_ii = b_i / A_ii`. On convergence the
//! posterior means solve the system. Precisions may be negative when `A` is
//! indefinite, so nothing here assumes positivity.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{SparseSymmetricMatrix, Vector};

/// Below this many edges a sweep is not split across workers.
const PAR_MIN_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Every edge reads the previous sweep's messages.
    #[default]
    Synchronous,
    /// Nodes are visited in index order and read the freshest messages.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Convergence is declared when no precision or mean message changes by
    /// more than this in one sweep. Changes are absolute for messages of
    /// magnitude up to one and relative above that.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub schedule: Schedule,
    /// Weight on the previous message, in `[0, 1)`.
    pub damping: f64,
    /// Worker threads for the synchronous schedule. `None` uses the ambient
    /// rayon pool. Results do not depend on this value.
    pub workers: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-10,
            max_iterations: 10_000,
            schedule: Schedule::Synchronous,
            damping: 0.0,
            workers: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::invalid("tolerance", "must be positive and finite"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::invalid("damping", "must lie in [0, 1)"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers", "must be at least 1"));
        }
        Ok(())
    }
}

/// Directed edge layout shared by all message buffers of one matrix.
/// Outgoing edges of node `i` are contiguous and ordered by target index.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeIndex {
    from: Vec<usize>,
    to: Vec<usize>,
    weight: Vec<f64>,
    reverse: Vec<usize>,
    out_start: Vec<usize>,
}

impl EdgeIndex {
    pub fn new(matrix: &SparseSymmetricMatrix) -> Self {
        let dim = matrix.dim();
        let mut out_start = Vec::with_capacity(dim + 1);
        let (mut from, mut to, mut weight) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..dim {
            out_start.push(from.len());
            for &(j, v) in matrix.neighbors(i) {
                from.push(i);
                to.push(j);
                weight.push(v);
            }
        }
        out_start.push(from.len());
        let reverse = (0..from.len())
            .map(|e| {
                let (i, j) = (from[e], to[e]);
                let range = out_start[j]..out_start[j + 1];
                let pos = to[range.clone()]
                    .binary_search(&i)
                    .expect("neighbor lists are symmetric");
                range.start + pos
            })
            .collect();
        EdgeIndex {
            from,
            to,
            weight,
            reverse,
            out_start,
        }
    }

    pub fn len(&self) -> usize {
        self.from.len()
    }

    pub fn is_empty(&self) -> bool {
        self.from.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.out_start.len() - 1
    }

    pub fn endpoints(&self, edge: usize) -> (usize, usize) {
        (self.from[edge], self.to[edge])
    }

    pub fn find(&self, from: usize, to: usize) -> Option<usize> {
        if from >= self.nodes() {
            return None;
        }
        let range = self.out_start[from]..self.out_start[from + 1];
        self.to[range.clone()]
            .binary_search(&to)
            .ok()
            .map(|pos| range.start + pos)
    }

    pub fn reverse(&self, edge: usize) -> usize {
        self.reverse[edge]
    }

    fn outgoing(&self, node: usize) -> std::ops::Range<usize> {
        self.out_start[node]..self.out_start[node + 1]
    }
}

/// Precision and mean messages on every directed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    edges: Arc<EdgeIndex>,
    precision: Vec<f64>,
    mean: Vec<f64>,
}

impl MessageState {
    pub fn zeros(edges: Arc<EdgeIndex>) -> Self {
        let len = edges.len();
        MessageState {
            edges,
            precision: vec![0.0; len],
            mean: vec![0.0; len],
        }
    }

    /// Builds a state from explicit per-edge values in edge-index order.
    pub fn from_parts(edges: Arc<EdgeIndex>, precision: Vec<f64>, mean: Vec<f64>) -> Result<Self> {
        if precision.len() != edges.len() || mean.len() != edges.len() {
            return Err(Error::SupportMismatch(format!(
                "expected {} directed edges, got {} precisions and {} means",
                edges.len(),
                precision.len(),
                mean.len()
            )));
        }
        Ok(MessageState {
            edges,
            precision,
            mean,
        })
    }

    pub fn edges(&self) -> &Arc<EdgeIndex> {
        &self.edges
    }

    pub fn precisions(&self) -> &[f64] {
        &self.precision
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    /// `(P_ij, mu_ij)` for the directed edge `from -> to`.
    pub fn message(&self, from: usize, to: usize) -> Option<(f64, f64)> {
        self.edges
            .find(from, to)
            .map(|e| (self.precision[e], self.mean[e]))
    }

    /// Largest scaled change over both message families, as used by the
    /// convergence test.
    pub fn max_delta(&self, other: &MessageState) -> f64 {
        self.precision
            .iter()
            .zip(&other.precision)
            .chain(self.mean.iter().zip(&other.mean))
            .map(|(a, b)| message_change(*a, *b))
            .fold(0.0, f64::max)
    }
}

/// Node priors `P_ii = A_ii` and `mu_ii = b_i / A_ii`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePriors {
    pub precision: Vec<f64>,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub means: Vector,
    pub precisions: Vector,
    pub converged: bool,
    pub iterations: usize,
    /// Largest scaled message change of each sweep.
    pub residual_history: Vec<f64>,
}

/// A matrix, right-hand side and precomputed edge layout ready to iterate.
#[derive(Debug, Clone)]
pub struct GabpSystem<'a> {
    matrix: &'a SparseSymmetricMatrix,
    priors: NodePriors,
    edges: Arc<EdgeIndex>,
}

impl<'a> GabpSystem<'a> {
    pub fn new(matrix: &'a SparseSymmetricMatrix, rhs: &[f64]) -> Result<Self> {
        let priors = node_priors(matrix, rhs)?;
        Ok(GabpSystem {
            matrix,
            priors,
            edges: Arc::new(EdgeIndex::new(matrix)),
        })
    }

    pub fn priors(&self) -> &NodePriors {
        &self.priors
    }

    pub fn edges(&self) -> &Arc<EdgeIndex> {
        &self.edges
    }

    pub fn matrix(&self) -> &SparseSymmetricMatrix {
        self.matrix
    }

    pub fn initial_state(&self) -> MessageState {
        MessageState::zeros(self.edges.clone())
    }

    /// One sweep producing a fresh state. `iteration` only labels errors.
    pub fn iterate(
        &self,
        state: &MessageState,
        config: &SolverConfig,
        iteration: usize,
    ) -> Result<MessageState> {
        let mut next = state.clone();
        self.sweep(state, &mut next, config, iteration)?;
        Ok(next)
    }

    /// Writes one sweep from `current` into `next` and returns the largest
    /// message change. `next` must share the edge layout.
    fn sweep(
        &self,
        current: &MessageState,
        next: &mut MessageState,
        config: &SolverConfig,
        iteration: usize,
    ) -> Result<f64> {
        if !Arc::ptr_eq(&current.edges, &self.edges) && *current.edges != *self.edges {
            return Err(Error::SupportMismatch(
                "message state belongs to a different matrix".into(),
            ));
        }
        match config.schedule {
            Schedule::Synchronous => {
                self.sweep_synchronous(current, next, config.damping, iteration)
            }
            Schedule::Sequential => {
                next.precision.copy_from_slice(&current.precision);
                next.mean.copy_from_slice(&current.mean);
                self.sweep_sequential(next, config.damping, iteration)
            }
        }
    }

    /// Node totals `(P_ii + sum_k P_ki, P_ii mu_ii + sum_k P_ki mu_ki)` over
    /// all incoming messages.
    fn node_total(&self, state: &MessageState, node: usize) -> (f64, f64) {
        let prior_p = self.priors.precision[node];
        let mut p = prior_p;
        let mut h = prior_p * self.priors.mean[node];
        for e in self.edges.outgoing(node) {
            let incoming = self.edges.reverse[e];
            p += state.precision[incoming];
            h += state.precision[incoming] * state.mean[incoming];
        }
        (p, h)
    }

    /// New `(P_ij, mu_ij)` for edge `e = i -> j` given node totals of `i`
    /// and the messages currently held on `j -> i`.
    fn edge_update(
        &self,
        e: usize,
        total: (f64, f64),
        back: (f64, f64),
        iteration: usize,
    ) -> Result<(f64, f64)> {
        let a = self.edges.weight[e];
        let cavity_p = total.0 - back.0;
        let cavity_h = total.1 - back.0 * back.1;
        if cavity_p == 0.0 {
            let (from, to) = self.edges.endpoints(e);
            return Err(Error::ZeroCavityPrecision {
                iteration,
                from,
                to,
            });
        }
        let cavity_mean = cavity_h / cavity_p;
        let p = -a * a / cavity_p;
        let mu = -a * cavity_mean / p;
        if !(p.is_finite() && mu.is_finite()) {
            let (from, to) = self.edges.endpoints(e);
            return Err(Error::NonFiniteMessage {
                iteration,
                from,
                to,
            });
        }
        Ok((p, mu))
    }

    fn sweep_synchronous(
        &self,
        current: &MessageState,
        next: &mut MessageState,
        damping: f64,
        iteration: usize,
    ) -> Result<f64> {
        let totals: Vec<(f64, f64)> = (0..self.edges.nodes())
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(|i| self.node_total(current, i))
            .collect();

        let failure = next
            .precision
            .par_iter_mut()
            .zip(next.mean.par_iter_mut())
            .enumerate()
            .with_min_len(PAR_MIN_LEN)
            .filter_map(|(e, (p_out, mu_out))| {
                let back = self.edges.reverse[e];
                let from = self.edges.from[e];
                match self.edge_update(
                    e,
                    totals[from],
                    (current.precision[back], current.mean[back]),
                    iteration,
                ) {
                    Ok((p, mu)) => {
                        *p_out = blend(current.precision[e], p, damping);
                        *mu_out = blend(current.mean[e], mu, damping);
                        None
                    }
                    Err(err) => Some((e, err)),
                }
            })
            .min_by_key(|(e, _)| *e);
        if let Some((_, err)) = failure {
            return Err(err);
        }

        Ok(current
            .precision
            .par_iter()
            .zip(&next.precision)
            .chain(current.mean.par_iter().zip(&next.mean))
            .with_min_len(PAR_MIN_LEN)
            .map(|(a, b)| message_change(*a, *b))
            .reduce(|| 0.0, f64::max))
    }

    fn sweep_sequential(
        &self,
        state: &mut MessageState,
        damping: f64,
        iteration: usize,
    ) -> Result<f64> {
        let mut residual: f64 = 0.0;
        for i in 0..self.edges.nodes() {
            let total = self.node_total(state, i);
            for e in self.edges.outgoing(i) {
                let back = self.edges.reverse[e];
                let (p, mu) = self.edge_update(
                    e,
                    total,
                    (state.precision[back], state.mean[back]),
                    iteration,
                )?;
                let p = blend(state.precision[e], p, damping);
                let mu = blend(state.mean[e], mu, damping);
                residual = residual
                    .max(message_change(state.precision[e], p))
                    .max(message_change(state.mean[e], mu));
                state.precision[e] = p;
                state.mean[e] = mu;
            }
        }
        Ok(residual)
    }

    /// Posterior precision and mean of every node from all incoming messages.
    pub fn infer(&self, state: &MessageState) -> Result<(Vector, Vector)> {
        let dim = self.edges.nodes();
        let mut means = Vec::with_capacity(dim);
        let mut precisions = Vec::with_capacity(dim);
        for i in 0..dim {
            let (p, h) = self.node_total(state, i);
            if p == 0.0 {
                return Err(Error::ZeroPosteriorPrecision { index: i });
            }
            precisions.push(p);
            means.push(h / p);
        }
        Ok((Vector::new(means)?, Vector::new(precisions)?))
    }

    /// Iterates from zero messages until convergence or the iteration cap,
    /// then infers posteriors. Non-convergence is reported, not an error.
    pub fn run(&self, config: &SolverConfig) -> Result<SolveResult> {
        config.validate()?;
        match config.workers {
            Some(workers) => rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::invalid("workers", e.to_string()))?
                .install(|| self.run_in_pool(config)),
            None => self.run_in_pool(config),
        }
    }

    fn run_in_pool(&self, config: &SolverConfig) -> Result<SolveResult> {
        let mut current = self.initial_state();
        let mut history = Vec::new();
        let mut converged = self.edges.is_empty();
        if !converged {
            let mut next = current.clone();
            for iteration in 1..=config.max_iterations {
                let residual = self.sweep(&current, &mut next, config, iteration)?;
                std::mem::swap(&mut current, &mut next);
                history.push(residual);
                if residual <= config.tolerance {
                    converged = true;
                    break;
                }
            }
        }
        let (means, precisions) = self.infer(&current)?;
        Ok(SolveResult {
            means,
            precisions,
            converged,
            iterations: history.len(),
            residual_history: history,
        })
    }
}

/// `|new - old|`, divided by `|new|` once that exceeds one. Zero-noise
/// augmented systems carry precisions of order `1 / eta`, whose rounding
/// alone exceeds any useful absolute tolerance.
fn message_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / new.abs().max(1.0)
}

fn blend(old: f64, new: f64, damping: f64) -> f64 {
    if damping == 0.0 {
        new
    } else {
        damping * old + (1.0 - damping) * new
    }
}

fn node_priors(matrix: &SparseSymmetricMatrix, rhs: &[f64]) -> Result<NodePriors> {
    if rhs.len() != matrix.dim() {
        return Err(Error::DimensionMismatch {
            what: "right-hand side length",
            expected: matrix.dim(),
            got: rhs.len(),
        });
    }
    if let Some(index) = rhs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index,
            value: rhs[index],
        });
    }
    if let Some(index) = matrix.diagonal().iter().position(|&d| d == 0.0) {
        return Err(Error::ZeroDiagonal { index });
    }
    let precision = matrix.diagonal().to_vec();
    let mean = rhs.iter().zip(&precision).map(|(b, a)| b / a).collect();
    Ok(NodePriors { precision, mean })
}

/// Node priors and all-zero edge messages.
pub fn initialize(
    matrix: &SparseSymmetricMatrix,
    rhs: &[f64],
) -> Result<(NodePriors, MessageState)> {
    let system = GabpSystem::new(matrix, rhs)?;
    let state = system.initial_state();
    Ok((system.priors, state))
}

/// One sweep of the message updates.
pub fn iterate_once(
    matrix: &SparseSymmetricMatrix,
    rhs: &[f64],
    state: &MessageState,
    config: &SolverConfig,
) -> Result<MessageState> {
    GabpSystem::new(matrix, rhs)?.iterate(state, config, 1)
}

pub fn run(
    matrix: &SparseSymmetricMatrix,
    rhs: &[f64],
    config: &SolverConfig,
) -> Result<SolveResult> {
    GabpSystem::new(matrix, rhs)?.run(config)
}

/// Maps a real estimate onto the input alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clipping {
    Identity,
    /// Binary signaling; zero maps to `+1`.
    #[default]
    Sign,
}

impl Clipping {
    pub fn apply(self, value: f64) -> f64 {
        match self {
            Clipping::Identity => value,
            Clipping::Sign => {
                if value >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

pub fn decide(means: &[f64], clipping: Clipping) -> Vector {
    Vector::from_vec_unchecked(means.iter().map(|&m| clipping.apply(m)).collect())
}
