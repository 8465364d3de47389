//! Approximate propagation by residual push.
//!
//! For each signal column `x` the state keeps an estimate `est` and a residual
//! `res` tied together by
//!
//! ```text
//! est + alpha * res = alpha * x + (1 - alpha) * P * est,   P = D^-beta A D^(beta-1)
//! ```
//!
//! A push at `s` moves `alpha * res(s)` into `est(s)` and spreads the rest along
//! column `s` of `P`. Once every `|res(s)| <= epsilon * d(s)^(1-beta)`, the
//! estimate is within that same bound of the exact propagation.

use std::collections::VecDeque;
use std::ops::Range;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::ColumnMatrix;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    /// Teleport probability, in (0, 1).
    pub alpha: f64,
    /// Convolutional coefficient, in [0, 1].
    pub beta: f64,
    /// Residual threshold scale, > 0.
    pub epsilon: f64,
}

impl PropagationConfig {
    pub fn new(alpha: f64, beta: f64, epsilon: f64) -> Result<Self> {
        let cfg = Self { alpha, beta, epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!("beta must lie in [0,1], got {}", self.beta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// `epsilon * degree^(1-beta)`, the largest residual a node may keep.
pub fn residual_threshold(cfg: &PropagationConfig, degree: usize) -> f64 {
    cfg.epsilon * (degree as f64).powf(1.0 - cfg.beta)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PushStats {
    pub pushes: u64,
    pub touched_entries: u64,
    pub wall_time: Duration,
}

impl PushStats {
    pub fn merge(&mut self, other: &PushStats) {
        self.pushes += other.pushes;
        self.touched_entries += other.touched_entries;
        self.wall_time += other.wall_time;
    }
}

/// `d^beta` and `d^(1-beta)` for every degree up to a bound. Pure in
/// `(degree, beta)`, so it never needs invalidation; rebuild it when the
/// maximum degree grows.
#[derive(Debug, Clone)]
pub(crate) struct DegreePowers {
    beta: f64,
    pow_beta: Vec<f64>,
    pow_rest: Vec<f64>,
}

impl DegreePowers {
    pub(crate) fn new(beta: f64, max_degree: usize) -> Self {
        let mut table = Self { beta, pow_beta: vec![0.0], pow_rest: vec![0.0] };
        table.extend_to(max_degree);
        table
    }

    pub(crate) fn for_graph(beta: f64, g: &Graph) -> Self {
        let max = (0..g.node_count()).map(|s| g.degree(s)).max().unwrap_or(1);
        Self::new(beta, max + 1)
    }

    pub(crate) fn extend_to(&mut self, max_degree: usize) {
        for d in self.pow_beta.len()..=max_degree {
            let d = d as f64;
            self.pow_beta.push(d.powf(self.beta));
            self.pow_rest.push(d.powf(1.0 - self.beta));
        }
    }

    /// `d^beta`
    #[inline]
    pub(crate) fn head(&self, d: usize) -> f64 {
        self.pow_beta.get(d).copied().unwrap_or_else(|| (d as f64).powf(self.beta))
    }

    /// `d^(1-beta)`
    #[inline]
    pub(crate) fn tail(&self, d: usize) -> f64 {
        self.pow_rest.get(d).copied().unwrap_or_else(|| (d as f64).powf(1.0 - self.beta))
    }
}

/// Estimate, residual and signal matrices for `d` signal columns over `n` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationState {
    estimate: ColumnMatrix,
    residual: ColumnMatrix,
    signal: ColumnMatrix,
    poisoned: bool,
}

impl PropagationState {
    /// Zero estimate, residual equal to the signal.
    pub fn new(g: &Graph, signal: ColumnMatrix) -> Result<Self> {
        signal.expect_shape(g.node_count(), signal.cols())?;
        Ok(Self {
            estimate: ColumnMatrix::zeros(signal.rows(), signal.cols()),
            residual: signal.clone(),
            signal,
            poisoned: false,
        })
    }

    /// Reassembles a state from its three matrices, e.g. after deserialization.
    pub fn from_parts(estimate: ColumnMatrix, residual: ColumnMatrix, signal: ColumnMatrix) -> Result<Self> {
        estimate.expect_shape(signal.rows(), signal.cols())?;
        residual.expect_shape(signal.rows(), signal.cols())?;
        Ok(Self { estimate, residual, signal, poisoned: false })
    }

    pub fn node_count(&self) -> usize {
        self.signal.rows()
    }

    pub fn dims(&self) -> usize {
        self.signal.cols()
    }

    pub fn estimate(&self) -> &ColumnMatrix {
        &self.estimate
    }

    pub fn residual(&self) -> &ColumnMatrix {
        &self.residual
    }

    pub fn signal(&self) -> &ColumnMatrix {
        &self.signal
    }

    /// The representation matrix `Z` handed to downstream predictors.
    pub fn embedding(&self) -> &ColumnMatrix {
        &self.estimate
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    /// Direct write access, for fault injection and diagnostics. Edits here
    /// break the push invariant unless the caller restores it.
    pub fn estimate_mut(&mut self) -> &mut ColumnMatrix {
        &mut self.estimate
    }

    pub fn residual_mut(&mut self) -> &mut ColumnMatrix {
        &mut self.residual
    }

    pub(crate) fn check_graph(&self, g: &Graph) -> Result<()> {
        if self.poisoned {
            return Err(Error::Poisoned);
        }
        self.signal.expect_shape(g.node_count(), self.dims())
    }

    pub(crate) fn set_signal(&mut self, signal: ColumnMatrix) {
        self.signal = signal;
    }

    pub(crate) fn poison(&mut self) {
        self.poisoned = true;
    }

    /// Column-major buffers: (estimate, residual, signal).
    pub(crate) fn buffers_mut(&mut self) -> (&mut [f64], &mut [f64], &[f64]) {
        (
            self.estimate.as_mut_slice(),
            self.residual.as_mut_slice(),
            self.signal.as_slice(),
        )
    }
}

/// Reusable per-column work queue.
struct PushQueue {
    queue: VecDeque<usize>,
    queued: Vec<bool>,
}

impl PushQueue {
    fn new(n: usize) -> Self {
        Self { queue: VecDeque::new(), queued: vec![false; n] }
    }

    #[inline]
    fn offer(&mut self, s: usize) {
        if !self.queued[s] {
            self.queued[s] = true;
            self.queue.push_back(s);
        }
    }

    #[inline]
    fn pop(&mut self) -> Option<usize> {
        let s = self.queue.pop_front()?;
        self.queued[s] = false;
        Some(s)
    }
}

/// Pushes one column until no residual exceeds its threshold. Seeds the queue
/// in ascending node order; FIFO afterwards, both signs from the same queue.
pub(crate) fn push_column(
    g: &Graph,
    cfg: &PropagationConfig,
    powers: &DegreePowers,
    column: usize,
    est: &mut [f64],
    res: &mut [f64],
) -> Result<PushStats> {
    let n = g.node_count();
    let limit = |s: usize| cfg.epsilon * powers.tail(g.degree(s));
    let keep = 1.0 - cfg.alpha;
    let mut stats = PushStats::default();
    let mut work = PushQueue::new(n);

    for s in 0..n {
        if !res[s].is_finite() || !est[s].is_finite() {
            return Err(Error::NonFinite { column, node: s });
        }
        if res[s].abs() > limit(s) {
            work.offer(s);
        }
    }

    while let Some(s) = work.pop() {
        let r = res[s];
        if !(r.abs() > limit(s)) {
            continue;
        }
        est[s] += cfg.alpha * r;
        res[s] = 0.0;
        let spread = keep * r / powers.tail(g.degree(s));
        for &t in g.neighbors(s) {
            res[t] += spread / powers.head(g.degree(t));
            stats.touched_entries += 1;
            if !res[t].is_finite() {
                return Err(Error::NonFinite { column, node: t });
            }
            if res[t].abs() > limit(t) {
                work.offer(t);
            }
        }
        stats.pushes += 1;
    }
    Ok(stats)
}

/// Runs the push loop on the selected columns. Afterwards every selected
/// column satisfies `|res(s)| <= epsilon * d(s)^(1-beta)` for all `s`.
pub fn basic_propagate(
    g: &Graph,
    cfg: &PropagationConfig,
    state: &mut PropagationState,
    columns: Range<usize>,
) -> Result<PushStats> {
    cfg.validate()?;
    state.check_graph(g)?;
    if columns.end > state.dims() || columns.start > columns.end {
        return Err(Error::InvalidConfig(format!(
            "column range {columns:?} outside 0..{}",
            state.dims()
        )));
    }
    let started = Instant::now();
    let n = g.node_count();
    let powers = DegreePowers::for_graph(cfg.beta, g);
    let span = columns.start * n..columns.end * n;
    let (est, res, sig) = state.buffers_mut();
    let outcomes = par::zip_columns(
        n,
        columns.start,
        &mut est[span.clone()],
        &mut res[span.clone()],
        &sig[span],
        |j, est, res, _| push_column(g, cfg, &powers, j, est, res),
    );
    let mut total = PushStats::default();
    for outcome in outcomes {
        match outcome {
            Ok(stats) => total.merge(&stats),
            Err(e) => {
                state.poison();
                return Err(e);
            }
        }
    }
    total.wall_time = started.elapsed();
    Ok(total)
}

/// `basic_propagate` over every column.
pub fn propagate_all(g: &Graph, cfg: &PropagationConfig, state: &mut PropagationState) -> Result<PushStats> {
    let dims = state.dims();
    basic_propagate(g, cfg, state, 0..dims)
}
