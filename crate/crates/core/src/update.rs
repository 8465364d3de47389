//! Incremental maintenance of a [`PropagationState`] as the graph and signal change.
//!
//! Each operation has a `stage_*` half that mutates the graph and patches
//! residuals (and, for batches, estimates) so that the push invariant holds for
//! the new graph, and a push half that restores the residual thresholds. The
//! staged increments are exposed for inspection; the public entry points run both.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{net_change, EventKind, Graph, GraphEvent};
use crate::matrix::ColumnMatrix;
use crate::par;
use crate::propagation::{propagate_all, PropagationConfig, PropagationState, PushStats};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateReport {
    pub events_applied: usize,
    /// Nonzero residual increments written before the push phase.
    pub residual_increments: u64,
    pub push_stats: PushStats,
}

impl UpdateReport {
    fn absorb(&mut self, other: &UpdateReport) {
        self.events_applied += other.events_applied;
        self.residual_increments += other.residual_increments;
        self.push_stats.merge(&other.push_stats);
    }
}

fn ensure_ready(g: &Graph, cfg: &PropagationConfig, state: &PropagationState) -> Result<()> {
    cfg.validate()?;
    state.check_graph(g)
}

/// Applies one edge event to `g` and patches the residuals of both endpoints
/// and their previous neighbors. Returns the number of nonzero increments.
///
/// Both endpoint sums `est + alpha res - alpha x` are read before any residual
/// moves. Deletions walk the pre-event neighbor lists, which still contain the
/// other endpoint; together with the subtracted cross term this removes the
/// vanished edge's contribution exactly.
pub fn stage_event(
    g: &mut Graph,
    state: &mut PropagationState,
    cfg: &PropagationConfig,
    ev: &GraphEvent,
) -> Result<u64> {
    ensure_ready(g, cfg, state)?;
    g.check_event(ev)?;
    let (u, v) = (ev.u, ev.v);
    let old_u = g.neighbors(u).to_vec();
    let old_v = g.neighbors(v).to_vec();
    g.apply(ev)?;
    let g = &*g;

    let alpha = cfg.alpha;
    let beta = cfg.beta;
    let head = |d: usize| (d as f64).powf(beta);
    let tail = |d: usize| (d as f64).powf(1.0 - beta);
    let sign = match ev.kind {
        EventKind::InsertEdge => 1.0,
        EventKind::DeleteEdge => -1.0,
    };
    let endpoints = [
        Endpoint::new(u, v, old_u, g, &head, &tail),
        Endpoint::new(v, u, old_v, g, &head, &tail),
    ];
    let n = g.node_count();
    let (est, res, sig) = state.buffers_mut();
    let counts = par::zip_columns(n, 0, est, res, sig, |_, est, res, sig| {
        let sums: Vec<f64> = endpoints
            .iter()
            .map(|e| est[e.node] + alpha * res[e.node] - alpha * sig[e.node])
            .collect();
        let mut written = 0u64;
        let mut add = |node: usize, delta: f64| {
            if delta != 0.0 {
                res[node] += delta;
                written += 1;
            }
        };
        for (e, sum) in endpoints.iter().zip(sums) {
            let cross = (1.0 - alpha) * est[e.other] / (e.head_new * e.other_tail_new);
            add(e.node, (sum * (e.head_old - e.head_new) / e.head_new + sign * cross) / alpha);
            let shift = (1.0 - alpha) * est[e.node] / alpha * (1.0 / e.tail_new - 1.0 / e.tail_old);
            for &w in &e.old_neighbors {
                add(w, shift / head(g.degree(w)));
            }
        }
        written
    });
    Ok(counts.into_iter().sum())
}

struct Endpoint {
    node: usize,
    other: usize,
    old_neighbors: Vec<usize>,
    head_old: f64,
    head_new: f64,
    tail_old: f64,
    tail_new: f64,
    other_tail_new: f64,
}

impl Endpoint {
    fn new(
        node: usize,
        other: usize,
        old_neighbors: Vec<usize>,
        g: &Graph,
        head: &impl Fn(usize) -> f64,
        tail: &impl Fn(usize) -> f64,
    ) -> Self {
        let (d_old, d_new) = (old_neighbors.len(), g.degree(node));
        Self {
            node,
            other,
            head_old: head(d_old),
            head_new: head(d_new),
            tail_old: tail(d_old),
            tail_new: tail(d_new),
            other_tail_new: tail(g.degree(other)),
            old_neighbors,
        }
    }
}

/// One edge event followed by a push pass over every column.
pub fn apply_event(
    g: &mut Graph,
    state: &mut PropagationState,
    cfg: &PropagationConfig,
    ev: &GraphEvent,
) -> Result<UpdateReport> {
    let residual_increments = stage_event(g, state, cfg, ev)?;
    let push_stats = propagate_all(g, cfg, state)?;
    Ok(UpdateReport { events_applied: 1, residual_increments, push_stats })
}

/// Folds [`apply_event`] over `events`. The first invalid event aborts with
/// [`Error::InvalidEvent`] whose `index` equals the number of events already
/// applied.
pub fn apply_events(
    g: &mut Graph,
    state: &mut PropagationState,
    cfg: &PropagationConfig,
    events: &[GraphEvent],
) -> Result<UpdateReport> {
    let mut total = UpdateReport::default();
    for (index, ev) in events.iter().enumerate() {
        match apply_event(g, state, cfg, ev) {
            Ok(report) => total.absorb(&report),
            Err(e @ (Error::DuplicateEdge(..) | Error::MissingEdge(..) | Error::SelfLoopEvent(_) | Error::NodeOutOfRange { .. })) => {
                return Err(Error::InvalidEvent { index, source: Box::new(e) })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(total)
}

/// A node whose neighbor set differs between the batch's start and end graphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffectedNode {
    pub node: usize,
    pub old_degree: usize,
    pub new_degree: usize,
    pub added: Vec<usize>,
    pub removed: Vec<usize>,
}

/// Pre-push increments of a batch, one row per affected node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchIncrements {
    pub affected: Vec<AffectedNode>,
    /// Residual compensation for rescaling each affected estimate.
    pub rescale: ColumnMatrix,
    /// Residual increment from the degree change and the added/removed neighbors.
    pub rewire: ColumnMatrix,
}

impl BatchIncrements {
    pub fn nonzero_count(&self) -> u64 {
        let nz = |m: &ColumnMatrix| m.as_slice().iter().filter(|v| **v != 0.0).count() as u64;
        nz(&self.rescale) + nz(&self.rewire)
    }
}

/// Advances `g` by the net effect of `events` in one step and patches the
/// state for every affected node.
///
/// Phase one rescales each affected estimate by `(d_new / d_old)^(1-beta)`, which
/// leaves every neighbor's equation intact, and compensates the node's own
/// residual. Phase two, which reads the rescaled estimates, accounts for the
/// degree change in the node's own equation and for each added or removed
/// neighbor. Nodes whose neighbor set changed without a net degree change are
/// affected too. The batch is validated by replay before anything mutates.
pub fn stage_batch(
    g: &mut Graph,
    state: &mut PropagationState,
    cfg: &PropagationConfig,
    events: &[GraphEvent],
) -> Result<BatchIncrements> {
    ensure_ready(g, cfg, state)?;
    let change = net_change(g, events)?;

    let mut lists: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for &(a, b) in &change.added {
        lists.entry(a).or_default().0.push(b);
        lists.entry(b).or_default().0.push(a);
    }
    for &(a, b) in &change.removed {
        lists.entry(a).or_default().1.push(b);
        lists.entry(b).or_default().1.push(a);
    }
    let old_degrees: Vec<usize> = lists.keys().map(|&s| g.degree(s)).collect();
    for &(a, b) in &change.removed {
        g.delete_edge(a, b)?;
    }
    for &(a, b) in &change.added {
        g.insert_edge(a, b)?;
    }
    let g = &*g;
    let affected: Vec<AffectedNode> = lists
        .into_iter()
        .zip(old_degrees)
        .map(|((node, (added, removed)), old_degree)| AffectedNode {
            node,
            old_degree,
            new_degree: g.degree(node),
            added,
            removed,
        })
        .collect();

    let alpha = cfg.alpha;
    let beta = cfg.beta;
    let head = |d: usize| (d as f64).powf(beta);
    let tail = |d: usize| (d as f64).powf(1.0 - beta);
    let n = g.node_count();
    let dims = state.dims();
    let (est, res, sig) = state.buffers_mut();
    let per_column = par::zip_columns(n, 0, est, res, sig, |_, est, res, sig| {
        let rescaled: Vec<(f64, f64)> = par::map_slice(&affected, |a| {
            let (t_old, t_new) = (tail(a.old_degree), tail(a.new_degree));
            let scaled = est[a.node] * t_new / t_old;
            (scaled, scaled * (t_old - t_new) / (alpha * t_new))
        });
        for (a, &(scaled, delta)) in affected.iter().zip(&rescaled) {
            est[a.node] = scaled;
            res[a.node] += delta;
        }
        let est = &*est;
        let rewired: Vec<f64> = par::map_slice(&affected, |a| {
            let u = a.node;
            let h_new = head(a.new_degree);
            let sum = est[u] + alpha * res[u] - alpha * sig[u];
            let mut delta = sum * (head(a.old_degree) - h_new) / h_new;
            for &v in &a.added {
                delta += (1.0 - alpha) * est[v] / (h_new * tail(g.degree(v)));
            }
            for &v in &a.removed {
                delta -= (1.0 - alpha) * est[v] / (h_new * tail(g.degree(v)));
            }
            delta / alpha
        });
        for (a, &delta) in affected.iter().zip(&rewired) {
            res[a.node] += delta;
        }
        (rescaled.into_iter().map(|(_, d)| d).collect::<Vec<_>>(), rewired)
    });

    let rows = affected.len();
    let mut rescale = ColumnMatrix::zeros(rows, dims);
    let mut rewire = ColumnMatrix::zeros(rows, dims);
    for (j, (first, second)) in per_column.into_iter().enumerate() {
        rescale.column_mut(j).copy_from_slice(&first);
        rewire.column_mut(j).copy_from_slice(&second);
    }
    Ok(BatchIncrements { affected, rescale, rewire })
}

/// [`stage_batch`] followed by one push pass.
pub fn batch_update(
    g: &mut Graph,
    state: &mut PropagationState,
    cfg: &PropagationConfig,
    events: &[GraphEvent],
) -> Result<UpdateReport> {
    let staged = stage_batch(g, state, cfg, events)?;
    let push_stats = propagate_all(g, cfg, state)?;
    Ok(UpdateReport {
        events_applied: events.len(),
        residual_increments: staged.nonzero_count(),
        push_stats,
    })
}

/// Replaces the signal with `new_signal`, adding `new - old` to the residuals.
/// Returns the number of nonzero increments.
pub fn stage_attributes(
    g: &Graph,
    state: &mut PropagationState,
    cfg: &PropagationConfig,
    new_signal: ColumnMatrix,
) -> Result<u64> {
    ensure_ready(g, cfg, state)?;
    new_signal.expect_shape(state.node_count(), state.dims())?;
    let n = state.node_count();
    let (_, res, old) = state.buffers_mut();
    let mut written = 0u64;
    for (j, (res_col, old_col)) in res.chunks_mut(n).zip(old.chunks(n)).enumerate() {
        for (s, (r, x_old)) in res_col.iter_mut().zip(old_col).enumerate() {
            let delta = new_signal.get(s, j) - x_old;
            if delta != 0.0 {
                *r += delta;
                written += 1;
            }
        }
    }
    state.set_signal(new_signal);
    Ok(written)
}

pub fn update_attributes(
    g: &Graph,
    state: &mut PropagationState,
    cfg: &PropagationConfig,
    new_signal: ColumnMatrix,
) -> Result<UpdateReport> {
    let residual_increments = stage_attributes(g, state, cfg, new_signal)?;
    let push_stats = propagate_all(g, cfg, state)?;
    Ok(UpdateReport { events_applied: 0, residual_increments, push_stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{verify_state, ExactSolver};

    fn triangle_plus_one() -> Graph {
        let mut g = Graph::new(4).unwrap();
        g.insert_edge(0, 1).unwrap();
        g.insert_edge(1, 2).unwrap();
        g.insert_edge(2, 0).unwrap();
        g
    }

    fn unit(n: usize, s: usize) -> ColumnMatrix {
        let mut x = ColumnMatrix::zeros(n, 1);
        x.set(s, 0, 1.0);
        x
    }

    #[test]
    fn unpropagated_state_gets_zero_increments() {
        let mut g = triangle_plus_one();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-7).unwrap();
        let mut state = PropagationState::new(&g, unit(4, 0)).unwrap();
        let written = stage_event(&mut g, &mut state, &cfg, &GraphEvent::insert(2, 3)).unwrap();
        assert_eq!(written, 0);
        assert_eq!(state.residual(), &unit(4, 0));
    }

    #[test]
    fn insert_keeps_bound_on_new_graph() {
        let mut g = triangle_plus_one();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-7).unwrap();
        let mut state = PropagationState::new(&g, unit(4, 0)).unwrap();
        propagate_all(&g, &cfg, &mut state).unwrap();
        apply_event(&mut g, &mut state, &cfg, &GraphEvent::insert(2, 3)).unwrap();
        assert_eq!(g.degree(3), 2);
        let report = verify_state(&g, &cfg, &state).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn insert_then_delete_matches_original_graph() {
        let mut g = triangle_plus_one();
        let original = g.clone();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-7).unwrap();
        let mut state = PropagationState::new(&g, unit(4, 1)).unwrap();
        propagate_all(&g, &cfg, &mut state).unwrap();
        apply_event(&mut g, &mut state, &cfg, &GraphEvent::insert(0, 3)).unwrap();
        apply_event(&mut g, &mut state, &cfg, &GraphEvent::delete(3, 0)).unwrap();
        let solver = ExactSolver::new(&original, &cfg).unwrap();
        assert!(solver.check_error_bound(&state, 0).max_violation <= 1e-12);
    }

    #[test]
    fn staged_deletion_restores_invariant_exactly() {
        for beta in [0.0, 0.3, 0.5, 1.0] {
            let mut g = triangle_plus_one();
            g.insert_edge(2, 3).unwrap();
            let cfg = PropagationConfig::new(0.15, beta, 1e-6).unwrap();
            let x = ColumnMatrix::from_columns(4, &[vec![0.9, -0.3, 0.4, 0.2]]).unwrap();
            let mut state = PropagationState::new(&g, x).unwrap();
            propagate_all(&g, &cfg, &mut state).unwrap();
            stage_event(&mut g, &mut state, &cfg, &GraphEvent::delete(0, 2)).unwrap();
            let identity = ExactSolver::new(&g, &cfg).unwrap().check_invariant(&state, 0);
            assert!(identity < 1e-14, "beta {beta}: {identity}");
        }
    }

    #[test]
    fn invalid_event_leaves_everything_untouched() {
        let mut g = triangle_plus_one();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-7).unwrap();
        let mut state = PropagationState::new(&g, unit(4, 0)).unwrap();
        propagate_all(&g, &cfg, &mut state).unwrap();
        let (g0, s0) = (g.clone(), state.clone());
        assert!(apply_event(&mut g, &mut state, &cfg, &GraphEvent::insert(0, 1)).is_err());
        assert!(apply_event(&mut g, &mut state, &cfg, &GraphEvent::delete(0, 3)).is_err());
        assert_eq!((g, state), (g0, s0));
    }

    #[test]
    fn apply_events_reports_abort_index() {
        let mut g = triangle_plus_one();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-7).unwrap();
        let mut state = PropagationState::new(&g, unit(4, 0)).unwrap();
        let empty = apply_events(&mut g, &mut state, &cfg, &[]).unwrap();
        assert_eq!(empty, UpdateReport::default());
        let evs = [GraphEvent::insert(0, 3), GraphEvent::insert(3, 0)];
        match apply_events(&mut g, &mut state, &cfg, &evs) {
            Err(Error::InvalidEvent { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(g.has_edge(0, 3));
    }

    #[test]
    fn empty_net_batch_is_a_no_op() {
        let mut g = triangle_plus_one();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-7).unwrap();
        let mut state = PropagationState::new(&g, unit(4, 0)).unwrap();
        propagate_all(&g, &cfg, &mut state).unwrap();
        let before = state.clone();
        let staged = stage_batch(
            &mut g,
            &mut state,
            &cfg,
            &[GraphEvent::insert(1, 3), GraphEvent::delete(3, 1)],
        )
        .unwrap();
        assert!(staged.affected.is_empty());
        assert_eq!(state, before);
    }

    #[test]
    fn invalid_batch_is_rejected_before_mutation() {
        let mut g = triangle_plus_one();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-7).unwrap();
        let mut state = PropagationState::new(&g, unit(4, 0)).unwrap();
        let (g0, s0) = (g.clone(), state.clone());
        let evs = [GraphEvent::insert(0, 3), GraphEvent::delete(1, 3)];
        assert!(batch_update(&mut g, &mut state, &cfg, &evs).is_err());
        assert_eq!((g, state), (g0, s0));
    }

    #[test]
    fn degree_preserving_swap_is_still_affected() {
        // node 1 loses 2 and gains 3: same degree, different neighbors
        let mut g = triangle_plus_one();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-8).unwrap();
        let x = ColumnMatrix::from_columns(4, &[vec![0.1, 0.8, -0.5, 0.3]]).unwrap();
        let mut state = PropagationState::new(&g, x).unwrap();
        propagate_all(&g, &cfg, &mut state).unwrap();
        let evs = [GraphEvent::delete(1, 2), GraphEvent::insert(1, 3)];
        let staged = stage_batch(&mut g, &mut state, &cfg, &evs).unwrap();
        let one = staged.affected.iter().find(|a| a.node == 1).unwrap();
        assert_eq!(one.old_degree, one.new_degree);
        let identity = ExactSolver::new(&g, &cfg).unwrap().check_invariant(&state, 0);
        assert!(identity < 1e-14, "{identity}");
    }

    #[test]
    fn attribute_updates() {
        let g = triangle_plus_one();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-7).unwrap();
        let x = ColumnMatrix::from_columns(4, &[vec![0.5, 0.1, 0.0, 0.2], vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let mut state = PropagationState::new(&g, x.clone()).unwrap();
        propagate_all(&g, &cfg, &mut state).unwrap();

        let report = update_attributes(&g, &mut state, &cfg, x.clone()).unwrap();
        assert_eq!(report.residual_increments, 0);
        assert_eq!(report.push_stats.pushes, 0);

        let mut bumped = x.clone();
        bumped.set(2, 1, 0.25);
        let residual_before = state.residual().get(2, 1);
        let written = stage_attributes(&g, &mut state, &cfg, bumped.clone()).unwrap();
        assert_eq!(written, 1);
        assert_eq!(state.residual().get(2, 1), residual_before + 0.25);
        propagate_all(&g, &cfg, &mut state).unwrap();
        assert!(verify_state(&g, &cfg, &state).unwrap().passed());

        assert!(update_attributes(&g, &mut state, &cfg, ColumnMatrix::zeros(4, 3)).is_err());
    }
}
