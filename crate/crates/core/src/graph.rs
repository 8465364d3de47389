//! Mutable undirected graph with permanent self-loops.
//!
//! Every node lists itself as a neighbor, so `degree(s) >= 1` always holds and a
//! dangling node pushes residual mass back onto itself.

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    edge_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    InsertEdge,
    DeleteEdge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GraphEvent {
    pub kind: EventKind,
    pub u: usize,
    pub v: usize,
}

impl GraphEvent {
    pub fn insert(u: usize, v: usize) -> Self {
        Self { kind: EventKind::InsertEdge, u, v }
    }

    pub fn delete(u: usize, v: usize) -> Self {
        Self { kind: EventKind::DeleteEdge, u, v }
    }
}

/// Ordered edge operations over a fixed node set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub node_count: usize,
    pub events: Vec<GraphEvent>,
}

impl Graph {
    pub fn new(node_count: usize) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::EmptyGraph);
        }
        Ok(Self {
            adjacency: (0..node_count).map(|s| vec![s]).collect(),
            edge_count: 0,
        })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Undirected edges, self-loops excluded.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Degree including the self-loop.
    #[inline]
    pub fn degree(&self, s: usize) -> usize {
        self.adjacency[s].len()
    }

    /// Neighbors including `s` itself. Order is insertion order perturbed by
    /// swap-removes; callers must not depend on it.
    #[inline]
    pub fn neighbors(&self, s: usize) -> &[usize] {
        &self.adjacency[s]
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        if u >= self.node_count() || v >= self.node_count() {
            return false;
        }
        let (a, b) = if self.degree(u) <= self.degree(v) { (u, v) } else { (v, u) };
        self.adjacency[a].contains(&b)
    }

    fn check_pair(&self, u: usize, v: usize) -> Result<()> {
        let n = self.node_count();
        for node in [u, v] {
            if node >= n {
                return Err(Error::NodeOutOfRange { node, node_count: n });
            }
        }
        if u == v {
            return Err(Error::SelfLoopEvent(u));
        }
        Ok(())
    }

    /// Checks an event against the current edge set without mutating.
    pub fn check_event(&self, ev: &GraphEvent) -> Result<()> {
        self.check_pair(ev.u, ev.v)?;
        match (ev.kind, self.has_edge(ev.u, ev.v)) {
            (EventKind::InsertEdge, true) => Err(Error::DuplicateEdge(ev.u, ev.v)),
            (EventKind::DeleteEdge, false) => Err(Error::MissingEdge(ev.u, ev.v)),
            _ => Ok(()),
        }
    }

    pub fn insert_edge(&mut self, u: usize, v: usize) -> Result<()> {
        self.check_event(&GraphEvent::insert(u, v))?;
        self.adjacency[u].push(v);
        self.adjacency[v].push(u);
        self.edge_count += 1;
        Ok(())
    }

    pub fn delete_edge(&mut self, u: usize, v: usize) -> Result<()> {
        self.check_event(&GraphEvent::delete(u, v))?;
        remove_neighbor(&mut self.adjacency[u], v);
        remove_neighbor(&mut self.adjacency[v], u);
        self.edge_count -= 1;
        Ok(())
    }

    pub fn apply(&mut self, ev: &GraphEvent) -> Result<()> {
        match ev.kind {
            EventKind::InsertEdge => self.insert_edge(ev.u, ev.v),
            EventKind::DeleteEdge => self.delete_edge(ev.u, ev.v),
        }
    }

    /// All undirected edges as `(min, max)` pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            out.extend(nbrs.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out.sort_unstable();
        out
    }

    /// Order-insensitive adjacency, for comparing graphs built along different paths.
    pub fn canonical_adjacency(&self) -> Vec<Vec<usize>> {
        self.adjacency
            .iter()
            .map(|nbrs| {
                let mut sorted = nbrs.clone();
                sorted.sort_unstable();
                sorted
            })
            .collect()
    }

    /// Full-scan structural check: self-loops, symmetry, no duplicates, edge count.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut directed = 0usize;
        for (s, nbrs) in self.adjacency.iter().enumerate() {
            if nbrs.iter().filter(|&&t| t == s).count() != 1 {
                return Err(format!("node {s} does not have exactly one self-loop"));
            }
            let mut sorted = nbrs.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(format!("node {s} has duplicate neighbors"));
            }
            for &t in nbrs {
                if t >= self.node_count() {
                    return Err(format!("node {s} lists out-of-range neighbor {t}"));
                }
                if t != s {
                    directed += 1;
                    if !self.adjacency[t].contains(&s) {
                        return Err(format!("edge ({s}, {t}) is not symmetric"));
                    }
                }
            }
        }
        if directed != 2 * self.edge_count {
            return Err(format!(
                "edge count {} disagrees with adjacency ({} directed entries)",
                self.edge_count, directed
            ));
        }
        Ok(())
    }
}

fn remove_neighbor(list: &mut Vec<usize>, target: usize) {
    if let Some(pos) = list.iter().position(|&t| t == target) {
        list.swap_remove(pos);
    }
}

#[inline]
pub(crate) fn edge_key(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Net effect of an event sequence relative to a base graph.
#[derive(Debug, Clone, Default)]
pub(crate) struct NetChange {
    pub added: Vec<(usize, usize)>,
    pub removed: Vec<(usize, usize)>,
}

/// Replays `events` against `g` through an overlay of touched edges, without
/// mutating `g`. Fails on the first event that is invalid at its position.
pub(crate) fn net_change(g: &Graph, events: &[GraphEvent]) -> Result<NetChange> {
    let n = g.node_count();
    let mut overlay: HashMap<(usize, usize), bool> = HashMap::new();
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (index, ev) in events.iter().enumerate() {
        let wrap = |source: Error| Error::InvalidEvent { index, source: Box::new(source) };
        for node in [ev.u, ev.v] {
            if node >= n {
                return Err(wrap(Error::NodeOutOfRange { node, node_count: n }));
            }
        }
        if ev.u == ev.v {
            return Err(wrap(Error::SelfLoopEvent(ev.u)));
        }
        let key = edge_key(ev.u, ev.v);
        let present = match overlay.get(&key) {
            Some(&p) => p,
            None => {
                order.push(key);
                g.has_edge(key.0, key.1)
            }
        };
        match (ev.kind, present) {
            (EventKind::InsertEdge, true) => return Err(wrap(Error::DuplicateEdge(ev.u, ev.v))),
            (EventKind::DeleteEdge, false) => return Err(wrap(Error::MissingEdge(ev.u, ev.v))),
            (EventKind::InsertEdge, false) => overlay.insert(key, true),
            (EventKind::DeleteEdge, true) => overlay.insert(key, false),
        };
    }
    let mut change = NetChange::default();
    for key in order {
        let initial = g.has_edge(key.0, key.1);
        match (initial, overlay[&key]) {
            (false, true) => change.added.push(key),
            (true, false) => change.removed.push(key),
            _ => {}
        }
    }
    Ok(change)
}

impl EventLog {
    pub fn new(node_count: usize) -> Self {
        Self { node_count, events: Vec::new() }
    }

    pub fn push(&mut self, ev: GraphEvent) {
        self.events.push(ev);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Applies every event to `g` in order. Stops at the first invalid one and
    /// reports its index; earlier events stay applied.
    pub fn replay(&self, g: &mut Graph) -> Result<()> {
        for (index, ev) in self.events.iter().enumerate() {
            g.apply(ev)
                .map_err(|e| Error::InvalidEvent { index, source: Box::new(e) })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_graph_has_only_self_loops() {
        let g = Graph::new(1).unwrap();
        assert_eq!(g.degree(0), 1);
        assert_eq!(g.neighbors(0), &[0]);

        let g = Graph::new(3).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.degrees(), vec![1, 1, 1]);
        assert!(matches!(Graph::new(0), Err(Error::EmptyGraph)));
    }

    #[test]
    fn insert_updates_both_endpoints() {
        let mut g = Graph::new(3).unwrap();
        g.insert_edge(0, 1).unwrap();
        assert_eq!(g.degrees(), vec![2, 2, 1]);
        g.insert_edge(1, 2).unwrap();
        g.insert_edge(2, 0).unwrap();
        assert_eq!(g.degrees(), vec![3, 3, 3]);
        assert_eq!(g.edge_count(), 3);
        g.validate().unwrap();
    }

    #[test]
    fn rejects_duplicate_and_self_loop() {
        let mut g = Graph::new(3).unwrap();
        g.insert_edge(0, 1).unwrap();
        assert!(matches!(g.insert_edge(1, 0), Err(Error::DuplicateEdge(1, 0))));
        assert!(matches!(g.insert_edge(2, 2), Err(Error::SelfLoopEvent(2))));
        assert!(matches!(g.insert_edge(0, 7), Err(Error::NodeOutOfRange { node: 7, .. })));
        assert_eq!(g.degrees(), vec![2, 2, 1]);
    }

    #[test]
    fn delete_is_inverse_of_insert() {
        let mut g = Graph::new(4).unwrap();
        let base = g.clone();
        g.insert_edge(0, 1).unwrap();
        g.delete_edge(0, 1).unwrap();
        assert_eq!(g.canonical_adjacency(), base.canonical_adjacency());
        assert!(matches!(g.delete_edge(0, 1), Err(Error::MissingEdge(0, 1))));
        assert!(matches!(g.delete_edge(2, 2), Err(Error::SelfLoopEvent(2))));
        assert!(g.degrees().iter().all(|&d| d >= 1));
    }

    #[test]
    fn net_change_collapses_insert_then_delete() {
        let mut g = Graph::new(4).unwrap();
        g.insert_edge(0, 1).unwrap();
        let evs = [
            GraphEvent::insert(2, 3),
            GraphEvent::delete(3, 2),
            GraphEvent::delete(0, 1),
            GraphEvent::insert(1, 2),
        ];
        let change = net_change(&g, &evs).unwrap();
        assert_eq!(change.added, vec![(1, 2)]);
        assert_eq!(change.removed, vec![(0, 1)]);

        let bad = [GraphEvent::insert(2, 3), GraphEvent::insert(3, 2)];
        match net_change(&g, &bad) {
            Err(Error::InvalidEvent { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn replay_reports_failing_index() {
        let mut g = Graph::new(3).unwrap();
        let log = EventLog {
            node_count: 3,
            events: vec![GraphEvent::insert(0, 1), GraphEvent::delete(1, 2)],
        };
        match log.replay(&mut g) {
            Err(Error::InvalidEvent { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(g.has_edge(0, 1));
    }
}
