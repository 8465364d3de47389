//! Dynamic stochastic block model: a planted-community graph plus per-step
//! migrations that rewire nodes from one block to another.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphEvent};
use crate::matrix::ColumnMatrix;

pub type SbmRng = ChaCha8Rng;

/// Fraction of nonzero entries in generated feature matrices.
pub const FEATURE_DENSITY: f64 = 0.01;

const RESAMPLE_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbmConfig {
    pub nodes: usize,
    pub blocks: usize,
    /// Expected intra-block edges per node.
    pub intra_degree: f64,
    /// Expected inter-block edges per node.
    pub inter_degree: f64,
    pub migrants_per_step: usize,
    pub seed: u64,
}

impl SbmConfig {
    pub fn block_size(&self) -> usize {
        self.nodes / self.blocks
    }

    /// Block of node `s`; the remainder of an uneven split joins the last block.
    pub fn block_of(&self, s: usize) -> usize {
        (s / self.block_size()).min(self.blocks - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks < 2 {
            return Err(Error::Infeasible(format!("need at least 2 blocks, got {}", self.blocks)));
        }
        if self.nodes < self.blocks {
            return Err(Error::Infeasible(format!("{} nodes cannot fill {} blocks", self.nodes, self.blocks)));
        }
        if !(self.intra_degree >= 0.0 && self.inter_degree >= 0.0) {
            return Err(Error::Infeasible("expected degrees must be non-negative".into()));
        }
        let smallest = self.block_size();
        let largest = self.nodes - smallest * (self.blocks - 1);
        if self.intra_degree >= smallest as f64 {
            return Err(Error::Infeasible(format!(
                "intra degree {} needs blocks larger than {smallest}",
                self.intra_degree
            )));
        }
        if self.inter_degree >= (self.nodes - largest) as f64 {
            return Err(Error::Infeasible(format!(
                "inter degree {} exceeds the {} nodes outside the largest block",
                self.inter_degree,
                self.nodes - largest
            )));
        }
        if self.migrants_per_step > self.nodes {
            return Err(Error::Infeasible(format!(
                "{} migrants per step exceeds {} nodes",
                self.migrants_per_step, self.nodes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommunityLabels {
    pub blocks: usize,
    pub labels: Vec<usize>,
}

impl CommunityLabels {
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.blocks];
        for (s, &b) in self.labels.iter().enumerate() {
            out[b].push(s);
        }
        out
    }
}

/// `floor(x)` plus one with probability `frac(x)`, so the mean is `x`.
fn randomized_round(rng: &mut SbmRng, x: f64) -> usize {
    let base = x.floor();
    base as usize + usize::from(rng.random_bool(x - base))
}

/// Builds the initial graph. Each node draws how many intra- and inter-block
/// partners it initiates (half the expected degree each, since every edge has
/// two endpoints) and picks them uniformly, resampling duplicates.
pub fn sbm_init(cfg: &SbmConfig) -> Result<(Graph, CommunityLabels, SbmRng)> {
    cfg.validate()?;
    let mut rng = SbmRng::seed_from_u64(cfg.seed);
    let labels = CommunityLabels {
        blocks: cfg.blocks,
        labels: (0..cfg.nodes).map(|s| cfg.block_of(s)).collect(),
    };
    let members = labels.members();
    let mut g = Graph::new(cfg.nodes)?;
    for s in 0..cfg.nodes {
        let own = labels.labels[s];
        let intra = randomized_round(&mut rng, cfg.intra_degree / 2.0);
        for _ in 0..intra {
            let block = &members[own];
            for _ in 0..RESAMPLE_ATTEMPTS {
                let t = block[rng.random_range(0..block.len())];
                if t != s && !g.has_edge(s, t) {
                    g.insert_edge(s, t)?;
                    break;
                }
            }
        }
        let inter = randomized_round(&mut rng, cfg.inter_degree / 2.0);
        for _ in 0..inter {
            for _ in 0..RESAMPLE_ATTEMPTS {
                let t = rng.random_range(0..cfg.nodes);
                if labels.labels[t] != own && !g.has_edge(s, t) {
                    g.insert_edge(s, t)?;
                    break;
                }
            }
        }
    }
    Ok((g, labels, rng))
}

/// Moves `migrants_per_step` uniformly chosen nodes to other blocks. Each
/// migrant drops its edges to nodes that were in its old block when the step
/// began, then gains about `intra_degree` edges to uniform members of a
/// uniformly chosen new block. Inter-block edges are kept. The returned
/// events replay validly on `g` in order.
pub fn sbm_migrate(
    g: &Graph,
    labels: &mut CommunityLabels,
    cfg: &SbmConfig,
    rng: &mut SbmRng,
) -> Vec<GraphEvent> {
    let mut work = g.clone();
    let mut members = labels.members();
    let start = labels.labels.clone();
    let mut events = Vec::new();
    let chosen = index::sample(rng, cfg.nodes, cfg.migrants_per_step.min(cfg.nodes)).into_vec();
    for s in chosen {
        let old = labels.labels[s];
        let mut stale: Vec<usize> = work
            .neighbors(s)
            .iter()
            .copied()
            .filter(|&t| t != s && start[t] == old)
            .collect();
        stale.sort_unstable();
        for t in stale {
            work.delete_edge(s, t).expect("edge listed as neighbor");
            events.push(GraphEvent::delete(s, t));
        }

        let pick = rng.random_range(0..cfg.blocks - 1);
        let new = if pick >= old { pick + 1 } else { pick };
        let wanted = randomized_round(rng, cfg.intra_degree);
        let target = &members[new];
        if !target.is_empty() {
            for _ in 0..wanted {
                for _ in 0..RESAMPLE_ATTEMPTS {
                    let t = target[rng.random_range(0..target.len())];
                    if t != s && !work.has_edge(s, t) {
                        work.insert_edge(s, t).expect("checked absent");
                        events.push(GraphEvent::insert(s, t));
                        break;
                    }
                }
            }
        }

        if let Some(pos) = members[old].iter().position(|&t| t == s) {
            members[old].swap_remove(pos);
        }
        members[new].push(s);
        labels.labels[s] = new;
    }
    events
}

/// `nodes x dims` matrix with each entry nonzero with probability
/// [`FEATURE_DENSITY`], nonzeros uniform in (0, 1].
pub fn sparse_features(nodes: usize, dims: usize, rng: &mut SbmRng) -> ColumnMatrix {
    let mut m = ColumnMatrix::zeros(nodes, dims);
    for j in 0..dims {
        for s in 0..nodes {
            if rng.random_bool(FEATURE_DENSITY) {
                m.set(s, j, 1.0 - rng.random::<f64>());
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SbmConfig {
        SbmConfig { nodes: 200, blocks: 4, intra_degree: 8.0, inter_degree: 1.0, migrants_per_step: 5, seed: 7 }
    }

    #[test]
    fn no_inter_edges_when_inter_degree_is_zero() {
        let cfg = SbmConfig { inter_degree: 0.0, ..small() };
        let (g, labels, _) = sbm_init(&cfg).unwrap();
        for (u, v) in g.edges() {
            assert_eq!(labels.labels[u], labels.labels[v]);
        }
        g.validate().unwrap();
    }

    #[test]
    fn deterministic_under_seed() {
        let (a, _, mut ra) = sbm_init(&small()).unwrap();
        let (b, mut lb, mut rb) = sbm_init(&small()).unwrap();
        assert_eq!(a.edges(), b.edges());
        let mut la = lb.clone();
        assert_eq!(
            sbm_migrate(&a, &mut la, &small(), &mut ra),
            sbm_migrate(&b, &mut lb, &small(), &mut rb)
        );
        let (c, _, _) = sbm_init(&SbmConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn remainder_nodes_join_last_block() {
        let cfg = SbmConfig { nodes: 11, blocks: 3, intra_degree: 1.0, inter_degree: 0.0, migrants_per_step: 0, seed: 1 };
        assert_eq!(cfg.block_of(10), 2);
        assert_eq!(cfg.block_of(9), 2);
        assert_eq!(cfg.block_of(5), 1);
    }

    #[test]
    fn infeasible_configs() {
        assert!(sbm_init(&SbmConfig { blocks: 1, ..small() }).is_err());
        assert!(sbm_init(&SbmConfig { intra_degree: 50.0, ..small() }).is_err());
        assert!(sbm_init(&SbmConfig { inter_degree: 150.0, ..small() }).is_err());
        assert!(sbm_init(&SbmConfig { migrants_per_step: 201, ..small() }).is_err());
    }

    #[test]
    fn migration_rewires_out_of_old_block() {
        let cfg = small();
        let (mut g, mut labels, mut rng) = sbm_init(&cfg).unwrap();
        let before = labels.clone();
        let events = sbm_migrate(&g, &mut labels, &cfg, &mut rng);
        let migrants: Vec<usize> = (0..cfg.nodes).filter(|&s| labels.labels[s] != before.labels[s]).collect();
        assert_eq!(migrants.len(), cfg.migrants_per_step);
        let prior = &before.labels;
        let old_intra: Vec<(usize, usize)> = migrants
            .iter()
            .flat_map(|&s| {
                g.neighbors(s)
                    .iter()
                    .filter(move |&&t| t != s && prior[t] == prior[s])
                    .map(move |&t| (s, t))
                    .collect::<Vec<_>>()
            })
            .collect();
        for ev in &events {
            g.apply(ev).unwrap();
        }
        g.validate().unwrap();
        for (s, t) in old_intra {
            assert!(!g.has_edge(s, t), "migrant {s} kept old intra edge to {t}");
        }

        let none = sbm_migrate(&g, &mut labels, &SbmConfig { migrants_per_step: 0, ..cfg }, &mut rng);
        assert!(none.is_empty());
    }

    #[test]
    fn feature_density_is_about_one_percent() {
        let mut rng = SbmRng::seed_from_u64(3);
        let m = sparse_features(2000, 10, &mut rng);
        let nz = m.as_slice().iter().filter(|v| **v != 0.0).count();
        assert!((150..250).contains(&nz), "{nz}");
        assert!(m.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
