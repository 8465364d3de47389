//! Exact dense propagation and state validators.
//!
//! Everything here works from the graph's adjacency and the public accessors of
//! [`PropagationState`]; none of it shares code with the push engine. The exact
//! vector solves `(I - (1-alpha) P) pi = alpha x` by Gaussian elimination with
//! partial pivoting; a truncated power series serves as a second, independent
//! route.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::propagation::{PropagationConfig, PropagationState};

/// Largest graph the dense oracle accepts.
pub const DENSE_LIMIT: usize = 5000;

/// Floating-point slack for the push invariant, relative to `1 + ||x||_inf`.
pub const INVARIANT_TOLERANCE: f64 = 1e-9;

/// Absolute slack on the per-node error bound.
pub const BOUND_TOLERANCE: f64 = 1e-12;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        self.data
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// LU factors with row pivoting: `P A = L U`, unit lower `L` stored below the diagonal.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: DenseMatrix,
    pivots: Vec<usize>,
}

impl LuFactors {
    pub fn factor(mut a: DenseMatrix) -> Result<Self> {
        let n = a.n;
        let mut pivots: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, max) = (k..n)
                .map(|i| (i, a.get(i, k).abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(max > 0.0) || !max.is_finite() {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                pivots.swap(k, p);
            }
            let pivot = a.get(k, k);
            let (upper, lower) = a.data.split_at_mut((k + 1) * n);
            let row_k = &upper[k * n..(k + 1) * n];
            for row in lower.chunks_exact_mut(n) {
                let factor = row[k] / pivot;
                row[k] = factor;
                if factor != 0.0 {
                    for (r, u) in row[k + 1..].iter_mut().zip(&row_k[k + 1..]) {
                        *r -= factor * u;
                    }
                }
            }
        }
        Ok(Self { lu: a, pivots })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.pivots.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu.data[i * n..i * n + i];
            let acc: f64 = row.iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
            y[i] -= acc;
        }
        for i in (0..n).rev() {
            let row = &self.lu.data[i * n..(i + 1) * n];
            let acc: f64 = row[i + 1..].iter().zip(&y[i + 1..]).map(|(u, v)| u * v).sum();
            y[i] = (y[i] - acc) / row[i];
        }
        y
    }
}

fn guard(g: &Graph) -> Result<()> {
    if g.node_count() > DENSE_LIMIT {
        return Err(Error::OracleInfeasible { node_count: g.node_count(), limit: DENSE_LIMIT });
    }
    Ok(())
}

/// Dense `P = D^-beta A D^(beta-1)` of the current graph (self-loops included in `A`).
pub fn propagation_matrix(g: &Graph, beta: f64) -> Result<DenseMatrix> {
    guard(g)?;
    let n = g.node_count();
    let mut p = DenseMatrix::zeros(n);
    for t in 0..n {
        let dt = g.degree(t) as f64;
        for &s in g.neighbors(t) {
            let ds = g.degree(s) as f64;
            p.set(t, s, dt.powf(-beta) * ds.powf(beta - 1.0));
        }
    }
    Ok(p)
}

/// Factored `I - (1-alpha) P` for one graph and configuration; solves any
/// number of signal columns.
#[derive(Debug, Clone)]
pub struct ExactSolver {
    cfg: PropagationConfig,
    p: DenseMatrix,
    degrees: Vec<usize>,
    lu: LuFactors,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// `max_s |est(s) - pi(s)| - epsilon * d(s)^(1-beta)`; non-positive means the bound holds.
    pub max_violation: f64,
    pub worst_node: usize,
}

impl ExactSolver {
    pub fn new(g: &Graph, cfg: &PropagationConfig) -> Result<Self> {
        cfg.validate()?;
        let p = propagation_matrix(g, cfg.beta)?;
        let n = g.node_count();
        let mut system = DenseMatrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                let pij = p.get(i, j);
                if pij != 0.0 {
                    system.set(i, j, system.get(i, j) - (1.0 - cfg.alpha) * pij);
                }
            }
        }
        let lu = LuFactors::factor(system)?;
        Ok(Self { cfg: *cfg, p, degrees: g.degrees(), lu })
    }

    pub fn config(&self) -> &PropagationConfig {
        &self.cfg
    }

    pub fn propagation_matrix(&self) -> &DenseMatrix {
        &self.p
    }

    /// Exact propagation of one signal column.
    pub fn solve(&self, x: &[f64]) -> Vec<f64> {
        let rhs: Vec<f64> = x.iter().map(|v| self.cfg.alpha * v).collect();
        self.lu.solve(&rhs)
    }

    pub fn check_error_bound(&self, state: &PropagationState, column: usize) -> BoundReport {
        let exact = self.solve(state.signal().column(column));
        self.bound_against(&exact, state.estimate().column(column))
    }

    /// Per-node bound check of an estimate against a precomputed exact vector.
    pub fn bound_against(&self, exact: &[f64], estimate: &[f64]) -> BoundReport {
        let mut report = BoundReport { max_violation: f64::NEG_INFINITY, worst_node: 0 };
        for (s, (&pi, &est)) in exact.iter().zip(estimate).enumerate() {
            let allowed = self.cfg.epsilon * (self.degrees[s] as f64).powf(1.0 - self.cfg.beta);
            let violation = match (est - pi).abs() - allowed {
                v if v.is_nan() => f64::INFINITY,
                v => v,
            };
            if violation > report.max_violation {
                report = BoundReport { max_violation: violation, worst_node: s };
            }
        }
        report
    }

    /// `||est + alpha res - alpha x - (1-alpha) P est||_inf` for one column.
    pub fn check_invariant(&self, state: &PropagationState, column: usize) -> f64 {
        identity_residual(
            &self.p,
            self.cfg.alpha,
            state.estimate().column(column),
            state.residual().column(column),
            state.signal().column(column),
        )
    }
}

fn identity_residual(p: &DenseMatrix, alpha: f64, est: &[f64], res: &[f64], x: &[f64]) -> f64 {
    let pe = p.mul_vec(est);
    (0..est.len())
        .map(|s| (est[s] + alpha * res[s] - alpha * x[s] - (1.0 - alpha) * pe[s]).abs())
        .fold(0.0, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v) })
}

/// Exact propagation of `x` on `g` by dense solve.
pub fn exact_propagate(g: &Graph, cfg: &PropagationConfig, x: &[f64]) -> Result<Vec<f64>> {
    check_len(g, x)?;
    Ok(ExactSolver::new(g, cfg)?.solve(x))
}

/// Exact propagation by summing `alpha (1-alpha)^l P^l x` until `(1-alpha)^(l+1) < 1e-14`.
pub fn series_propagate(g: &Graph, cfg: &PropagationConfig, x: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_len(g, x)?;
    let p = propagation_matrix(g, cfg.beta)?;
    let mut term: Vec<f64> = x.iter().map(|v| cfg.alpha * v).collect();
    let mut sum = term.clone();
    let mut weight = 1.0 - cfg.alpha;
    while weight >= 1e-14 {
        term = p.mul_vec(&term).into_iter().map(|v| v * (1.0 - cfg.alpha)).collect();
        for (acc, t) in sum.iter_mut().zip(&term) {
            *acc += t;
        }
        weight *= 1.0 - cfg.alpha;
    }
    Ok(sum)
}

/// Personalized PageRank from `source`: beta = 0 propagation of the indicator of `source`.
pub fn exact_ppr(g: &Graph, alpha: f64, source: usize) -> Result<Vec<f64>> {
    if source >= g.node_count() {
        return Err(Error::NodeOutOfRange { node: source, node_count: g.node_count() });
    }
    let cfg = PropagationConfig::new(alpha, 0.0, 1.0)?;
    let mut x = vec![0.0; g.node_count()];
    x[source] = 1.0;
    exact_propagate(g, &cfg, &x)
}

pub fn check_error_bound(
    g: &Graph,
    cfg: &PropagationConfig,
    state: &PropagationState,
    column: usize,
) -> Result<BoundReport> {
    check_column(g, state, column)?;
    Ok(ExactSolver::new(g, cfg)?.check_error_bound(state, column))
}

pub fn check_invariant(g: &Graph, cfg: &PropagationConfig, state: &PropagationState, column: usize) -> Result<f64> {
    check_column(g, state, column)?;
    cfg.validate()?;
    let p = propagation_matrix(g, cfg.beta)?;
    Ok(identity_residual(
        &p,
        cfg.alpha,
        state.estimate().column(column),
        state.residual().column(column),
        state.signal().column(column),
    ))
}

/// Worst invariant residual and bound violation over every column.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub max_identity_residual: f64,
    /// Column with the largest identity residual relative to `1 + ||x||_inf`.
    pub worst_identity_column: usize,
    pub invariant_ok: bool,
    pub max_bound_violation: f64,
    pub worst_bound_column: usize,
    pub worst_bound_node: usize,
    pub bound_ok: bool,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.invariant_ok && self.bound_ok
    }
}

/// Full oracle check of a state: the push invariant within
/// `INVARIANT_TOLERANCE * (1 + ||x||_inf)` and the error bound within
/// `BOUND_TOLERANCE`, on every column.
pub fn verify_state(g: &Graph, cfg: &PropagationConfig, state: &PropagationState) -> Result<VerifyReport> {
    if state.node_count() != g.node_count() {
        return Err(Error::ShapeMismatch {
            expected_rows: g.node_count(),
            expected_cols: state.dims(),
            rows: state.node_count(),
            cols: state.dims(),
        });
    }
    let solver = ExactSolver::new(g, cfg)?;
    let mut report = VerifyReport {
        max_identity_residual: 0.0,
        worst_identity_column: 0,
        invariant_ok: true,
        max_bound_violation: f64::NEG_INFINITY,
        worst_bound_column: 0,
        worst_bound_node: 0,
        bound_ok: true,
    };
    let mut worst_ratio = 0.0;
    for j in 0..state.dims() {
        let identity = solver.check_invariant(state, j);
        let scale = 1.0 + state.signal().column(j).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ratio = identity / scale;
        if ratio > worst_ratio || ratio.is_nan() {
            worst_ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
            report.worst_identity_column = j;
        }
        report.max_identity_residual = report.max_identity_residual.max(identity);
        if !(identity <= INVARIANT_TOLERANCE * scale) {
            report.invariant_ok = false;
        }
        let bound = solver.check_error_bound(state, j);
        if bound.max_violation > report.max_bound_violation {
            report.max_bound_violation = bound.max_violation;
            report.worst_bound_column = j;
            report.worst_bound_node = bound.worst_node;
        }
        if !(bound.max_violation <= BOUND_TOLERANCE) {
            report.bound_ok = false;
        }
    }
    Ok(report)
}

fn check_len(g: &Graph, x: &[f64]) -> Result<()> {
    if x.len() != g.node_count() {
        return Err(Error::ShapeMismatch { expected_rows: g.node_count(), expected_cols: 1, rows: x.len(), cols: 1 });
    }
    Ok(())
}

fn check_column(g: &Graph, state: &PropagationState, column: usize) -> Result<()> {
    if state.node_count() != g.node_count() || column >= state.dims() {
        return Err(Error::ShapeMismatch {
            expected_rows: g.node_count(),
            expected_cols: column + 1,
            rows: state.node_count(),
            cols: state.dims(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::ColumnMatrix;
    use crate::propagation::propagate_all;

    fn path3() -> Graph {
        let mut g = Graph::new(3).unwrap();
        g.insert_edge(0, 1).unwrap();
        g.insert_edge(1, 2).unwrap();
        g
    }

    #[test]
    fn lu_solves_small_system() {
        let mut a = DenseMatrix::zeros(3);
        let rows = [[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]];
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                a.set(i, j, *v);
            }
        }
        let x = [1.0, -2.0, 0.5];
        let b = a.mul_vec(&x);
        let solved = LuFactors::factor(a).unwrap().solve(&b);
        for (s, e) in solved.iter().zip(x) {
            assert!((s - e).abs() < 1e-14);
        }
        assert!(matches!(LuFactors::factor(DenseMatrix::zeros(2)), Err(Error::Singular)));
    }

    #[test]
    fn one_node_graph_returns_signal() {
        let g = Graph::new(1).unwrap();
        let cfg = PropagationConfig::new(0.3, 0.5, 1e-6).unwrap();
        let pi = exact_propagate(&g, &cfg, &[2.5]).unwrap();
        assert!((pi[0] - 2.5).abs() < 1e-15);
        assert!((exact_ppr(&g, 0.3, 0).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn beta_zero_conserves_mass() {
        let mut g = Graph::new(2).unwrap();
        g.insert_edge(0, 1).unwrap();
        let cfg = PropagationConfig::new(0.15, 0.0, 1e-6).unwrap();
        let x = [0.7, -0.2];
        let pi = exact_propagate(&g, &cfg, &x).unwrap();
        assert!((pi.iter().sum::<f64>() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn series_matches_solve_on_path() {
        let g = path3();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-6).unwrap();
        let x = [1.0, 0.0, 0.0];
        let a = exact_propagate(&g, &cfg, &x).unwrap();
        let b = series_propagate(&g, &cfg, &x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-12, "{p} vs {q}");
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn ppr_is_a_distribution_with_degree_symmetry() {
        let g = path3();
        let pis: Vec<Vec<f64>> = (0..3).map(|s| exact_ppr(&g, 0.2, s).unwrap()).collect();
        for pi in &pis {
            assert!(pi.iter().all(|&v| v >= 0.0));
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for s in 0..3 {
            for t in 0..3 {
                let lhs = g.degree(s) as f64 * pis[s][t];
                let rhs = g.degree(t) as f64 * pis[t][s];
                assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn validators_on_fresh_and_corrupted_states() {
        let g = path3();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-7).unwrap();
        let x = ColumnMatrix::from_columns(3, &[vec![100.0, -40.0, 7.0]]).unwrap();
        let mut state = PropagationState::new(&g, x).unwrap();
        assert_eq!(check_invariant(&g, &cfg, &state, 0).unwrap(), 0.0);
        assert!(check_error_bound(&g, &cfg, &state, 0).unwrap().max_violation > 0.0);

        propagate_all(&g, &cfg, &mut state).unwrap();
        assert!(check_error_bound(&g, &cfg, &state, 0).unwrap().max_violation <= BOUND_TOLERANCE);
        assert!(verify_state(&g, &cfg, &state).unwrap().passed());

        let mut bumped = state.clone();
        let allowed = cfg.epsilon * (g.degree(1) as f64).powf(0.5);
        let old = bumped.estimate().get(1, 0);
        bumped.estimate_mut().set(1, 0, old + 10.0 * allowed);
        let report = check_error_bound(&g, &cfg, &bumped, 0).unwrap();
        assert_eq!(report.worst_node, 1);
        assert!(report.max_violation > 8.0 * allowed);

        let mut shifted = state.clone();
        let old = shifted.residual().get(2, 0);
        shifted.residual_mut().set(2, 0, old + 1.0);
        let identity = check_invariant(&g, &cfg, &shifted, 0).unwrap();
        assert!((identity - cfg.alpha).abs() < 1e-9);
    }

    #[test]
    fn size_guard() {
        let g = Graph::new(DENSE_LIMIT + 1).unwrap();
        let cfg = PropagationConfig::new(0.2, 0.5, 1e-3).unwrap();
        assert!(matches!(ExactSolver::new(&g, &cfg), Err(Error::OracleInfeasible { .. })));
    }
}
