//! Levenberg-Marquardt pose-graph optimization with a dynamic covariance
//! scaling (DCS) kernel on loop-closure and Manhattan edges.

mod incremental;
pub mod sparse;

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};

pub use incremental::{latest_endpoint, solve_incremental, IncrementalSolver};

use crate::error::{Error, Result};
use crate::pose_graph::{ConstraintKind, PGEdge, Pose2D, PoseGraph};
use sparse::{cholesky, minimum_degree, Symbolic, UpperCsc};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Batch,
    Incremental,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub chi2_rel_tol: f64,
    /// Initial Levenberg-Marquardt λ.
    pub damping: f64,
    pub dcs_phi: f64,
    pub robust_kinds: Vec<ConstraintKind>,
    pub mode: SolveMode,
    pub incremental_batch_period: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 100,
            chi2_rel_tol: 1e-6,
            damping: 1e-4,
            dcs_phi: 1.0,
            robust_kinds: vec![ConstraintKind::LoopClosure, ConstraintKind::Manhattan],
            mode: SolveMode::Batch,
            incremental_batch_period: 10,
        }
    }
}

impl SolverConfig {
    pub fn non_robust() -> Self {
        SolverConfig { robust_kinds: Vec::new(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dcs_phi > 0.0 && self.dcs_phi.is_finite()) {
            return Err(Error::InvalidInput("dcs_phi must be positive".into()));
        }
        if !(self.chi2_rel_tol > 0.0) || !(self.damping > 0.0) {
            return Err(Error::InvalidInput("tolerance and damping must be positive".into()));
        }
        if self.incremental_batch_period == 0 {
            return Err(Error::InvalidInput("incremental_batch_period must be >= 1".into()));
        }
        Ok(())
    }

    /// Odometry is never down-weighted.
    pub fn is_robust(&self, edge: &PGEdge) -> bool {
        edge.robust && edge.kind != ConstraintKind::Odometry && self.robust_kinds.contains(&edge.kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub initial_chi2: f64,
    pub final_chi2: f64,
    pub iterations: usize,
    /// DCS factor per edge at the final estimate (1 for non-robust edges).
    pub scales: Vec<f64>,
    pub converged: bool,
}

/// `between(Z, between(xi, xj))` as (x, y, θ).
pub fn residual(edge: &PGEdge, xi: &Pose2D, xj: &Pose2D) -> Vector3<f64> {
    let e = edge.measurement.between(&xi.between(xj));
    Vector3::new(e.x, e.y, e.theta)
}

/// Jacobians of [`residual`] with respect to (x, y, θ) of `xi` and `xj`.
pub fn jacobians(edge: &PGEdge, xi: &Pose2D, xj: &Pose2D) -> (Matrix3<f64>, Matrix3<f64>) {
    let (si, ci) = xi.theta.sin_cos();
    let (sz, cz) = edge.measurement.theta.sin_cos();
    let (dx, dy) = (xj.x - xi.x, xj.y - xi.y);
    // Rzᵀ Riᵀ is a rotation by -(θz + θi)
    let (s, c) = (edge.measurement.theta + xi.theta).sin_cos();
    let a = [[c, s], [-s, c]];
    // d(Riᵀ)/dθi · (tj - ti)
    let dri = [-si * dx + ci * dy, -ci * dx - si * dy];
    let dt = [cz * dri[0] + sz * dri[1], -sz * dri[0] + cz * dri[1]];
    let ji = Matrix3::new(
        -a[0][0], -a[0][1], dt[0],
        -a[1][0], -a[1][1], dt[1],
        0.0, 0.0, -1.0,
    );
    let jj = Matrix3::new(
        a[0][0], a[0][1], 0.0,
        a[1][0], a[1][1], 0.0,
        0.0, 0.0, 1.0,
    );
    (ji, jj)
}

fn weighted(edge: &PGEdge, r: &Vector3<f64>) -> f64 {
    (r.transpose() * edge.information * r)[(0, 0)]
}

pub fn edge_chi2(edge: &PGEdge, pg: &PoseGraph) -> f64 {
    weighted(edge, &residual(edge, pg.pose(edge.from), pg.pose(edge.to)))
}

/// Unweighted-by-kernel total: Σ rᵀ Ω r.
pub fn chi2(pg: &PoseGraph) -> f64 {
    pg.edges().iter().map(|e| edge_chi2(e, pg)).sum()
}

pub fn dcs_scale(chi2_edge: f64, phi: f64) -> f64 {
    (2.0 * phi / (phi + chi2_edge)).min(1.0)
}

/// Robust cost whose derivative with respect to χ² is `dcs_scale²`.
pub fn dcs_cost(chi2_edge: f64, phi: f64) -> f64 {
    if chi2_edge <= phi {
        chi2_edge
    } else {
        phi * (3.0 * chi2_edge - phi) / (phi + chi2_edge)
    }
}

/// Objective minimized by the solver: χ² for plain edges, DCS cost for
/// robust ones.
pub fn objective(pg: &PoseGraph, cfg: &SolverConfig) -> f64 {
    pg.edges()
        .iter()
        .map(|e| edge_cost(e, edge_chi2(e, pg), cfg))
        .sum()
}

fn edge_cost(edge: &PGEdge, c: f64, cfg: &SolverConfig) -> f64 {
    if cfg.is_robust(edge) {
        dcs_cost(c, cfg.dcs_phi)
    } else {
        c
    }
}

/// Errors with the unreachable node ids if some node cannot be reached from
/// node 0.
pub fn check_connected(pg: &PoseGraph) -> Result<()> {
    let n = pg.len();
    if n == 0 {
        return Err(Error::InvalidGraph("graph has no nodes".into()));
    }
    let mut adj = vec![Vec::new(); n];
    for e in pg.edges() {
        adj[e.from].push(e.to);
        adj[e.to].push(e.from);
    }
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    let missing: Vec<usize> = (0..n).filter(|&v| !seen[v]).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Disconnected(missing))
    }
}

pub fn solve_batch(pg: &PoseGraph, cfg: &SolverConfig) -> Result<(PoseGraph, SolveReport)> {
    cfg.validate()?;
    check_connected(pg)?;
    let mut free = vec![true; pg.len()];
    free[0] = false;
    let mut poses = pg.poses();
    let report = solve_subset(&mut poses, pg.edges(), &free, cfg)?;
    let mut out = pg.clone();
    out.set_poses(&poses);
    Ok((out, report))
}

/// Block layout of the normal equations for one set of free nodes.
struct Structure {
    /// Permuted block index of each free node.
    block: Vec<Option<usize>>,
    active: Vec<usize>,
    h: UpperCsc,
    sym: Symbolic,
    /// Storage slots of each free node's diagonal block, row-major.
    diag_slots: Vec<[usize; 9]>,
    /// Storage slots of each active edge's (from, to) block when both ends
    /// are free.
    cross_slots: Vec<Option<[usize; 9]>>,
}

impl Structure {
    fn new(n_nodes: usize, edges: &[PGEdge], free: &[bool]) -> Self {
        let free_ids: Vec<usize> = (0..n_nodes).filter(|&i| free[i]).collect();
        let mut local = vec![usize::MAX; n_nodes];
        for (k, &i) in free_ids.iter().enumerate() {
            local[i] = k;
        }
        let active: Vec<usize> = (0..edges.len())
            .filter(|&k| free[edges[k].from] || free[edges[k].to])
            .collect();
        let mut adj = vec![Vec::new(); free_ids.len()];
        for &k in &active {
            let (a, b) = (edges[k].from, edges[k].to);
            if free[a] && free[b] {
                adj[local[a]].push(local[b]);
                adj[local[b]].push(local[a]);
            }
        }
        let order = minimum_degree(&adj);
        let mut block = vec![None; n_nodes];
        for (pos, &k) in order.iter().enumerate() {
            block[free_ids[k]] = Some(pos);
        }

        let n = 3 * free_ids.len();
        let mut pattern = Vec::new();
        for &i in &free_ids {
            let b = block[i].unwrap();
            for u in 0..3 {
                for v in u..3 {
                    pattern.push((3 * b + u, 3 * b + v));
                }
            }
        }
        for &k in &active {
            if let (Some(bi), Some(bj)) = (block[edges[k].from], block[edges[k].to]) {
                for u in 0..3 {
                    for v in 0..3 {
                        pattern.push((3 * bi + u, 3 * bj + v));
                    }
                }
            }
        }
        let h = UpperCsc::from_pattern(n, pattern);
        let sym = Symbolic::analyze(&h);
        let slots = |bi: usize, bj: usize| {
            let mut s = [0usize; 9];
            for u in 0..3 {
                for v in 0..3 {
                    s[3 * u + v] = h.slot(3 * bi + u, 3 * bj + v).expect("pattern slot");
                }
            }
            s
        };
        let diag_slots = (0..n_nodes)
            .map(|i| block[i].map_or([0; 9], |b| slots(b, b)))
            .collect();
        let cross_slots = active
            .iter()
            .map(|&k| match (block[edges[k].from], block[edges[k].to]) {
                (Some(bi), Some(bj)) => Some(slots(bi, bj)),
                _ => None,
            })
            .collect();
        Structure { block, active, h, sym, diag_slots, cross_slots }
    }
}

/// Optimizes the `free` nodes of `poses` in place, holding the rest fixed.
pub(crate) fn solve_subset(
    poses: &mut [Pose2D],
    edges: &[PGEdge],
    free: &[bool],
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let mut st = Structure::new(poses.len(), edges, free);
    let cost_of = |poses: &[Pose2D], active: &[usize]| -> f64 {
        active
            .iter()
            .map(|&k| {
                let e = &edges[k];
                edge_cost(e, weighted(e, &residual(e, &poses[e.from], &poses[e.to])), cfg)
            })
            .sum()
    };
    let mut cost = cost_of(poses, &st.active);
    let initial = cost;
    let n = st.h.n;
    let mut lambda = cfg.damping;
    let mut iterations = 0;
    let mut converged = n == 0 || cost == 0.0;
    let mut g = vec![0.0; n];
    let mut shift = vec![0.0; n];
    let mut candidate = poses.to_vec();

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        assemble(&mut st, edges, poses, cfg, &mut g);
        let (mut accepted, mut factored) = (false, false);
        while lambda < 1e12 {
            for i in 0..poses.len() {
                if let Some(b) = st.block[i] {
                    let d = &st.diag_slots[i];
                    // rotation-invariant damping on the translation block
                    let t = 0.5 * (st.h.values[d[0]] + st.h.values[d[4]]);
                    shift[3 * b] = lambda * t.max(1e-12);
                    shift[3 * b + 1] = lambda * t.max(1e-12);
                    shift[3 * b + 2] = lambda * st.h.values[d[8]].max(1e-12);
                }
            }
            let Some(factor) = cholesky(&st.h, &st.sym, Some(&shift)) else {
                lambda *= 10.0;
                continue;
            };
            factored = true;
            let mut delta: Vec<f64> = g.iter().map(|v| -v).collect();
            factor.solve_in_place(&mut delta);
            candidate.copy_from_slice(poses);
            for (i, p) in candidate.iter_mut().enumerate() {
                if let Some(b) = st.block[i] {
                    *p = Pose2D::new(p.x + delta[3 * b], p.y + delta[3 * b + 1], p.theta + delta[3 * b + 2]);
                }
            }
            let new_cost = cost_of(&candidate, &st.active);
            if new_cost <= cost {
                poses.copy_from_slice(&candidate);
                let rel = if cost > 0.0 { (cost - new_cost) / cost } else { 0.0 };
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                converged = rel < cfg.chi2_rel_tol || cost == 0.0;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            if !factored {
                return Err(Error::Singular);
            }
            // No damped step reduces the cost: a minimum to working precision.
            converged = true;
        }
    }

    let scales = edges
        .iter()
        .map(|e| {
            if cfg.is_robust(e) {
                dcs_scale(weighted(e, &residual(e, &poses[e.from], &poses[e.to])), cfg.dcs_phi)
            } else {
                1.0
            }
        })
        .collect();
    Ok(SolveReport {
        initial_chi2: initial,
        final_chi2: cost,
        iterations,
        scales,
        converged,
    })
}

fn assemble(st: &mut Structure, edges: &[PGEdge], poses: &[Pose2D], cfg: &SolverConfig, g: &mut [f64]) {
    st.h.clear();
    g.iter_mut().for_each(|v| *v = 0.0);
    for (a, &k) in st.active.iter().enumerate() {
        let e = &edges[k];
        let (xi, xj) = (&poses[e.from], &poses[e.to]);
        let r = residual(e, xi, xj);
        let mut w = e.information;
        if cfg.is_robust(e) {
            let s = dcs_scale(weighted(e, &r), cfg.dcs_phi);
            w *= s * s;
        }
        let (ji, jj) = jacobians(e, xi, xj);
        let wr = w * r;
        let (wji, wjj) = (w * ji, w * jj);
        if let Some(b) = st.block[e.from] {
            let hii = ji.transpose() * wji;
            add_block(&mut st.h.values, &st.diag_slots[e.from], &hii, true);
            let gi = ji.transpose() * wr;
            for u in 0..3 {
                g[3 * b + u] += gi[u];
            }
        }
        if let Some(b) = st.block[e.to] {
            let hjj = jj.transpose() * wjj;
            add_block(&mut st.h.values, &st.diag_slots[e.to], &hjj, true);
            let gj = jj.transpose() * wr;
            for u in 0..3 {
                g[3 * b + u] += gj[u];
            }
        }
        if let Some(slots) = &st.cross_slots[a] {
            let hij = ji.transpose() * wjj;
            add_block(&mut st.h.values, slots, &hij, false);
        }
    }
}

/// Adds a 3x3 block; for diagonal blocks only the upper triangle is stored.
fn add_block(values: &mut [f64], slots: &[usize; 9], m: &Matrix3<f64>, diagonal: bool) {
    for u in 0..3 {
        for v in 0..3 {
            if !diagonal || u <= v {
                values[slots[3 * u + v]] += m[(u, v)];
            }
        }
    }
}

#[cfg(test)]
mod tests;
