//! Incremental solving: nodes stream in with their odometry, periodic local
//! solves keep the recent window consistent, and every batch of loop or
//! Manhattan constraints triggers a full relinearized solve.

use super::{check_connected, solve_subset, SolveReport, SolverConfig};
use crate::error::{Error, Result};
use crate::pose_graph::{ConstraintKind, PGEdge, Pose2D, PoseGraph, TopoLabel};

pub struct IncrementalSolver {
    graph: PoseGraph,
    cfg: SolverConfig,
    reports: Vec<SolveReport>,
    since_local: usize,
}

impl IncrementalSolver {
    pub fn new(first: Pose2D, label: Option<TopoLabel>, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let mut graph = PoseGraph::new();
        graph.add_node(first, label);
        Ok(IncrementalSolver { graph, cfg, reports: Vec::new(), since_local: 0 })
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    /// Appends the node reached by `odometry` (which must start at the
    /// current last node), initialized by dead reckoning.
    pub fn add_node(&mut self, odometry: PGEdge, label: Option<TopoLabel>) -> Result<()> {
        let expected = self.graph.len();
        if odometry.kind != ConstraintKind::Odometry {
            return Err(Error::InvalidInput("new nodes must arrive with an odometry edge".into()));
        }
        if odometry.from + 1 != expected || odometry.to != expected {
            return Err(Error::OutOfOrder { expected, got: odometry.to });
        }
        let pose = self.graph.pose(odometry.from).compose(&odometry.measurement);
        self.graph.add_node(pose, label);
        self.graph.add_edge(odometry)?;
        self.since_local += 1;
        if self.since_local >= self.cfg.incremental_batch_period {
            self.since_local = 0;
            self.local_solve()?;
        }
        Ok(())
    }

    fn local_solve(&mut self) -> Result<()> {
        let n = self.graph.len();
        let window = 3 * self.cfg.incremental_batch_period;
        let mut free = vec![false; n];
        for f in free.iter_mut().skip(n.saturating_sub(window).max(1)) {
            *f = true;
        }
        let mut poses = self.graph.poses();
        let report = solve_subset(&mut poses, self.graph.edges(), &free, &self.cfg)?;
        self.graph.set_poses(&poses);
        self.reports.push(report);
        Ok(())
    }

    pub fn full_solve(&mut self) -> Result<()> {
        check_connected(&self.graph)?;
        let mut free = vec![true; self.graph.len()];
        free[0] = false;
        let mut poses = self.graph.poses();
        let report = solve_subset(&mut poses, self.graph.edges(), &free, &self.cfg)?;
        self.graph.set_poses(&poses);
        self.reports.push(report);
        Ok(())
    }

    /// Adds a batch of non-odometry edges between existing nodes and
    /// re-solves the whole graph.
    pub fn add_constraints(&mut self, edges: Vec<PGEdge>) -> Result<()> {
        if edges.is_empty() {
            return Ok(());
        }
        for e in edges {
            if e.kind == ConstraintKind::Odometry {
                return Err(Error::InvalidInput("odometry edges arrive with their node".into()));
            }
            let latest = e.from.max(e.to);
            if latest >= self.graph.len() {
                return Err(Error::OutOfOrder { expected: self.graph.len(), got: latest });
            }
            self.graph.add_edge(e)?;
        }
        self.full_solve()
    }

    /// Final full solve; returns the graph and every solve report in order.
    pub fn finish(mut self) -> Result<(PoseGraph, Vec<SolveReport>)> {
        self.full_solve()?;
        Ok((self.graph, self.reports))
    }
}

/// Default arrival time of a constraint: once both endpoints exist.
pub fn latest_endpoint(edge: &PGEdge) -> usize {
    edge.from.max(edge.to)
}

/// Replays a complete graph through [`IncrementalSolver`]. Node estimates of
/// `pg` other than node 0 are ignored (dead reckoning re-initializes them).
/// Non-odometry edges are grouped by `arrival(edge)` (a node id no earlier
/// than both endpoints) and inserted right after that node.
pub fn solve_incremental(
    pg: &PoseGraph,
    arrival: impl Fn(&PGEdge) -> usize,
    cfg: &SolverConfig,
) -> Result<(PoseGraph, Vec<SolveReport>)> {
    let n = pg.len();
    if n == 0 {
        return Err(Error::InvalidGraph("graph has no nodes".into()));
    }
    let mut odometry: Vec<Option<&PGEdge>> = vec![None; n];
    let mut batches: Vec<Vec<PGEdge>> = vec![Vec::new(); n];
    for e in pg.edges() {
        if e.kind == ConstraintKind::Odometry {
            odometry[e.to] = Some(e);
        } else {
            let t = arrival(e).max(latest_endpoint(e)).min(n - 1);
            batches[t].push(e.clone());
        }
    }
    let mut solver = IncrementalSolver::new(*pg.pose(0), pg.label(0), cfg.clone())?;
    for id in 0..n {
        if id > 0 {
            let edge = odometry[id].ok_or_else(|| {
                Error::InvalidGraph(format!("node {id} has no incoming odometry edge"))
            })?;
            solver.add_node(edge.clone(), pg.label(id))?;
        }
        let batch = std::mem::take(&mut batches[id]);
        solver.add_constraints(batch)?;
    }
    // Report the input's edge order rather than arrival order.
    let (solved, reports) = solver.finish()?;
    let mut out = pg.clone();
    out.set_poses(&solved.poses());
    Ok((out, reports))
}
