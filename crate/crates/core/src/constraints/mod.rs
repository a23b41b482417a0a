//! Converts same-instance proposals into loop-closure (ICP) and Manhattan
//! edges.

mod icp;

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

pub use icp::{icp, IcpConfig, IcpResult, MIN_POINTS};

use crate::error::Result;
use crate::manhattan::{ManhattanGraph, MetaNode};
use crate::pose_graph::{ConstraintKind, PGEdge, Pose2D};
use crate::similarity::ProposalPair;
use crate::simulator::Scan;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintConfig {
    /// Loop pairs sampled per proposal.
    pub k: usize,
    /// ICP residual filter (m²).
    pub rho: f64,
    /// Manhattan node pairs per proposal.
    pub neighborhood: usize,
    pub icp: IcpConfig,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            k: 5,
            rho: 0.05,
            neighborhood: 3,
            icp: IcpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopCandidate {
    pub pg_i: usize,
    pub pg_j: usize,
    pub measurement: Pose2D,
    pub residual: f64,
    pub converged: bool,
    /// Index of the proposal in the input list.
    pub source_proposal: usize,
}

/// Node nearest to arc length `s` along a meta-node.
fn node_at(m: &MetaNode, s: f64) -> usize {
    let k = m.offsets.partition_point(|&o| o < s);
    let k = match k {
        0 => 0,
        k if k >= m.offsets.len() => m.offsets.len() - 1,
        k if (m.offsets[k] - s) < (s - m.offsets[k - 1]) => k,
        k => k - 1,
    };
    m.pg_start + k
}

/// Node pairs at arc-length fractions `m/(k+1)`; for reversed proposals the
/// second region is measured from its far end. Returns `(pg_i, pg_j, guess)`
/// with `pg_i` in the first region.
pub fn sample_loop_pairs(proposal: &ProposalPair, mg: &ManhattanGraph, k: usize) -> Vec<(usize, usize, Pose2D)> {
    let a = &mg.meta_nodes[proposal.meta_i];
    let b = &mg.meta_nodes[proposal.meta_j];
    let k = k.min(a.len()).min(b.len());
    let guess = if proposal.reversed { Pose2D::new(0.0, 0.0, PI) } else { Pose2D::IDENTITY };
    (1..=k)
        .map(|m| {
            let f = m as f64 / (k + 1) as f64;
            let fb = if proposal.reversed { 1.0 - f } else { f };
            (node_at(a, f * a.length), node_at(b, fb * b.length), guess)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopConstraints {
    pub edges: Vec<PGEdge>,
    pub accepted: Vec<LoopCandidate>,
    pub rejected: Vec<LoopCandidate>,
}

impl LoopConstraints {
    /// `pg_i,pg_j,residual` lines for the rejected candidates.
    pub fn write_rejected_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "pg_i,pg_j,residual")?;
        for c in &self.rejected {
            writeln!(out, "{},{},{:.6}", c.pg_i, c.pg_j, c.residual)?;
        }
        Ok(())
    }
}

/// Runs ICP on sampled pairs of every proposal and keeps converged matches
/// with residual at most `rho`. Scans are indexed by node id.
pub fn build_loop_constraints(
    proposals: &[ProposalPair],
    mg: &ManhattanGraph,
    scans: &[Scan],
    cfg: &ConstraintConfig,
) -> LoopConstraints {
    let jobs: Vec<(usize, usize, usize, Pose2D)> = proposals
        .iter()
        .enumerate()
        .flat_map(|(p, prop)| {
            sample_loop_pairs(prop, mg, cfg.k).into_iter().map(move |(i, j, g)| (p, i, j, g))
        })
        .collect();
    let results: Vec<LoopCandidate> = jobs
        .par_iter()
        .map(|&(p, i, j, guess)| match icp(&scans[i], &scans[j], guess, &cfg.icp) {
            Ok(r) => LoopCandidate {
                pg_i: i,
                pg_j: j,
                measurement: r.transform,
                residual: r.residual,
                converged: r.converged,
                source_proposal: p,
            },
            Err(_) => LoopCandidate {
                pg_i: i,
                pg_j: j,
                measurement: guess,
                residual: f64::INFINITY,
                converged: false,
                source_proposal: p,
            },
        })
        .collect();
    let mut out = LoopConstraints::default();
    for c in results {
        if c.converged && c.residual <= cfg.rho && c.pg_i != c.pg_j {
            out.edges.push(PGEdge::new(c.pg_i, c.pg_j, c.measurement, ConstraintKind::LoopClosure));
            out.accepted.push(c);
        } else {
            out.rejected.push(c);
        }
    }
    out
}

/// Manhattan edges between `neighborhood` node pairs of each proposal. The
/// two meta-nodes are taken to be the same rectified segment: the second is
/// laid onto the first (start on start, or end on start when reversed), so
/// the measurement is the arc-length offset along the segment with zero
/// lateral offset and a relative heading of exactly 0 or π.
pub fn build_manhattan_constraints(
    proposals: &[ProposalPair],
    mg: &ManhattanGraph,
    neighborhood: usize,
) -> Vec<PGEdge> {
    let mut edges = Vec::new();
    if neighborhood == 0 {
        return edges;
    }
    for prop in proposals {
        let a = &mg.meta_nodes[prop.meta_i];
        let b = &mg.meta_nodes[prop.meta_j];
        for (i, j, _) in sample_loop_pairs(prop, mg, neighborhood) {
            if i == j {
                continue;
            }
            let sa = a.offsets[i - a.pg_start];
            let sb = b.offsets[j - b.pg_start];
            let (along, dtheta) = if prop.reversed { (b.length - sb - sa, PI) } else { (sb - sa, 0.0) };
            edges.push(PGEdge::new(i, j, Pose2D::new(along, 0.0, dtheta), ConstraintKind::Manhattan));
        }
    }
    edges
}

#[cfg(test)]
mod tests;
