//! Manhattan graph: one axis-aligned meta-node per corridor or rackspace
//! region, chained through binned turns.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use crate::error::{Error, Result};
use crate::pose_graph::{ConstraintKind, Pose2D, PoseGraph, TopoLabel};
use crate::topology::TopologicalGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct MetaNode {
    pub id: usize,
    pub label: TopoLabel,
    pub pg_start: usize,
    /// Inclusive.
    pub pg_end: usize,
    pub length: f64,
    /// Multiple of π/2 in (-π, π].
    pub heading: f64,
    pub x_start: f64,
    pub y_start: f64,
    pub x_end: f64,
    pub y_end: f64,
    /// Arc length of each node from `pg_start` (same length as the collection).
    pub offsets: Vec<f64>,
}

impl MetaNode {
    pub fn collection(&self) -> std::ops::RangeInclusive<usize> {
        self.pg_start..=self.pg_end
    }

    pub fn len(&self) -> usize {
        self.pg_end - self.pg_start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn direction(&self) -> [f64; 2] {
        direction(quadrant_of(self.heading))
    }

    /// Rectified pose of a collection node.
    pub fn rectified_pose(&self, node: usize) -> Pose2D {
        let s = self.offsets[node - self.pg_start];
        let d = self.direction();
        Pose2D::new(self.x_start + s * d[0], self.y_start + s * d[1], self.heading)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManhattanGraph {
    pub meta_nodes: Vec<MetaNode>,
    /// `turns[k]` is the binned angle between meta-nodes k and k + 1.
    pub turns: Vec<f64>,
}

impl ManhattanGraph {
    pub fn len(&self) -> usize {
        self.meta_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta_nodes.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.turns.iter().enumerate().map(|(k, &t)| (k, k + 1, t))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "meta_id,label,pg_start,pg_end,length,heading,x_start,y_start,x_end,y_end")?;
        for m in &self.meta_nodes {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                m.id, m.label, m.pg_start, m.pg_end, m.length, m.heading, m.x_start, m.y_start, m.x_end, m.y_end
            )?;
        }
        Ok(())
    }
}

/// Nearest of {-π/2, 0, π/2, π}; odd multiples of π/4 round away from zero
/// and anything nearest -π maps to π.
pub fn bin_angle(phi: f64) -> f64 {
    from_quadrant(quadrant_of(phi))
}

/// Number of quarter turns in `bin_angle(phi)`, in {-1, 0, 1, 2}.
pub fn quadrant_of(phi: f64) -> i32 {
    let q = (phi / FRAC_PI_2).round() as i32;
    match q.rem_euclid(4) {
        3 => -1,
        r => r,
    }
}

pub fn from_quadrant(q: i32) -> f64 {
    match q.rem_euclid(4) {
        0 => 0.0,
        1 => FRAC_PI_2,
        2 => PI,
        _ => -FRAC_PI_2,
    }
}

/// Exact unit vector for a quadrant.
pub fn direction(q: i32) -> [f64; 2] {
    match q.rem_euclid(4) {
        0 => [1.0, 0.0],
        1 => [0.0, 1.0],
        2 => [-1.0, 0.0],
        _ => [0.0, -1.0],
    }
}

fn rotate_quadrant(q: i32, v: [f64; 2]) -> [f64; 2] {
    let [c, s] = direction(q);
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Sum of odometry translation norms between consecutive nodes.
pub fn segment_length(pg: &PoseGraph, pg_start: usize, pg_end: usize) -> Result<f64> {
    if pg_start > pg_end || pg_end >= pg.len() {
        return Err(Error::InvalidInput(format!("bad node range {pg_start}..={pg_end}")));
    }
    let mut step = vec![None; pg_end - pg_start];
    for e in pg.edges_of_kind(ConstraintKind::Odometry) {
        if e.from >= pg_start && e.to <= pg_end {
            step[e.from - pg_start] = Some(e.measurement.translation_norm());
        }
    }
    step.iter()
        .enumerate()
        .map(|(k, s)| {
            s.ok_or_else(|| {
                Error::InvalidGraph(format!("no odometry edge {}->{}", pg_start + k, pg_start + k + 1))
            })
        })
        .sum()
}

/// Arc length of every node in `pg_start..=pg_end` measured along the
/// current estimate.
fn estimate_offsets(pg: &PoseGraph, pg_start: usize, pg_end: usize) -> Vec<f64> {
    let mut s = 0.0;
    let mut out = Vec::with_capacity(pg_end - pg_start + 1);
    out.push(0.0);
    for i in pg_start..pg_end {
        s += pg.pose(i).between(pg.pose(i + 1)).translation_norm();
        out.push(s);
    }
    out
}

/// Builds the Manhattan graph from the graph's current estimate. On a fresh
/// dead-reckoned graph the estimate and the odometry chain coincide; after
/// optimization, lengths and turns follow the corrected poses.
pub fn build_manhattan(pg: &PoseGraph, tg: &TopologicalGraph) -> Result<ManhattanGraph> {
    if tg.regions.is_empty() {
        return Err(Error::InvalidInput("topological graph is empty".into()));
    }
    if tg.regions.last().map(|r| r.pg_end) != Some(pg.len() - 1) {
        return Err(Error::InvalidInput("topological graph does not cover the pose graph".into()));
    }
    let mut meta_nodes: Vec<MetaNode> = Vec::new();
    let mut turns = Vec::new();
    let mut quadrant = 0i32;
    for r in tg.regions.iter().filter(|r| r.label != TopoLabel::Intersection) {
        let offsets = estimate_offsets(pg, r.pg_start, r.pg_end);
        let length = *offsets.last().expect("non-empty");
        let start = match meta_nodes.last() {
            None => [0.0, 0.0],
            Some(prev) => {
                let exit = pg.pose(prev.pg_end);
                let link = exit.between(pg.pose(r.pg_start));
                let turn = quadrant_of(link.theta);
                turns.push(from_quadrant(turn));
                // Connector expressed in the previous segment's frame, then
                // placed with that segment's binned heading.
                let d = rotate_quadrant(quadrant, [link.x, link.y]);
                quadrant = (quadrant + turn).rem_euclid(4);
                [prev.x_end + d[0], prev.y_end + d[1]]
            }
        };
        let dir = direction(quadrant);
        meta_nodes.push(MetaNode {
            id: meta_nodes.len(),
            label: r.label,
            pg_start: r.pg_start,
            pg_end: r.pg_end,
            length,
            heading: from_quadrant(quadrant),
            x_start: start[0],
            y_start: start[1],
            x_end: start[0] + length * dir[0],
            y_end: start[1] + length * dir[1],
            offsets,
        });
    }
    Ok(ManhattanGraph { meta_nodes, turns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_graph::PGEdge;
    use crate::simulator::*;
    use crate::topology::{group, TopoRegion};
    use proptest::prelude::*;

    fn chain(steps: &[Pose2D], labels: &[TopoLabel]) -> PoseGraph {
        let mut g = PoseGraph::new();
        let mut p = Pose2D::IDENTITY;
        g.add_node(p, Some(labels[0]));
        for (k, s) in steps.iter().enumerate() {
            p = p.compose(s);
            g.add_node(p, Some(labels[k + 1]));
            g.add_edge(PGEdge::odometry(k, *s)).unwrap();
        }
        g
    }

    #[test]
    fn bin_examples() {
        assert_eq!(bin_angle(1.47), FRAC_PI_2);
        assert_eq!(bin_angle(-3.05), PI);
        assert_eq!(bin_angle(std::f64::consts::FRAC_PI_4), FRAC_PI_2);
        assert_eq!(bin_angle(-std::f64::consts::FRAC_PI_4), -FRAC_PI_2);
        assert_eq!(bin_angle(3.0 * std::f64::consts::FRAC_PI_4), PI);
        assert_eq!(bin_angle(-3.0 * std::f64::consts::FRAC_PI_4), PI);
        assert_eq!(bin_angle(PI), PI);
        assert_eq!(bin_angle(0.2), 0.0);
    }

    #[test]
    fn segment_lengths() {
        let steps = vec![Pose2D::new(1.0, 0.0, 0.0); 10];
        let g = chain(&steps, &[TopoLabel::Rackspace; 11]);
        assert_eq!(segment_length(&g, 0, 10).unwrap(), 10.0);
        assert_eq!(segment_length(&g, 4, 4).unwrap(), 0.0);
        let mut broken = g.clone();
        broken.retain_edges(|e| e.from != 3);
        assert!(segment_length(&broken, 0, 10).is_err());
    }

    #[test]
    fn noiseless_aisle_length() {
        let layout = generate_layout(&LayoutParams::default()).unwrap();
        let traj = generate_trajectory(&layout, &[0], DEFAULT_STEP).unwrap();
        let run = corrupt(&layout, &traj, &NoiseModel::noiseless(0), &ScanConfig { beams: 4, max_range: 1.0 }).unwrap();
        let idx: Vec<usize> = (0..traj.len()).filter(|&i| traj[i].label == TopoLabel::Rackspace).collect();
        let (a, b) = (idx[0], *idx.last().unwrap());
        let true_len = traj[b].pose.between(&traj[a].pose).translation_norm();
        let len = segment_length(&run.graph, a, b).unwrap();
        assert!((len - true_len).abs() < 1e-9);
        // sampled poses on the region boundaries are labeled intersection
        assert!((len - 12.0).abs() <= 2.0 * DEFAULT_STEP, "{len}");
    }

    #[test]
    fn straight_aisle() {
        let steps = vec![Pose2D::new(0.25, 0.0, 0.0); 40];
        let g = chain(&steps, &[TopoLabel::Rackspace; 41]);
        let tg = group(&g.labels().unwrap(), 3).unwrap();
        let mg = build_manhattan(&g, &tg).unwrap();
        assert_eq!(mg.len(), 1);
        let m = &mg.meta_nodes[0];
        assert_eq!((m.x_start, m.y_start), (0.0, 0.0));
        assert!((m.x_end - 10.0).abs() < 1e-12 && m.y_end == 0.0);
    }

    /// Aisle, left turn, 4 m corridor, left turn, aisle. Turn steps
    /// (pure rotations) sit inside the intersections.
    fn u_path(turn_error: f64) -> PoseGraph {
        use TopoLabel::*;
        let fwd = Pose2D::new(0.25, 0.0, 0.0);
        let mut steps = Vec::new();
        let mut labels = vec![Rackspace];
        let mut push = |step: Pose2D, n: usize, label: TopoLabel| {
            for _ in 0..n {
                steps.push(step);
                labels.push(label);
            }
        };
        push(fwd, 40, Rackspace);
        push(fwd, 4, Intersection);
        push(Pose2D::new(0.0, 0.0, FRAC_PI_2 + turn_error), 1, Intersection);
        push(fwd, 4, Intersection);
        push(fwd, 16, Corridor);
        push(fwd, 4, Intersection);
        push(Pose2D::new(0.0, 0.0, FRAC_PI_2 - turn_error), 1, Intersection);
        push(fwd, 4, Intersection);
        push(fwd, 40, Rackspace);
        chain(&steps, &labels)
    }

    #[test]
    fn u_turn_headings() {
        let g = u_path(0.0);
        let tg = group(&g.labels().unwrap(), 3).unwrap();
        let mg = build_manhattan(&g, &tg).unwrap();
        let headings: Vec<f64> = mg.meta_nodes.iter().map(|m| m.heading).collect();
        assert_eq!(headings, vec![0.0, FRAC_PI_2, PI]);
        assert_eq!(mg.turns, vec![FRAC_PI_2, FRAC_PI_2]);
        for e in [0.14, -0.14] {
            let drifted = build_manhattan(&u_path(e), &tg).unwrap();
            let h: Vec<f64> = drifted.meta_nodes.iter().map(|m| m.heading).collect();
            assert_eq!(h, headings);
            assert_eq!(drifted.turns, mg.turns);
        }
    }

    #[test]
    fn drifted_simulator_graph_matches_noiseless_topology() {
        let layout = generate_layout(&LayoutParams::default()).unwrap();
        let traj = generate_trajectory(&layout, &default_plan(&layout), DEFAULT_STEP).unwrap();
        let scan = ScanConfig { beams: 4, max_range: 1.0 };
        let clean = corrupt(&layout, &traj, &NoiseModel::noiseless(0), &scan).unwrap();
        let noisy = NoiseModel {
            odom_sigma: (0.01, 0.005, 0.002),
            drift_bias: (0.0, 0.0, 0.0),
            label_error_rate: 0.0,
            ..NoiseModel::default()
        };
        let drifted = corrupt(&layout, &traj, &noisy, &scan).unwrap();
        let tg = group(&clean.graph.labels().unwrap(), 3).unwrap();
        let a = build_manhattan(&clean.graph, &tg).unwrap();
        let b = build_manhattan(&drifted.graph, &tg).unwrap();
        assert_eq!(a.turns, b.turns);
        let ha: Vec<f64> = a.meta_nodes.iter().map(|m| m.heading).collect();
        let hb: Vec<f64> = b.meta_nodes.iter().map(|m| m.heading).collect();
        assert_eq!(ha, hb);
    }

    #[test]
    fn empty_topology_is_an_error() {
        let g = chain(&[Pose2D::new(1.0, 0.0, 0.0)], &[TopoLabel::Corridor; 2]);
        let tg = TopologicalGraph { regions: vec![] };
        assert!(build_manhattan(&g, &tg).is_err());
        let partial = TopologicalGraph {
            regions: vec![TopoRegion { label: TopoLabel::Corridor, pg_start: 0, pg_end: 0 }],
        };
        assert!(build_manhattan(&g, &partial).is_err());
    }

    fn random_graph(seed: u64) -> (PoseGraph, TopologicalGraph) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut steps = Vec::new();
        let mut labels = vec![TopoLabel::Rackspace];
        for _ in 0..rng.random_range(1..8) {
            let label = TopoLabel::ALL[rng.random_range(0..3)];
            for _ in 0..rng.random_range(3..20) {
                let turn = if label == TopoLabel::Intersection { rng.random_range(-0.6..0.6) } else { rng.random_range(-0.02..0.02) };
                steps.push(Pose2D::new(0.25, rng.random_range(-0.01..0.01), turn));
                labels.push(label);
            }
        }
        let g = chain(&steps, &labels);
        let tg = group(&labels, 3).unwrap();
        (g, tg)
    }

    proptest! {
        #[test]
        fn bin_idempotent(phi in -PI..=PI) {
            let b = bin_angle(phi);
            prop_assert_eq!(bin_angle(b), b);
            prop_assert!([-FRAC_PI_2, 0.0, FRAC_PI_2, PI].contains(&b));
            prop_assert!((crate::pose_graph::normalize_angle(phi - b)).abs() <= std::f64::consts::FRAC_PI_4 + 1e-12);
        }

        #[test]
        fn meta_nodes_axis_aligned(seed in 0u64..500) {
            let (g, tg) = random_graph(seed);
            let mg = build_manhattan(&g, &tg).unwrap();
            let mut last_end = 0;
            for (k, m) in mg.meta_nodes.iter().enumerate() {
                prop_assert_eq!(m.id, k);
                prop_assert!(m.pg_start >= last_end);
                last_end = m.pg_end;
                prop_assert!(m.x_start == m.x_end || m.y_start == m.y_end);
                let d = m.direction();
                prop_assert_eq!(m.x_end, m.x_start + m.length * d[0]);
                prop_assert_eq!(m.y_end, m.y_start + m.length * d[1]);
                prop_assert!([-FRAC_PI_2, 0.0, FRAC_PI_2, PI].contains(&m.heading));
                prop_assert!(m.label != TopoLabel::Intersection);
            }
            for t in &mg.turns {
                prop_assert!([-FRAC_PI_2, 0.0, FRAC_PI_2, PI].contains(t));
            }
            // adjacent regions with no intersection in between chain exactly
            for w in mg.meta_nodes.windows(2) {
                if w[1].pg_start == w[0].pg_end + 1 {
                    let link = g.pose(w[0].pg_end).between(g.pose(w[1].pg_start));
                    let d = rotate_quadrant(quadrant_of(w[0].heading), [link.x, link.y]);
                    prop_assert!((w[1].x_start - w[0].x_end - d[0]).abs() < 1e-12);
                    prop_assert!((w[1].y_start - w[0].y_end - d[1]).abs() < 1e-12);
                }
            }
        }
    }
}
