//! SE(2) geometry and the pose-graph data model.
//!
//! A [`PoseGraph`] is a dense list of nodes (estimate + optional topological
//! label) plus typed relative-pose constraints. Node ids are the indices
//! `0..n`, and node 0 is the gauge node held fixed by the optimizer.

mod io;

pub use io::{read_graph, write_graph, GraphFormat};

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;

use crate::error::{Error, Result};

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// A rigid 2D transform / robot pose. `theta` is always kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub const IDENTITY: Pose2D = Pose2D {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    /// `self ⊕ other`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            -c * self.x - s * self.y,
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Relative pose `self⁻¹ ⊕ other`, i.e. `other` expressed in this frame.
    pub fn between(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose2D::new(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)
    }

    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Free-function forms of the group operations.
pub fn compose(a: &Pose2D, b: &Pose2D) -> Pose2D {
    a.compose(b)
}

pub fn between(a: &Pose2D, b: &Pose2D) -> Pose2D {
    a.between(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TopoLabel {
    Rackspace,
    Corridor,
    Intersection,
}

impl TopoLabel {
    pub const ALL: [TopoLabel; 3] = [
        TopoLabel::Rackspace,
        TopoLabel::Corridor,
        TopoLabel::Intersection,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TopoLabel::Rackspace => "RACKSPACE",
            TopoLabel::Corridor => "CORRIDOR",
            TopoLabel::Intersection => "INTERSECTION",
        }
    }
}

impl fmt::Display for TopoLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopoLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RACKSPACE" => Ok(TopoLabel::Rackspace),
            "CORRIDOR" => Ok(TopoLabel::Corridor),
            "INTERSECTION" => Ok(TopoLabel::Intersection),
            other => Err(format!("unknown topological label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintKind {
    Odometry,
    LoopClosure,
    Manhattan,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 3] = [
        ConstraintKind::Odometry,
        ConstraintKind::LoopClosure,
        ConstraintKind::Manhattan,
    ];

    /// Default information matrix (units 1/m², 1/m², 1/rad²).
    ///
    /// Manhattan edges are confident about orientation (binned angles) and
    /// weak about translation.
    pub fn default_information(&self) -> Matrix3<f64> {
        let diag = match self {
            ConstraintKind::Odometry => [50.0, 50.0, 100.0],
            ConstraintKind::LoopClosure => [20.0, 20.0, 50.0],
            ConstraintKind::Manhattan => [5.0, 5.0, 200.0],
        };
        Matrix3::from_diagonal(&diag.into())
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ConstraintKind::Odometry => "ODOM",
            ConstraintKind::LoopClosure => "LOOP",
            ConstraintKind::Manhattan => "MANHATTAN",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "ODOM" => Some(ConstraintKind::Odometry),
            "LOOP" => Some(ConstraintKind::LoopClosure),
            "MANHATTAN" => Some(ConstraintKind::Manhattan),
            _ => None,
        }
    }
}

/// A relative-pose constraint `Z_ij` between two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PGEdge {
    pub from: usize,
    pub to: usize,
    pub measurement: Pose2D,
    pub information: Matrix3<f64>,
    pub kind: ConstraintKind,
    /// Whether a robust kernel may down-weight this edge.
    pub robust: bool,
}

impl PGEdge {
    /// Edge with the default information matrix of its kind. Loop and
    /// Manhattan edges are robust, odometry edges are not.
    pub fn new(from: usize, to: usize, measurement: Pose2D, kind: ConstraintKind) -> Self {
        PGEdge {
            from,
            to,
            measurement,
            information: kind.default_information(),
            kind,
            robust: kind != ConstraintKind::Odometry,
        }
    }

    pub fn odometry(from: usize, measurement: Pose2D) -> Self {
        PGEdge::new(from, from + 1, measurement, ConstraintKind::Odometry)
    }
}

/// Checks symmetry and positive definiteness of an information matrix.
pub fn is_valid_information(info: &Matrix3<f64>) -> bool {
    let scale = info.abs().max().max(1.0);
    let symmetric = (info - info.transpose()).abs().max() <= 1e-9 * scale;
    symmetric && info.iter().all(|v| v.is_finite()) && info.cholesky().is_some()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub pose: Pose2D,
    pub label: Option<TopoLabel>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseGraph {
    nodes: Vec<Node>,
    edges: Vec<PGEdge>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a node and returns its id.
    pub fn add_node(&mut self, pose: Pose2D, label: Option<TopoLabel>) -> usize {
        self.nodes.push(Node { pose, label });
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, edge: PGEdge) -> Result<()> {
        self.check_edge(&edge)?;
        self.edges.push(edge);
        Ok(())
    }

    pub fn check_edge(&self, edge: &PGEdge) -> Result<()> {
        let n = self.nodes.len();
        if edge.from >= n || edge.to >= n {
            return Err(Error::InvalidGraph(format!(
                "edge {}->{} references a missing node (graph has {n})",
                edge.from, edge.to
            )));
        }
        if edge.from == edge.to {
            return Err(Error::InvalidGraph(format!("self-loop on node {}", edge.from)));
        }
        if edge.kind == ConstraintKind::Odometry && edge.to != edge.from + 1 {
            return Err(Error::InvalidGraph(format!(
                "odometry edge {}->{} does not join consecutive nodes",
                edge.from, edge.to
            )));
        }
        if !is_valid_information(&edge.information) {
            return Err(Error::InvalidGraph(format!(
                "edge {}->{} has an information matrix that is not symmetric positive definite",
                edge.from, edge.to
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[PGEdge] {
        &self.edges
    }

    pub fn pose(&self, id: usize) -> &Pose2D {
        &self.nodes[id].pose
    }

    pub fn poses(&self) -> Vec<Pose2D> {
        self.nodes.iter().map(|n| n.pose).collect()
    }

    pub fn set_pose(&mut self, id: usize, pose: Pose2D) {
        self.nodes[id].pose = pose;
    }

    pub fn set_poses(&mut self, poses: &[Pose2D]) {
        assert_eq!(poses.len(), self.nodes.len(), "pose count mismatch");
        for (node, pose) in self.nodes.iter_mut().zip(poses) {
            node.pose = *pose;
        }
    }

    pub fn label(&self, id: usize) -> Option<TopoLabel> {
        self.nodes[id].label
    }

    /// Labels of every node, or `None` if any node is unlabeled.
    pub fn labels(&self) -> Option<Vec<TopoLabel>> {
        self.nodes.iter().map(|n| n.label).collect()
    }

    pub fn set_label(&mut self, id: usize, label: Option<TopoLabel>) {
        self.nodes[id].label = label;
    }

    pub fn edges_of_kind(&self, kind: ConstraintKind) -> impl Iterator<Item = &PGEdge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    /// `has[i]` is true when an odometry edge joins `i` and `i + 1`.
    pub fn odometry_links(&self) -> Vec<bool> {
        let mut has = vec![false; self.nodes.len().saturating_sub(1)];
        for e in self.edges_of_kind(ConstraintKind::Odometry) {
            has[e.from] = true;
        }
        has
    }

    /// Copy of this graph keeping only the odometry edges.
    pub fn odometry_only(&self) -> PoseGraph {
        PoseGraph {
            nodes: self.nodes.clone(),
            edges: self
                .edges_of_kind(ConstraintKind::Odometry)
                .cloned()
                .collect(),
        }
    }

    /// Removes every non-odometry edge.
    pub fn retain_edges(&mut self, keep: impl FnMut(&PGEdge) -> bool) {
        self.edges.retain(keep);
    }
}
