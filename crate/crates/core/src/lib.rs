//! Pose-graph recovery from drifted odometry using topological labels and
//! Manhattan-world structure.

pub mod constraints;
pub mod error;
pub mod experiment;
pub mod manhattan;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod plot;
pub mod pose_graph;
pub mod similarity;
pub mod simulator;
pub mod topology;

pub use error::{Error, Result};
pub use pose_graph::{ConstraintKind, PGEdge, Pose2D, PoseGraph, TopoLabel};
