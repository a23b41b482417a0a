//! Same-instance proposals between meta-nodes of a Manhattan graph.

mod data;
mod mlp;

pub use data::{synthesize_training_pairs, SynthSpec};
pub use mlp::{contrastive_loss, train, Layer, SiameseModel, TrainConfig, TrainingPair, DEFAULT_DIMS};

use crate::manhattan::{ManhattanGraph, MetaNode};
use crate::pose_graph::TopoLabel;

/// Rectified endpoints `(x_start, y_start, x_end, y_end)` times `scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFeature {
    pub coords: [f64; 4],
    pub label: TopoLabel,
}

impl NodeFeature {
    pub fn from_meta(m: &MetaNode, scale: f64) -> Self {
        NodeFeature {
            coords: [m.x_start, m.y_start, m.x_end, m.y_end].map(|v| v * scale),
            label: m.label,
        }
    }

    /// The same segment traversed the other way.
    pub fn swapped(&self) -> Self {
        let [a, b, c, d] = self.coords;
        NodeFeature { coords: [c, d, a, b], label: self.label }
    }
}

/// Scale that maps a warehouse of the given extent to roughly unit range.
pub fn feature_scale(width: f64, height: f64) -> f64 {
    1.0 / width.max(height)
}

/// Anything that maps features to a metric space with two thresholds.
pub trait PairScorer: Sync {
    fn represent(&self, f: &NodeFeature) -> Vec<f64>;
    fn thresholds(&self) -> (f64, f64);
}

impl PairScorer for SiameseModel {
    fn represent(&self, f: &NodeFeature) -> Vec<f64> {
        self.embed(f)
    }

    fn thresholds(&self) -> (f64, f64) {
        (self.tau_high, self.tau_low)
    }
}

/// Raw endpoint distance in feature units; a nearest-neighbour style
/// reference for the learned model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointBaseline {
    pub tau_high: f64,
    pub tau_low: f64,
}

impl Default for EndpointBaseline {
    fn default() -> Self {
        // 1.5 m and 2.5 m of endpoint displacement at the default scale
        EndpointBaseline { tau_high: 0.03, tau_low: 0.05 }
    }
}

impl PairScorer for EndpointBaseline {
    fn represent(&self, f: &NodeFeature) -> Vec<f64> {
        f.coords.to_vec()
    }

    fn thresholds(&self) -> (f64, f64) {
        (self.tau_high, self.tau_low)
    }
}

/// Distance under the better of the two traversal orientations.
pub fn pair_distance(scorer: &dyn PairScorer, a: &NodeFeature, b: &NodeFeature) -> f64 {
    let ra = scorer.represent(a);
    mlp::euclid(&ra, &scorer.represent(b)).min(mlp::euclid(&ra, &scorer.represent(&b.swapped())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    HighConfidence,
    LowConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalPair {
    pub meta_i: usize,
    pub meta_j: usize,
    pub distance: f64,
    pub band: Band,
    /// The second meta-node runs opposite to the first.
    pub reversed: bool,
}

/// Scores every same-label meta-node pair and keeps those within
/// `tau_low`. The reversal flag comes from the rectified headings.
pub fn propose(scorer: &dyn PairScorer, mg: &ManhattanGraph, scale: f64) -> Vec<ProposalPair> {
    let (tau_high, tau_low) = scorer.thresholds();
    let reps: Vec<(Vec<f64>, Vec<f64>)> = mg
        .meta_nodes
        .iter()
        .map(|m| {
            let f = NodeFeature::from_meta(m, scale);
            (scorer.represent(&f), scorer.represent(&f.swapped()))
        })
        .collect();
    let mut out = Vec::new();
    for (i, a) in mg.meta_nodes.iter().enumerate() {
        for (j, b) in mg.meta_nodes.iter().enumerate().skip(i + 1) {
            if a.label != b.label {
                continue;
            }
            let d = mlp::euclid(&reps[i].0, &reps[j].0).min(mlp::euclid(&reps[i].0, &reps[j].1));
            if d > tau_low {
                continue;
            }
            out.push(ProposalPair {
                meta_i: i,
                meta_j: j,
                distance: d,
                band: if d <= tau_high { Band::HighConfidence } else { Band::LowConfidence },
                reversed: (a.heading - b.heading).cos() < 0.0,
            });
        }
    }
    out
}

/// Held-out accuracy: a pair is called "same" when its two-orientation
/// distance is at most `tau_high`.
pub fn pair_accuracy(scorer: &dyn PairScorer, pairs: &[TrainingPair]) -> f64 {
    let (tau_high, _) = scorer.thresholds();
    let correct = pairs
        .iter()
        .filter(|p| (pair_distance(scorer, &p.a, &p.b) <= tau_high) == p.same)
        .count();
    correct as f64 / pairs.len().max(1) as f64
}

/// Trains the default-sized model on freshly synthesized pairs.
pub fn train_default_model(
    spec: &SynthSpec,
    n_pairs: usize,
    train_cfg: &TrainConfig,
) -> crate::Result<(SiameseModel, Vec<f64>)> {
    let pairs = synthesize_training_pairs(spec, n_pairs, train_cfg.seed)?;
    let mut model = SiameseModel::new(&DEFAULT_DIMS, 1.0, train_cfg.seed);
    let curve = train(&mut model, &pairs, train_cfg)?;
    Ok((model, curve))
}
