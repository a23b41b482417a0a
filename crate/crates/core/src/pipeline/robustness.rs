//! Loop-closure outlier injection.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{topological_graph, PipelineConfig, Scenario};
use crate::constraints::{build_loop_constraints, build_manhattan_constraints};
use crate::error::{Error, Result};
use crate::manhattan::{build_manhattan, ManhattanGraph};
use crate::metrics::ate;
use crate::optimizer::{solve_batch, SolverConfig};
use crate::pose_graph::{ConstraintKind, PGEdge, Pose2D, PoseGraph};
use crate::similarity::{Band, ProposalPair};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessRow {
    pub seed: u64,
    pub fraction: f64,
    pub true_loops: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub ate_dcs: f64,
    pub ate_nonrobust: f64,
}

const STREAM_OUTLIERS: u64 = 4;

/// A loop edge counts as true when it agrees with the true relative pose
/// within these bounds (m, rad).
const TRUE_LOOP_TRANSLATION: f64 = 0.3;
const TRUE_LOOP_ROTATION: f64 = 0.1;

/// Same-label meta-node pairs, split by whether their majority true
/// regions agree.
fn labeled_pairs(scenario: &Scenario, mg: &ManhattanGraph) -> (Vec<ProposalPair>, Vec<(usize, usize)>) {
    let regions: Vec<usize> = mg.meta_nodes.iter().map(|m| scenario.majority_region(m.collection())).collect();
    let mut same = Vec::new();
    let mut different = Vec::new();
    for (i, a) in mg.meta_nodes.iter().enumerate() {
        for (j, b) in mg.meta_nodes.iter().enumerate().skip(i + 1) {
            if a.label != b.label {
                continue;
            }
            if regions[i] == regions[j] {
                same.push(ProposalPair {
                    meta_i: i,
                    meta_j: j,
                    distance: 0.0,
                    band: Band::HighConfidence,
                    reversed: (a.heading - b.heading).cos() < 0.0,
                });
            } else {
                different.push((i, j));
            }
        }
    }
    (same, different)
}

fn agrees_with_truth(e: &PGEdge, truth: &[Pose2D]) -> bool {
    let err = e.measurement.between(&truth[e.from].between(&truth[e.to]));
    err.translation_norm() <= TRUE_LOOP_TRANSLATION && err.theta.abs() <= TRUE_LOOP_ROTATION
}

/// Edges a perfect proposer would produce on the dead-reckoned graph: the
/// ICP loop edges of every same-region pair that also agree with ground
/// truth, and the Manhattan edges of those pairs.
pub fn true_loop_edges(scenario: &Scenario, cfg: &PipelineConfig) -> Result<(Vec<PGEdge>, Vec<PGEdge>)> {
    let mg = build_manhattan(&scenario.graph, &topological_graph(&scenario.graph, cfg)?)?;
    let (props, _) = labeled_pairs(scenario, &mg);
    let truth = scenario.truth_poses();
    let loops = build_loop_constraints(&props, &mg, &scenario.scans, &cfg.constraints)
        .edges
        .into_iter()
        .filter(|e| agrees_with_truth(e, &truth))
        .collect();
    let manhattan = build_manhattan_constraints(&props, &mg, cfg.constraints.neighborhood);
    Ok((loops, manhattan))
}

/// `count` edges joining same-label meta-nodes of different true regions,
/// each claiming the two poses coincide (up to a half turn).
fn false_loop_edges(mg: &ManhattanGraph, pairs: &[(usize, usize)], count: usize, rng: &mut ChaCha8Rng) -> Vec<PGEdge> {
    if pairs.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let (i, j) = pairs[rng.random_range(0..pairs.len())];
            let (a, b) = (&mg.meta_nodes[i], &mg.meta_nodes[j]);
            let u = rng.random_range(a.collection());
            let v = rng.random_range(b.collection());
            let turn = if (a.heading - b.heading).cos() < 0.0 { std::f64::consts::PI } else { 0.0 };
            PGEdge::new(u, v, Pose2D::new(0.0, 0.0, turn), ConstraintKind::LoopClosure)
        })
        .collect()
}

/// For each fraction `f`, `round(f · n)` of the `n` true loop edges are
/// removed and half of them (rounded up) come back as false positives. The
/// sets are nested across fractions. Every variant starts from the
/// DCS solution of odometry plus the true Manhattan edges and is solved over
/// odometry plus loop edges, with and without DCS.
pub fn robustness_sweep(scenario: &Scenario, fractions: &[f64], cfg: &PipelineConfig) -> Result<Vec<RobustnessRow>> {
    if let Some(f) = fractions.iter().find(|f| !(0.0..=0.9).contains(*f)) {
        return Err(Error::InvalidInput(format!("outlier fraction {f} is outside [0, 0.9]")));
    }
    let truth = scenario.truth_poses();
    let mg = build_manhattan(&scenario.graph, &topological_graph(&scenario.graph, cfg)?)?;
    let (_, wrong_pairs) = labeled_pairs(scenario, &mg);
    let (loops, manhattan) = true_loop_edges(scenario, cfg)?;
    let n = loops.len();

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(STREAM_OUTLIERS);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let max_fp = fractions.iter().map(|f| (f * n as f64).round() as usize).max().unwrap_or(0).div_ceil(2);
    let fakes = false_loop_edges(&mg, &wrong_pairs, max_fp, &mut rng);

    let robust = cfg.solver.clone();
    let plain = SolverConfig { robust_kinds: Vec::new(), ..cfg.solver.clone() };
    let mut seeded = scenario.graph.odometry_only();
    for e in &manhattan {
        seeded.add_edge(e.clone())?;
    }
    let init = solve_batch(&seeded, &robust)?.0.poses();
    let mut cache: HashMap<usize, (f64, f64)> = HashMap::new();
    let mut rows = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let replaced = (f * n as f64).round() as usize;
        let fp = replaced.div_ceil(2).min(fakes.len());
        let (ate_dcs, ate_nonrobust) = match cache.get(&replaced) {
            Some(v) => *v,
            None => {
                let mut g: PoseGraph = scenario.graph.odometry_only();
                g.set_poses(&init);
                for e in order[replaced..].iter().map(|&k| &loops[k]).chain(&fakes[..fp]) {
                    g.add_edge(e.clone())?;
                }
                let (a, _) = solve_batch(&g, &robust)?;
                let (b, _) = solve_batch(&g, &plain)?;
                let v = (ate(&a.poses(), &truth)?.rmse, ate(&b.poses(), &truth)?.rmse);
                cache.insert(replaced, v);
                v
            }
        };
        rows.push(RobustnessRow {
            seed: scenario.seed,
            fraction: f,
            true_loops: n - replaced,
            false_positives: fp,
            false_negatives: replaced - fp,
            ate_dcs,
            ate_nonrobust,
        });
    }
    Ok(rows)
}
