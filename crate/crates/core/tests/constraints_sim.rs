//! Loop and Manhattan constraints on simulated warehouses.

use std::sync::OnceLock;

use manhattan_slam::constraints::{build_loop_constraints, build_manhattan_constraints, ConstraintConfig};
use manhattan_slam::experiment::{train_scorer, ExperimentConfig};
use manhattan_slam::manhattan::{build_manhattan, ManhattanGraph};
use manhattan_slam::pipeline::{topological_graph, PipelineConfig, Scenario};
use manhattan_slam::similarity::{propose, Band, EndpointBaseline, PairScorer, ProposalPair, SiameseModel};
use manhattan_slam::simulator::NoiseModel;
use manhattan_slam::{PGEdge, Pose2D};

fn model() -> &'static SiameseModel {
    static MODEL: OnceLock<SiameseModel> = OnceLock::new();
    MODEL.get_or_init(|| train_scorer(&ExperimentConfig::default()).unwrap())
}

fn drift_free() -> PipelineConfig {
    PipelineConfig { noise: NoiseModel::noiseless(0), ..PipelineConfig::default() }
}

fn setup(cfg: &PipelineConfig, seed: u64) -> (Scenario, ManhattanGraph) {
    let sc = Scenario::simulate(cfg, seed).unwrap();
    let mg = build_manhattan(&sc.graph, &topological_graph(&sc.graph, cfg).unwrap()).unwrap();
    (sc, mg)
}

fn agrees_with_truth(e: &PGEdge, truth: &[Pose2D]) -> bool {
    let err = e.measurement.between(&truth[e.from].between(&truth[e.to]));
    err.translation_norm() <= 0.3 && err.theta.abs() <= 0.1
}

#[test]
fn drift_free_true_revisits_keep_most_sampled_edges() {
    let cc = ConstraintConfig::default();
    for seed in 0..5 {
        let (sc, mg) = setup(&drift_free(), seed);
        let mut checked = 0;
        for (i, a) in mg.meta_nodes.iter().enumerate() {
            for (j, b) in mg.meta_nodes.iter().enumerate().skip(i + 1) {
                if a.label != b.label || sc.majority_region(a.collection()) != sc.majority_region(b.collection()) {
                    continue;
                }
                let p = ProposalPair {
                    meta_i: i,
                    meta_j: j,
                    distance: 0.0,
                    band: Band::HighConfidence,
                    reversed: (a.heading - b.heading).cos() < 0.0,
                };
                let kept = build_loop_constraints(&[p], &mg, &sc.scans, &cc).edges.len();
                let sampled = cc.k.min(a.len()).min(b.len());
                // Regions shorter than k get fewer samples; those only need one match.
                let need = if sampled == cc.k { (0.8 * cc.k as f64).ceil() as usize } else { 1 };
                assert!(kept >= need, "seed {seed} pair ({i}, {j}): {kept}/{sampled}");
                checked += 1;
            }
        }
        assert!(checked >= 10, "seed {seed}: only {checked} true pairs");
    }
}

#[test]
fn edges_from_learned_proposals_are_rarely_wrong() {
    let cfg = PipelineConfig::default();
    let (mut kept, mut wrong) = (0, 0);
    for seed in 0..20 {
        let (sc, mg) = setup(&cfg, seed);
        let props = propose(model(), &mg, sc.feature_scale());
        let edges = build_loop_constraints(&props, &mg, &sc.scans, &cfg.constraints).edges;
        let truth = sc.truth_poses();
        kept += edges.len();
        wrong += edges.iter().filter(|e| !agrees_with_truth(e, &truth)).count();
    }
    assert!(kept > 1000, "{kept}");
    assert!(wrong as f64 <= 0.05 * kept as f64, "{wrong}/{kept} kept edges disagree with truth");
}

#[test]
fn reversed_revisits_give_half_turn_edges() {
    let cfg = drift_free();
    let mut reversed = 0;
    for seed in 0..3 {
        let (sc, mg) = setup(&cfg, seed);
        let truth = sc.truth_poses();
        let props: Vec<ProposalPair> =
            propose(model(), &mg, sc.feature_scale()).into_iter().filter(|p| p.reversed).collect();
        reversed += props.len();
        for p in &props {
            assert!(sc.is_true_pair(&mg, p), "seed {seed}: {p:?}");
        }
        for e in build_loop_constraints(&props, &mg, &sc.scans, &cfg.constraints).edges {
            assert!(agrees_with_truth(&e, &truth), "seed {seed}: {e:?}");
            assert!(e.measurement.theta.cos() < -0.99, "seed {seed}: {e:?}");
        }
        for e in build_manhattan_constraints(&props, &mg, cfg.constraints.neighborhood) {
            assert_eq!(e.measurement.theta, std::f64::consts::PI);
        }
    }
    assert!(reversed > 0);
}

fn proposal_keys(scorer: &dyn PairScorer, mg: &ManhattanGraph, scale: f64) -> Vec<(usize, usize, bool)> {
    propose(scorer, mg, scale).iter().map(|p| (p.meta_i, p.meta_j, p.reversed)).collect()
}

#[test]
fn learned_and_endpoint_proposers_agree_without_drift() {
    let base = EndpointBaseline::default();
    for seed in 0..5 {
        let (sc, mg) = setup(&drift_free(), seed);
        let scale = sc.feature_scale();
        let learned = proposal_keys(model(), &mg, scale);
        assert_eq!(learned, proposal_keys(&base, &mg, scale), "seed {seed}");
        assert!(propose(model(), &mg, scale).iter().all(|p| sc.is_true_pair(&mg, p)), "seed {seed}");
    }
}
