use super::*;
use crate::manhattan::MetaNode;
use crate::pose_graph::TopoLabel;
use crate::similarity::Band;
use proptest::prelude::*;

fn meta(id: usize, pg_start: usize, nodes: usize, heading: f64) -> MetaNode {
    let offsets: Vec<f64> = (0..nodes).map(|k| 0.25 * k as f64).collect();
    let length = *offsets.last().unwrap();
    MetaNode {
        id,
        label: TopoLabel::Rackspace,
        pg_start,
        pg_end: pg_start + nodes - 1,
        length,
        heading,
        x_start: 0.0,
        y_start: 0.0,
        x_end: length * heading.cos(),
        y_end: length * heading.sin(),
        offsets,
    }
}

fn graph(a: usize, b: usize, reversed: bool) -> (ManhattanGraph, ProposalPair) {
    let mg = ManhattanGraph {
        meta_nodes: vec![meta(0, 0, a, 0.0), meta(1, 100, b, if reversed { PI } else { 0.0 })],
        turns: vec![0.0],
    };
    let p = ProposalPair { meta_i: 0, meta_j: 1, distance: 0.1, band: Band::HighConfidence, reversed };
    (mg, p)
}

#[test]
fn midpoint_for_single_sample() {
    let (mg, p) = graph(41, 41, false);
    let pairs = sample_loop_pairs(&p, &mg, 1);
    assert_eq!(pairs, vec![(20, 120, Pose2D::IDENTITY)]);
}

#[test]
fn five_fractions() {
    let (mg, p) = graph(40, 38, false);
    let pairs = sample_loop_pairs(&p, &mg, 5);
    assert_eq!(pairs.len(), 5);
    for (m, (i, j, _)) in pairs.iter().enumerate() {
        let f = (m + 1) as f64 / 6.0;
        assert!(((i - 0) as f64 - f * 39.0).abs() <= 0.5 + 1e-9);
        assert!(((j - 100) as f64 - f * 37.0).abs() <= 0.5 + 1e-9);
    }
}

#[test]
fn reversed_indexing() {
    let (mg, p) = graph(41, 41, true);
    let pairs = sample_loop_pairs(&p, &mg, 3);
    // fraction 1/4 in A meets fraction 3/4 in B
    assert_eq!((pairs[0].0, pairs[0].1), (10, 130));
    assert_eq!(pairs[0].2, Pose2D::new(0.0, 0.0, PI));
}

#[test]
fn short_regions_return_fewer_pairs() {
    let (mg, p) = graph(3, 40, false);
    assert_eq!(sample_loop_pairs(&p, &mg, 5).len(), 3);
}

#[test]
fn empty_inputs() {
    let (mg, p) = graph(40, 40, false);
    assert!(build_loop_constraints(&[], &mg, &[], &ConstraintConfig::default()).edges.is_empty());
    assert!(build_manhattan_constraints(&[p], &mg, 0).is_empty());
}

#[test]
fn manhattan_measurements() {
    let (mg, p) = graph(41, 41, false);
    for e in build_manhattan_constraints(&[p], &mg, 3) {
        let (sa, sb) = (mg.meta_nodes[0].offsets[e.from], mg.meta_nodes[1].offsets[e.to - 100]);
        assert_eq!(e.measurement, Pose2D::new(sb - sa, 0.0, 0.0));
        assert_eq!(e.kind, ConstraintKind::Manhattan);
    }
    let (mg, p) = graph(41, 41, true);
    let edges = build_manhattan_constraints(&[p], &mg, 3);
    assert_eq!(edges.len(), 3);
    for e in edges {
        assert_eq!(e.measurement.theta, PI);
        // same physical spot when matched by reversed fractions
        assert!(e.measurement.x.abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn edges_stay_in_collections(a in 1usize..60, b in 1usize..60, k in 1usize..8, rev: bool) {
        let (mg, p) = graph(a, b, rev);
        let pairs = sample_loop_pairs(&p, &mg, k);
        prop_assert!(pairs.len() <= k);
        for (i, j, _) in pairs {
            prop_assert!(mg.meta_nodes[0].collection().contains(&i));
            prop_assert!(mg.meta_nodes[1].collection().contains(&j));
        }
        let edges = build_manhattan_constraints(&[p], &mg, k);
        prop_assert!(edges.len() <= k);
        for e in edges {
            prop_assert!(mg.meta_nodes[0].collection().contains(&e.from));
            prop_assert!(mg.meta_nodes[1].collection().contains(&e.to));
        }
    }
}
