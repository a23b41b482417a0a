use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::pose_graph::{normalize_angle, TopoLabel};

fn random_pose(rng: &mut impl Rng, extent: f64) -> Pose2D {
    Pose2D::new(
        rng.random_range(-extent..extent),
        rng.random_range(-extent..extent),
        rng.random_range(-PI..PI),
    )
}

fn residual_fd(edge: &PGEdge, xi: &Pose2D, xj: &Pose2D) -> (Matrix3<f64>, Matrix3<f64>) {
    let h = 1e-6;
    let mut out = [Matrix3::zeros(), Matrix3::zeros()];
    for (side, m) in out.iter_mut().enumerate() {
        for k in 0..3 {
            let bump = |s: f64| {
                let mut p = [[xi.x, xi.y, xi.theta], [xj.x, xj.y, xj.theta]];
                p[side][k] += s;
                let a = Pose2D { x: p[0][0], y: p[0][1], theta: p[0][2] };
                let b = Pose2D { x: p[1][0], y: p[1][1], theta: p[1][2] };
                residual(edge, &a, &b)
            };
            let (plus, minus) = (bump(h), bump(-h));
            let mut d = plus - minus;
            d[2] = normalize_angle(d[2]);
            m.set_column(k, &(d / (2.0 * h)));
        }
    }
    (out[0], out[1])
}

#[test]
fn residual_examples() {
    let z = Pose2D::new(0.4, -0.3, 1.1);
    let xi = Pose2D::new(2.0, 1.0, -0.5);
    let edge = PGEdge::new(0, 1, z, ConstraintKind::LoopClosure);
    let r = residual(&edge, &xi, &xi.compose(&z));
    assert!(r.norm() < 1e-12);
    let edge = PGEdge::new(0, 1, Pose2D::IDENTITY, ConstraintKind::LoopClosure);
    let r = residual(&edge, &Pose2D::IDENTITY, &Pose2D::new(1.0, 0.0, 0.0));
    assert!((r - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
}

#[test]
fn jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let z = random_pose(&mut rng, 5.0);
        let xi = random_pose(&mut rng, 20.0);
        let xj = random_pose(&mut rng, 20.0);
        let edge = PGEdge::new(0, 1, z, ConstraintKind::LoopClosure);
        let (ai, aj) = jacobians(&edge, &xi, &xj);
        let (fi, fj) = residual_fd(&edge, &xi, &xj);
        for (a, f) in [(ai, fi), (aj, fj)] {
            let rel = (a - f).norm() / f.norm().max(1.0);
            assert!(rel < 1e-6, "{rel}\n{a}\n{f}");
        }
    }
}

#[test]
fn dcs_examples() {
    assert_eq!(dcs_scale(0.0, 1.0), 1.0);
    assert_eq!(dcs_scale(3.0, 1.0), 0.5);
    let mut prev = 1.0;
    for k in 1..60 {
        let s = dcs_scale(2f64.powi(k), 1.0);
        assert!(s <= prev && s > 0.0);
        prev = s;
    }
    assert!(prev < 1e-15);
    // cost derivative equals the squared scale
    for c in [0.1, 0.9, 1.5, 10.0, 1e3] {
        let h = 1e-6;
        let d = (dcs_cost(c + h, 1.0) - dcs_cost(c - h, 1.0)) / (2.0 * h);
        assert!((d - dcs_scale(c, 1.0).powi(2)).abs() < 1e-6);
    }
}

/// A noisy random walk with loop edges between nearby true poses.
pub(crate) fn random_graph(seed: u64, n: usize, loops: usize) -> (PoseGraph, Vec<Pose2D>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut truth = vec![Pose2D::IDENTITY];
    for _ in 1..n {
        let step = Pose2D::new(0.5, 0.0, rng.random_range(-0.4..0.4));
        truth.push(truth.last().unwrap().compose(&step));
    }
    let mut g = PoseGraph::new();
    let mut est = truth[0];
    g.add_node(est, Some(TopoLabel::Corridor));
    let mut odo = Vec::new();
    for i in 1..n {
        let t = truth[i - 1].between(&truth[i]);
        let m = Pose2D::new(
            t.x + 0.02 * noise.sample(&mut rng),
            t.y + 0.02 * noise.sample(&mut rng),
            t.theta + 0.01 * noise.sample(&mut rng) + 0.005,
        );
        est = est.compose(&m);
        g.add_node(est, Some(TopoLabel::Corridor));
        odo.push(m);
    }
    for (i, m) in odo.into_iter().enumerate() {
        g.add_edge(PGEdge::odometry(i, m)).unwrap();
    }
    let mut added = 0;
    while added < loops {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i.abs_diff(j) < 5 {
            continue;
        }
        let t = truth[i].between(&truth[j]);
        let m = Pose2D::new(
            t.x + 0.05 * noise.sample(&mut rng),
            t.y + 0.05 * noise.sample(&mut rng),
            t.theta + 0.02 * noise.sample(&mut rng),
        );
        g.add_edge(PGEdge::new(i, j, m, ConstraintKind::LoopClosure)).unwrap();
        added += 1;
    }
    (g, truth)
}

#[test]
fn consistent_chain_is_unchanged() {
    let mut g = PoseGraph::new();
    let mut p = Pose2D::IDENTITY;
    g.add_node(p, None);
    for i in 0..50 {
        let m = Pose2D::new(0.25, 0.0, if i % 10 == 9 { FRAC_PI_2 } else { 0.0 });
        p = p.compose(&m);
        g.add_node(p, None);
        g.add_edge(PGEdge::odometry(i, m)).unwrap();
    }
    let (out, report) = solve_batch(&g, &SolverConfig::default()).unwrap();
    assert!(report.final_chi2 < 1e-18);
    for (a, b) in out.poses().iter().zip(g.poses()) {
        assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        assert!(normalize_angle(a.theta - b.theta).abs() < 1e-12);
    }
}

fn square(loop_measurement: Pose2D) -> PoseGraph {
    let step = Pose2D::new(1.0, 0.0, FRAC_PI_2);
    let mut g = PoseGraph::new();
    g.add_node(Pose2D::IDENTITY, None);
    g.add_node(Pose2D::new(1.0, 0.0, FRAC_PI_2), None);
    g.add_node(Pose2D::new(1.0, 1.0, PI), None);
    // drifted last node
    g.add_node(Pose2D::new(0.35, 1.3, -1.3), None);
    for i in 0..3 {
        g.add_edge(PGEdge::odometry(i, step)).unwrap();
    }
    g.add_edge(PGEdge::new(0, 3, loop_measurement, ConstraintKind::LoopClosure)).unwrap();
    g
}

/// Plain gradient descent with a numerical gradient and backtracking.
fn descent_oracle(g: &PoseGraph) -> f64 {
    let n = g.len();
    let mut x: Vec<f64> = g.poses()[1..].iter().flat_map(|p| [p.x, p.y, p.theta]).collect();
    let eval = |x: &[f64]| {
        let mut h = g.clone();
        for i in 1..n {
            let k = 3 * (i - 1);
            h.set_pose(i, Pose2D::new(x[k], x[k + 1], x[k + 2]));
        }
        chi2(&h)
    };
    let mut f = eval(&x);
    let mut step = 1e-3;
    for _ in 0..200_000 {
        let grad: Vec<f64> = (0..x.len())
            .map(|k| {
                let mut a = x.clone();
                let mut b = x.clone();
                a[k] += 1e-7;
                b[k] -= 1e-7;
                (eval(&a) - eval(&b)) / 2e-7
            })
            .collect();
        loop {
            let y: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let fy = eval(&y);
            if fy < f {
                x = y;
                f = fy;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return f;
            }
        }
        if f < 1e-16 {
            break;
        }
    }
    f
}

#[test]
fn square_with_exact_loop() {
    let g = square(Pose2D::new(0.0, 1.0, -FRAC_PI_2));
    let (out, report) = solve_batch(&g, &SolverConfig::non_robust()).unwrap();
    for e in out.edges() {
        let r = residual(e, out.pose(e.from), out.pose(e.to));
        assert!(r.amax() < 1e-6, "{r}");
    }
    let oracle = descent_oracle(&g);
    assert!((report.final_chi2 - oracle).abs() < 1e-6, "{} vs {oracle}", report.final_chi2);
}

#[test]
fn square_with_inconsistent_loop_matches_oracle() {
    let g = square(Pose2D::new(0.2, 0.9, -1.4));
    let (_, report) = solve_batch(&g, &SolverConfig::non_robust()).unwrap();
    let oracle = descent_oracle(&g);
    assert!(report.final_chi2 > 1e-3);
    assert!((report.final_chi2 - oracle).abs() < 1e-6, "{} vs {oracle}", report.final_chi2);
}

#[test]
fn disconnected_graph_lists_nodes() {
    let mut g = PoseGraph::new();
    for _ in 0..4 {
        g.add_node(Pose2D::IDENTITY, None);
    }
    g.add_edge(PGEdge::odometry(0, Pose2D::new(1.0, 0.0, 0.0))).unwrap();
    match solve_batch(&g, &SolverConfig::default()) {
        Err(Error::Disconnected(ids)) => assert_eq!(ids, vec![2, 3]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn chi2_is_sum_of_edges() {
    for seed in 0..10 {
        let (g, _) = random_graph(seed, 60, 10);
        let total: f64 = g.edges().iter().map(|e| edge_chi2(e, &g)).sum();
        assert!((chi2(&g) - total).abs() < 1e-9);
    }
    let mut g = PoseGraph::new();
    g.add_node(Pose2D::IDENTITY, None);
    g.add_node(Pose2D::new(1.0, 2.0, 0.3), None);
    g.add_edge(PGEdge::odometry(0, Pose2D::new(1.0, 0.0, 0.0))).unwrap();
    assert_eq!(chi2(&g), edge_chi2(&g.edges()[0], &g));
}

#[test]
fn solve_reduces_error_and_reports() {
    for seed in 0..5 {
        let (g, truth) = random_graph(seed, 150, 30);
        let (out, report) = solve_batch(&g, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        assert!(report.final_chi2 <= report.initial_chi2);
        assert!(report.scales.iter().all(|&s| s > 0.0 && s <= 1.0));
        let before = crate::metrics::ate(&g.poses(), &truth).unwrap().rmse;
        let after = crate::metrics::ate(&out.poses(), &truth).unwrap().rmse;
        assert!(after < before, "{after} vs {before}");
    }
}

#[test]
fn gauge_invariance() {
    let t = Pose2D::new(4.0, -7.0, 2.1);
    for seed in 0..5 {
        let (g, _) = random_graph(seed, 80, 15);
        let mut moved = g.clone();
        moved.set_poses(&g.poses().iter().map(|p| t.compose(p)).collect::<Vec<_>>());
        let cfg = SolverConfig { chi2_rel_tol: 1e-12, ..SolverConfig::default() };
        let (a, ra) = solve_batch(&g, &cfg).unwrap();
        let (b, rb) = solve_batch(&moved, &cfg).unwrap();
        assert!((ra.final_chi2 - rb.final_chi2).abs() < 1e-9, "{} {}", ra.final_chi2, rb.final_chi2);
        for (p, q) in a.poses().iter().zip(b.poses()) {
            let tp = t.compose(p);
            assert!((tp.x - q.x).abs() < 1e-6 && (tp.y - q.y).abs() < 1e-6);
            assert!(normalize_angle(tp.theta - q.theta).abs() < 1e-6);
        }
    }
}

#[test]
fn inlier_data_ignores_kernel() {
    for seed in 0..5 {
        let (mut g, truth) = random_graph(seed, 60, 10);
        // start near the optimum so no edge leaves the quadratic zone
        g.set_poses(&truth);
        let robust = solve_batch(&g, &SolverConfig::default()).unwrap();
        let plain = solve_batch(&g, &SolverConfig::non_robust()).unwrap();
        assert!(robust.1.scales.iter().all(|&s| s == 1.0));
        assert_eq!(robust.0.poses(), plain.0.poses());
        assert_eq!(robust.1.final_chi2, plain.1.final_chi2);
    }
}

#[test]
fn dcs_suppresses_outliers() {
    let (mut g, truth) = random_graph(3, 150, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..10 {
        let i = rng.random_range(0..75);
        let j = rng.random_range(75..150);
        g.add_edge(PGEdge::new(i, j, random_pose(&mut rng, 3.0), ConstraintKind::LoopClosure))
            .unwrap();
    }
    let (robust, report) = solve_batch(&g, &SolverConfig::default()).unwrap();
    let (plain, _) = solve_batch(&g, &SolverConfig::non_robust()).unwrap();
    let ate_r = crate::metrics::ate(&robust.poses(), &truth).unwrap().rmse;
    let ate_p = crate::metrics::ate(&plain.poses(), &truth).unwrap().rmse;
    assert!(ate_r < ate_p, "{ate_r} vs {ate_p}");
    let outlier_scales = &report.scales[report.scales.len() - 10..];
    assert!(outlier_scales.iter().all(|&s| s < 0.5), "{outlier_scales:?}");
}

#[test]
fn incremental_matches_batch() {
    for seed in 0..10 {
        let (g, _) = random_graph(100 + seed, 120, 20);
        let cfg = SolverConfig { chi2_rel_tol: 1e-10, ..SolverConfig::default() };
        let (_, batch) = solve_batch(&g, &cfg).unwrap();
        let (inc, reports) = solve_incremental(&g, latest_endpoint, &cfg).unwrap();
        let last = reports.last().unwrap();
        let rel = (last.final_chi2 - batch.final_chi2).abs() / batch.final_chi2;
        assert!(rel < 1e-6, "seed {seed}: {rel}");
        assert_eq!(inc.edges(), g.edges());
    }
}

#[test]
fn incremental_without_loops_is_dead_reckoning() {
    let (g, _) = random_graph(1, 60, 0);
    let (out, _) = solve_incremental(&g, latest_endpoint, &SolverConfig::default()).unwrap();
    for (a, b) in out.poses().iter().zip(g.poses()) {
        assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
    }
}

#[test]
fn incremental_rejects_out_of_order() {
    let mut s = IncrementalSolver::new(Pose2D::IDENTITY, None, SolverConfig::default()).unwrap();
    s.add_node(PGEdge::odometry(0, Pose2D::new(1.0, 0.0, 0.0)), None).unwrap();
    let err = s.add_node(PGEdge::odometry(5, Pose2D::new(1.0, 0.0, 0.0)), None);
    assert!(matches!(err, Err(Error::OutOfOrder { expected: 2, got: 6 })));
    let err = s.add_constraints(vec![PGEdge::new(0, 4, Pose2D::IDENTITY, ConstraintKind::LoopClosure)]);
    assert!(matches!(err, Err(Error::OutOfOrder { .. })));
}
