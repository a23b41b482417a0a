//! Point-to-point ICP in 2D with a capped correspondence distance.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::pose_graph::{normalize_angle, Pose2D};
use crate::simulator::Scan;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the translation and rotation updates fall below this.
    pub tol: f64,
    /// Correspondences farther than this count as outliers at a fixed cost.
    pub max_correspondence: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 50,
            tol: 1e-6,
            max_correspondence: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Pose of the moving scan's frame in the reference frame.
    pub transform: Pose2D,
    /// Mean of `min(d², c²)` over moving points at `transform` (m²).
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective before each iteration, then at the returned transform.
    pub history: Vec<f64>,
}

pub const MIN_POINTS: usize = 10;

/// Uniform grid over reference points for radius-limited nearest neighbours.
struct Grid<'a> {
    points: &'a [[f64; 2]],
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [[f64; 2]], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Grid { points, cell, cells }
    }

    fn key(p: &[f64; 2], cell: f64) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    /// Closest point within one cell size, with its squared distance.
    fn nearest(&self, q: [f64; 2]) -> Option<(usize, f64)> {
        let (cx, cy) = Self::key(&q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(ids) = self.cells.get(&(cx + dx, cy + dy)) else { continue };
                for &i in ids {
                    let p = self.points[i];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                    // ties resolve to the lower index for determinism
                    if best.is_none_or(|(bi, bd)| d2 < bd || (d2 == bd && i < bi)) {
                        best = Some((i, d2));
                    }
                }
            }
        }
        best.filter(|&(_, d2)| d2 < self.cell * self.cell)
    }
}

fn check_spread(points: &[[f64; 2]], which: &str) -> Result<()> {
    if points.len() < MIN_POINTS {
        return Err(Error::Degenerate(format!("{which} scan has {} points, need {MIN_POINTS}", points.len())));
    }
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0] / n, b + p[1] / n));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx / n;
        syy += dy * dy / n;
        sxy += dx * dy / n;
    }
    // smallest eigenvalue of the 2x2 covariance
    let half_tr = 0.5 * (sxx + syy);
    let det = sxx * syy - sxy * sxy;
    let min_eig = half_tr - (half_tr * half_tr - det).max(0.0).sqrt();
    if min_eig.max(0.0).sqrt() < 1e-9 {
        return Err(Error::Degenerate(format!("{which} scan points are collinear")));
    }
    Ok(())
}

/// Rigid transform minimizing `Σ |T(p) - q|²` over matched pairs.
fn fit(pairs: &[([f64; 2], [f64; 2])]) -> Pose2D {
    let n = pairs.len() as f64;
    let (mut pm, mut qm) = ([0.0; 2], [0.0; 2]);
    for (p, q) in pairs {
        pm[0] += p[0] / n;
        pm[1] += p[1] / n;
        qm[0] += q[0] / n;
        qm[1] += q[1] / n;
    }
    let (mut dot, mut cross) = (0.0, 0.0);
    for (p, q) in pairs {
        let (px, py) = (p[0] - pm[0], p[1] - pm[1]);
        let (qx, qy) = (q[0] - qm[0], q[1] - qm[1]);
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
    }
    let theta = cross.atan2(dot);
    let (s, c) = theta.sin_cos();
    Pose2D::new(qm[0] - (c * pm[0] - s * pm[1]), qm[1] - (s * pm[0] + c * pm[1]), theta)
}

/// Aligns `moving` onto `reference` starting from `initial`.
pub fn icp(reference: &Scan, moving: &Scan, initial: Pose2D, cfg: &IcpConfig) -> Result<IcpResult> {
    check_spread(&reference.points, "reference")?;
    check_spread(&moving.points, "moving")?;
    let cap = cfg.max_correspondence;
    let grid = Grid::new(&reference.points, cap);
    let n = moving.points.len() as f64;

    // Objective at `t` and the inlier correspondences.
    let evaluate = |t: &Pose2D| {
        let mut total = 0.0;
        let mut pairs = Vec::with_capacity(moving.points.len());
        for &p in &moving.points {
            match grid.nearest(t.transform_point(p)) {
                Some((i, d2)) => {
                    total += d2;
                    pairs.push((p, reference.points[i]));
                }
                None => total += cap * cap,
            }
        }
        (total / n, pairs)
    };

    let mut t = initial;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let (mut f, mut pairs) = evaluate(&t);
    while iterations < cfg.max_iterations {
        history.push(f);
        if pairs.len() < 3 {
            break;
        }
        iterations += 1;
        let next = fit(&pairs);
        let step = (next.x - t.x).hypot(next.y - t.y).max(normalize_angle(next.theta - t.theta).abs());
        t = next;
        (f, pairs) = evaluate(&t);
        if step < cfg.tol {
            converged = true;
            break;
        }
    }
    history.push(f);
    Ok(IcpResult { transform: t, residual: f, iterations, converged, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize) -> Scan {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // points on a few walls, like a corner of an aisle
        let points: Vec<[f64; 2]> = (0..n)
            .map(|k| match k % 3 {
                0 => [rng.random_range(-6.0..6.0), 1.3],
                1 => [rng.random_range(-6.0..6.0), -1.3],
                _ => [4.0 + rng.random_range(-0.5..0.5), rng.random_range(-3.0..3.0)],
            })
            .collect();
        Scan { beam_ids: (0..n).collect(), beams: n, max_range: 20.0, points }
    }

    fn moved(scan: &Scan, t: &Pose2D) -> Scan {
        Scan { points: scan.points.iter().map(|p| t.transform_point(*p)).collect(), ..scan.clone() }
    }

    #[test]
    fn identical_scans() {
        let s = cloud(1, 200);
        let r = icp(&s, &s, Pose2D::IDENTITY, &IcpConfig::default()).unwrap();
        assert!(r.residual < 1e-12);
        assert!(r.transform.translation_norm() < 1e-12 && r.transform.theta.abs() < 1e-12);
    }

    #[test]
    fn recovers_known_transform() {
        for seed in 0..10 {
            let s = cloud(seed, 300);
            let t = Pose2D::new(0.3, -0.2, 0.1);
            let m = moved(&s, &t);
            let r = icp(&s, &m, Pose2D::IDENTITY, &IcpConfig::default()).unwrap();
            let inv = t.inverse();
            assert!((r.transform.x - inv.x).abs() < 1e-3 && (r.transform.y - inv.y).abs() < 1e-3, "{:?}", r.transform);
            assert!((r.transform.theta - inv.theta).abs() < 1e-3);
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        let line = Scan {
            points: (0..20).map(|k| [k as f64, 2.0 * k as f64]).collect(),
            beam_ids: (0..20).collect(),
            beams: 20,
            max_range: 50.0,
        };
        let s = cloud(0, 50);
        assert!(matches!(icp(&s, &line, Pose2D::IDENTITY, &IcpConfig::default()), Err(Error::Degenerate(_))));
        let few = Scan { points: s.points[..5].to_vec(), ..s.clone() };
        assert!(icp(&s, &few, Pose2D::IDENTITY, &IcpConfig::default()).is_err());
    }

    #[test]
    fn simulator_shift_round_trip() {
        let layout = generate_layout(&LayoutParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Pose2D::new(layout.lane_center(2), layout.band_center(0) + 7.0, 0.0);
        let q = Pose2D::new(p.x + 0.5, p.y, p.theta);
        let a = raycast(&layout, &p, 360, 15.0, 0.0, &mut rng).unwrap();
        let b = raycast(&layout, &q, 360, 15.0, 0.0, &mut rng).unwrap();
        let r = icp(&a, &b, Pose2D::IDENTITY, &IcpConfig::default()).unwrap();
        let truth = p.between(&q);
        assert!((r.transform.x - truth.x).abs() < 1e-2 && (r.transform.y - truth.y).abs() < 1e-2, "{:?} vs {truth:?}", r.transform);
        assert!((r.transform.theta - truth.theta).abs() < 1e-2);
    }
}
