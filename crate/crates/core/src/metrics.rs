//! Absolute trajectory error with closed-form rigid 2D alignment.

use crate::error::{Error, Result};
use crate::pose_graph::{normalize_angle, Pose2D};

#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    pub rmse: f64,
    /// Translational error of each node after alignment.
    pub errors: Vec<f64>,
    /// Transform applied to the estimate.
    pub alignment: Pose2D,
    /// Heading RMSE after alignment (radians); informational only.
    pub rotation_rmse: f64,
}

/// Least-squares rigid transform `T` minimizing `Σ |T(est_i) - truth_i|²`.
pub fn align(estimate: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<Pose2D> {
    if estimate.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "estimate has {} points but truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.len() < 2 {
        return Err(Error::InvalidInput("alignment needs at least two points".into()));
    }
    let n = estimate.len() as f64;
    let centroid = |pts: &[[f64; 2]]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        [sx / n, sy / n]
    };
    let (ce, ct) = (centroid(estimate), centroid(truth));
    let (mut dot, mut cross, mut spread) = (0.0, 0.0, 0.0);
    for (e, t) in estimate.iter().zip(truth) {
        let (ex, ey) = (e[0] - ce[0], e[1] - ce[1]);
        let (tx, ty) = (t[0] - ct[0], t[1] - ct[1]);
        dot += ex * tx + ey * ty;
        cross += ex * ty - ey * tx;
        spread += ex * ex + ey * ey;
    }
    if spread <= 1e-24 * n {
        return Err(Error::Degenerate("all estimate points coincide".into()));
    }
    let theta = cross.atan2(dot);
    let (s, c) = theta.sin_cos();
    Ok(Pose2D::new(
        ct[0] - (c * ce[0] - s * ce[1]),
        ct[1] - (s * ce[0] + c * ce[1]),
        theta,
    ))
}

pub fn ate(estimate: &[Pose2D], truth: &[Pose2D]) -> Result<AteResult> {
    let xy = |p: &[Pose2D]| p.iter().map(|q| [q.x, q.y]).collect::<Vec<_>>();
    let alignment = align(&xy(estimate), &xy(truth))?;
    let errors: Vec<f64> = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| {
            let p = alignment.transform_point([e.x, e.y]);
            (p[0] - t.x).hypot(p[1] - t.y)
        })
        .collect();
    let n = errors.len() as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let rotation_rmse = (estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| normalize_angle(e.theta + alignment.theta - t.theta).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(AteResult {
        rmse,
        errors,
        alignment,
        rotation_rmse,
    })
}
