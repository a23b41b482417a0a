//! Groups per-node labels into contiguous regions.

use crate::error::{Error, Result};
use crate::pose_graph::TopoLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopoRegion {
    pub label: TopoLabel,
    pub pg_start: usize,
    /// Inclusive.
    pub pg_end: usize,
}

impl TopoRegion {
    pub fn len(&self) -> usize {
        self.pg_end - self.pg_start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> std::ops::RangeInclusive<usize> {
        self.pg_start..=self.pg_end
    }
}

/// Regions in traversal order; region k is adjacent to k + 1 only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologicalGraph {
    pub regions: Vec<TopoRegion>,
}

impl TopologicalGraph {
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> {
        (1..self.regions.len()).map(|k| (k - 1, k))
    }

    /// Expands regions back to one label per node.
    pub fn labels(&self) -> Vec<TopoLabel> {
        self.regions
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.label, r.len()))
            .collect()
    }

    pub fn region_of(&self, node: usize) -> Option<usize> {
        let k = self.regions.partition_point(|r| r.pg_end < node);
        (k < self.regions.len() && self.regions[k].pg_start <= node).then_some(k)
    }
}

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_MIN_RUN: usize = 3;

/// Centered majority filter. A label wins only with a strict plurality;
/// otherwise the original is kept. Windows are truncated at the ends.
pub fn smooth_labels(labels: &[TopoLabel], window: usize) -> Result<Vec<TopoLabel>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidInput(format!("window must be odd and >= 1, got {window}")));
    }
    let half = window / 2;
    Ok((0..labels.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(labels.len());
            let mut counts = [0usize; 3];
            for l in &labels[lo..hi] {
                counts[*l as usize] += 1;
            }
            let best = *counts.iter().max().expect("three counts");
            let mut winners = TopoLabel::ALL.into_iter().filter(|l| counts[*l as usize] == best);
            match (winners.next(), winners.next()) {
                (Some(w), None) => w,
                _ => labels[i],
            }
        })
        .collect())
}

fn runs(labels: &[TopoLabel]) -> Vec<TopoRegion> {
    let mut out: Vec<TopoRegion> = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.label == label => r.pg_end = i,
            _ => out.push(TopoRegion { label, pg_start: i, pg_end: i }),
        }
    }
    out
}

/// Maximal equal-label runs; runs shorter than `min_run` (except the first)
/// are absorbed by their predecessor, then equal neighbours are fused.
pub fn group(labels: &[TopoLabel], min_run: usize) -> Result<TopologicalGraph> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("cannot group an empty label list".into()));
    }
    let mut merged: Vec<TopoRegion> = Vec::new();
    for run in runs(labels) {
        match merged.last_mut() {
            Some(prev) if run.len() < min_run || prev.label == run.label => prev.pg_end = run.pg_end,
            _ => merged.push(run),
        }
    }
    Ok(TopologicalGraph { regions: merged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::*;
    use proptest::prelude::*;
    use TopoLabel::{Corridor as C, Intersection as I, Rackspace as R};

    fn region(label: TopoLabel, a: usize, b: usize) -> TopoRegion {
        TopoRegion { label, pg_start: a, pg_end: b }
    }

    #[test]
    fn smoothing_examples() {
        let x = [R, C, I, R, C];
        assert_eq!(smooth_labels(&x, 1).unwrap(), x);
        assert_eq!(smooth_labels(&[R, R, C, R, R], 3).unwrap(), vec![R; 5]);
        assert!(smooth_labels(&x, 4).is_err());
        assert!(smooth_labels(&x, 0).is_err());
    }

    #[test]
    fn grouping_examples() {
        let g = group(&[R, R, R, I, I, C, C, C], 1).unwrap();
        assert_eq!(g.regions, vec![region(R, 0, 2), region(I, 3, 4), region(C, 5, 7)]);
        let g = group(&[R, R, R, C, R, R, R], 3).unwrap();
        assert_eq!(g.regions, vec![region(R, 0, 6)]);
        assert_eq!(group(&[C; 9], 3).unwrap().regions, vec![region(C, 0, 8)]);
        // first region is never merged away
        let g = group(&[I, R, R, R], 3).unwrap();
        assert_eq!(g.regions, vec![region(I, 0, 0), region(R, 1, 3)]);
        assert!(group(&[], 3).is_err());
    }

    #[test]
    fn region_lookup() {
        let g = group(&[R, R, I, I, C], 1).unwrap();
        assert_eq!(g.region_of(0), Some(0));
        assert_eq!(g.region_of(3), Some(1));
        assert_eq!(g.region_of(4), Some(2));
        assert_eq!(g.region_of(5), None);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn smoothing_recovers_noisy_labels() {
        let layout = generate_layout(&LayoutParams::default()).unwrap();
        let traj = generate_trajectory(&layout, &default_plan(&layout), DEFAULT_STEP).unwrap();
        let scan = ScanConfig { beams: 4, max_range: 1.0 };
        let (mut total, mut raw_total) = (0.0, 0.0);
        for seed in 0..20 {
            let noise = NoiseModel { rng_seed: seed, ..NoiseModel::default() };
            let run = corrupt(&layout, &traj, &noise, &scan).unwrap();
            let raw = run.graph.labels().unwrap();
            let smoothed = smooth_labels(&raw, 5).unwrap();
            let score = |x: &[TopoLabel]| {
                x.iter().zip(&traj).filter(|(a, t)| **a == t.label).count() as f64 / traj.len() as f64
            };
            total += score(&smoothed);
            raw_total += score(&raw);
        }
        // Residual errors sit on region boundaries, which a 5-wide window
        // cannot resolve; this layout has a boundary every ~10 nodes.
        let (acc, raw) = (total / 20.0, raw_total / 20.0);
        assert!(acc >= 0.98, "{acc}");
        assert!(1.0 - acc < (1.0 - raw) / 3.0, "{acc} vs {raw}");
    }

    fn labels() -> impl Strategy<Value = Vec<TopoLabel>> {
        prop::collection::vec(prop::sample::select(TopoLabel::ALL.to_vec()), 1..200)
    }

    proptest! {
        #[test]
        fn group_partitions(x in labels(), min_run in 1usize..6) {
            let g = group(&x, min_run).unwrap();
            prop_assert_eq!(g.regions[0].pg_start, 0);
            prop_assert_eq!(g.regions.last().unwrap().pg_end, x.len() - 1);
            for w in g.regions.windows(2) {
                prop_assert_eq!(w[0].pg_end + 1, w[1].pg_start);
                prop_assert!(w[0].label != w[1].label);
            }
            for r in &g.regions {
                prop_assert!(r.pg_start <= r.pg_end);
            }
        }

        #[test]
        fn group_idempotent(x in labels(), min_run in 1usize..6) {
            let g = group(&x, min_run).unwrap();
            prop_assert_eq!(group(&g.labels(), min_run).unwrap(), g);
        }

        #[test]
        fn smoothing_stays_in_window(x in labels(), half in 0usize..4) {
            let w = 2 * half + 1;
            let y = smooth_labels(&x, w).unwrap();
            prop_assert_eq!(y.len(), x.len());
            for i in 0..x.len() {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(x.len());
                prop_assert!(x[lo..hi].contains(&y[i]));
            }
        }
    }
}
