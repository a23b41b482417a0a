//! Synthetic training pairs of axis-aligned segments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::mlp::TrainingPair;
use super::NodeFeature;
use crate::error::{Error, Result};
use crate::pose_graph::TopoLabel;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Segment lengths (m).
    pub length_range: (f64, f64),
    /// Distance between neighbouring parallel segments (m).
    pub spacing_range: (f64, f64),
    /// Segment starts are drawn from `[-extent, extent]²` (m).
    pub extent: f64,
    /// Meters to feature units.
    pub scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            length_range: (1.0, 15.0),
            spacing_range: (2.5, 5.0),
            extent: 50.0,
            scale: 1.0 / 50.0,
        }
    }
}

/// Positive noise, as a fraction of segment length.
const POSITIVE_NOISE: f64 = 0.02;

/// Segment as (x0, y0, x1, y1) in meters.
type Seg = [f64; 4];

fn random_segment(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (Seg, f64) {
    let len = rng.random_range(spec.length_range.0..=spec.length_range.1);
    let x0 = rng.random_range(-spec.extent..spec.extent);
    let y0 = rng.random_range(-spec.extent..spec.extent);
    let [dx, dy] = crate::manhattan::direction(rng.random_range(0..4));
    ([x0, y0, x0 + len * dx, y0 + len * dy], len)
}

fn swap(s: Seg) -> Seg {
    [s[2], s[3], s[0], s[1]]
}

fn shifted(s: Seg, dx: f64, dy: f64) -> Seg {
    [s[0] + dx, s[1] + dy, s[2] + dx, s[3] + dy]
}

/// Balanced pairs: the first `n_pairs / 2` are positives (noisy copies,
/// half of them endpoint-swapped), the rest negatives (perpendicular
/// neighbours, collinear neighbours, or unrelated segments).
pub fn synthesize_training_pairs(spec: &SynthSpec, n_pairs: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    if n_pairs == 0 {
        return Err(Error::InvalidInput("n_pairs must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let feature = |s: Seg, label: TopoLabel| NodeFeature {
        coords: s.map(|v| v * spec.scale),
        label,
    };
    let n_pos = n_pairs / 2;
    let mut out = Vec::with_capacity(n_pairs);
    for k in 0..n_pairs {
        let label = [TopoLabel::Rackspace, TopoLabel::Corridor][rng.random_range(0..2)];
        let (a, len) = random_segment(spec, &mut rng);
        let (dx, dy) = ((a[2] - a[0]) / len, (a[3] - a[1]) / len);
        let same = k < n_pos;
        let mut b = if same {
            a
        } else {
            let gap = rng.random_range(spec.spacing_range.0..=spec.spacing_range.1);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            match rng.random_range(0..3) {
                0 => shifted(a, -dy * gap * sign, dx * gap * sign),
                1 => shifted(a, dx * (len + gap) * sign, dy * (len + gap) * sign),
                _ => random_segment(spec, &mut rng).0,
            }
        };
        let sigma = POSITIVE_NOISE * len;
        for v in &mut b {
            *v += sigma * unit.sample(&mut rng);
        }
        if rng.random::<bool>() {
            b = swap(b);
        }
        out.push(TrainingPair { a: feature(a, label), b: feature(b, label), same });
    }
    Ok(out)
}
