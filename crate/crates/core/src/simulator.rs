//! Synthetic warehouses, ground-truth trajectories, drifting odometry,
//! noisy topological labels and ray-cast range scans.
//!
//! The layout is a grid: `rows` rows of racks, each rack long along +y.
//! Vertical lanes between (and beside) racks are aisles (rackspace); the
//! horizontal bands below, between and above the rows are corridors; the
//! squares where a lane crosses a band are intersections. The robot drives on
//! lane and band centerlines.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::pose_graph::{PGEdge, Pose2D, PoseGraph, TopoLabel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn contains_strict(&self, x: f64, y: f64) -> bool {
        x > self.min_x && x < self.max_x && y > self.min_y && y < self.max_y
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.min_x < other.max_x
            && other.min_x < self.max_x
            && self.min_y < other.max_y
            && other.min_y < self.max_y
    }

    /// Entry distance of a ray starting outside the rectangle, if it hits.
    fn ray_entry(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for (o, d, lo, hi) in [(ox, dx, self.min_x, self.max_x), (oy, dy, self.min_y, self.max_y)] {
            if d.abs() < 1e-15 {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let (a, b) = ((lo - o) / d, (hi - o) / d);
                t_near = t_near.max(a.min(b));
                t_far = t_far.min(a.max(b));
            }
        }
        (t_near <= t_far && t_near >= 0.0).then_some(t_near)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let (vx, vy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let len2 = vx * vx + vy * vy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p[0] - self.a[0]) * vx + (p[1] - self.a[1]) * vy) / len2).clamp(0.0, 1.0)
        };
        (p[0] - self.a[0] - t * vx).hypot(p[1] - self.a[1] - t * vy)
    }
}

/// Which grid cell a region occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Aisle { row: usize, lane: usize },
    Intersection { band: usize, lane: usize },
    Corridor { band: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub kind: RegionKind,
    pub label: TopoLabel,
    pub bounds: Rect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rack {
    pub row: usize,
    pub col: usize,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutParams {
    pub width: f64,
    pub height: f64,
    pub n_racks: usize,
    /// Minimum clear width of lanes and corridor bands.
    pub aisle_width: f64,
    /// Nominal rack footprint (depth along x, length along y).
    pub rack_size: (f64, f64),
    pub seed: u64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams {
            width: 30.0,
            height: 50.0,
            n_racks: 21,
            aisle_width: 2.5,
            rack_size: (1.2, 12.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarehouseLayout {
    pub width: f64,
    pub height: f64,
    pub rows: usize,
    pub cols: usize,
    pub lane_width: f64,
    pub band_height: f64,
    pub rack_size: (f64, f64),
    pub racks: Vec<Rack>,
    pub regions: Vec<Region>,
    pub centerlines: Vec<Segment>,
}

/// Fraction of the rack depth / length that may be shaved off each side.
const DEPTH_JITTER: f64 = 0.1;
const LENGTH_JITTER: f64 = 0.15;

pub fn generate_layout(params: &LayoutParams) -> Result<WarehouseLayout> {
    let LayoutParams {
        width,
        height,
        n_racks,
        aisle_width,
        rack_size: (depth, length),
        seed,
    } = *params;
    if n_racks == 0 {
        return Err(Error::Layout("at least one rack is required".into()));
    }
    if [width, height, aisle_width, depth, length]
        .iter()
        .any(|v| !(v.is_finite() && *v > 0.0))
    {
        return Err(Error::Layout("all dimensions must be positive".into()));
    }
    let max_cols = ((width - aisle_width) / (depth + aisle_width)).floor();
    if max_cols < 1.0 {
        return Err(Error::Layout(format!(
            "a {depth} m rack with {aisle_width} m lanes does not fit in {width} m"
        )));
    }
    let max_cols = max_cols as usize;
    let rows = n_racks.div_ceil(max_cols);
    let cols = n_racks.div_ceil(rows);
    let needed_height = rows as f64 * length + (rows + 1) as f64 * aisle_width;
    if needed_height > height + 1e-9 {
        return Err(Error::Layout(format!(
            "{rows} rows of {length} m racks need {needed_height:.2} m but the box is {height} m"
        )));
    }
    let lane_width = (width - cols as f64 * depth) / (cols + 1) as f64;
    let band_height = (height - rows as f64 * length) / (rows + 1) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut racks = Vec::with_capacity(n_racks);
    for k in 0..n_racks {
        let (row, col) = (k / cols, k % cols);
        let x0 = lane_width + col as f64 * (lane_width + depth);
        let y0 = band_height + row as f64 * (band_height + length);
        let rect = Rect {
            min_x: x0 + rng.random_range(0.0..DEPTH_JITTER) * depth,
            max_x: x0 + depth - rng.random_range(0.0..DEPTH_JITTER) * depth,
            min_y: y0 + rng.random_range(0.0..LENGTH_JITTER) * length,
            max_y: y0 + length - rng.random_range(0.0..LENGTH_JITTER) * length,
        };
        racks.push(Rack { row, col, rect });
    }

    let mut layout = WarehouseLayout {
        width,
        height,
        rows,
        cols,
        lane_width,
        band_height,
        rack_size: (depth, length),
        racks,
        regions: Vec::new(),
        centerlines: Vec::new(),
    };
    layout.regions = layout.build_regions();
    layout.centerlines = layout.build_centerlines();
    Ok(layout)
}

impl WarehouseLayout {
    fn pitch_x(&self) -> f64 {
        self.lane_width + self.rack_size.0
    }

    fn pitch_y(&self) -> f64 {
        self.band_height + self.rack_size.1
    }

    pub fn lanes(&self) -> usize {
        self.cols + 1
    }

    pub fn bands(&self) -> usize {
        self.rows + 1
    }

    pub fn n_aisles(&self) -> usize {
        self.rows * self.lanes()
    }

    pub fn aisle_id(&self, row: usize, lane: usize) -> usize {
        row * self.lanes() + lane
    }

    /// `(row, lane)` of an aisle id.
    pub fn aisle_cell(&self, aisle: usize) -> (usize, usize) {
        (aisle / self.lanes(), aisle % self.lanes())
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        lane as f64 * self.pitch_x() + 0.5 * self.lane_width
    }

    pub fn band_center(&self, band: usize) -> f64 {
        band as f64 * self.pitch_y() + 0.5 * self.band_height
    }

    pub fn junction(&self, band: usize, lane: usize) -> [f64; 2] {
        [self.lane_center(lane), self.band_center(band)]
    }

    fn lane_span(&self, lane: usize) -> (f64, f64) {
        let x0 = lane as f64 * self.pitch_x();
        (x0, x0 + self.lane_width)
    }

    fn band_span(&self, band: usize) -> (f64, f64) {
        let y0 = band as f64 * self.pitch_y();
        (y0, y0 + self.band_height)
    }

    fn build_regions(&self) -> Vec<Region> {
        let mut regions = Vec::new();
        for row in 0..self.rows {
            for lane in 0..self.lanes() {
                let (min_x, max_x) = self.lane_span(lane);
                let min_y = self.band_span(row).1;
                regions.push(Region {
                    kind: RegionKind::Aisle { row, lane },
                    label: TopoLabel::Rackspace,
                    bounds: Rect { min_x, max_x, min_y, max_y: min_y + self.rack_size.1 },
                });
            }
        }
        for band in 0..self.bands() {
            let (min_y, max_y) = self.band_span(band);
            for lane in 0..self.lanes() {
                let (min_x, max_x) = self.lane_span(lane);
                regions.push(Region {
                    kind: RegionKind::Intersection { band, lane },
                    label: TopoLabel::Intersection,
                    bounds: Rect { min_x, max_x, min_y, max_y },
                });
            }
            for col in 0..self.cols {
                let min_x = self.lane_span(col).1;
                regions.push(Region {
                    kind: RegionKind::Corridor { band, col },
                    label: TopoLabel::Corridor,
                    bounds: Rect { min_x, max_x: min_x + self.rack_size.0, min_y, max_y },
                });
            }
        }
        regions
    }

    fn build_centerlines(&self) -> Vec<Segment> {
        let (top, right) = (self.band_center(self.rows), self.lane_center(self.cols));
        let mut lines: Vec<Segment> = (0..self.lanes())
            .map(|l| Segment {
                a: [self.lane_center(l), self.band_center(0)],
                b: [self.lane_center(l), top],
            })
            .collect();
        lines.extend((0..self.bands()).map(|b| Segment {
            a: [self.lane_center(0), self.band_center(b)],
            b: [right, self.band_center(b)],
        }));
        lines
    }

    /// Region id (index into `regions`) containing a point of a lane or band.
    /// Points inside rack cells return `None`.
    pub fn region_at(&self, x: f64, y: f64) -> Option<usize> {
        if !(0.0..=self.width).contains(&x) || !(0.0..=self.height).contains(&y) {
            return None;
        }
        let (kx, rx) = split_pitch(x, self.pitch_x(), self.lane_width, self.cols);
        let (ky, ry) = split_pitch(y, self.pitch_y(), self.band_height, self.rows);
        let n_aisles = self.n_aisles();
        let per_band = self.lanes() + self.cols;
        match (rx, ry) {
            // inside a lane
            (true, false) => Some(self.aisle_id(ky, kx)),
            (true, true) => Some(n_aisles + ky * per_band + kx),
            (false, true) => Some(n_aisles + ky * per_band + self.lanes() + kx),
            (false, false) => None,
        }
    }

    pub fn label_at(&self, x: f64, y: f64) -> Option<TopoLabel> {
        self.region_at(x, y).map(|r| self.regions[r].label)
    }

    pub fn is_free(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x)
            && (0.0..=self.height).contains(&y)
            && !self.racks.iter().any(|r| r.rect.contains_strict(x, y))
    }
}

/// Splits a coordinate into (cell index, is-in-gap). Gaps (lanes / bands) of
/// width `gap` alternate with blocks; there are `blocks + 1` gaps.
fn split_pitch(v: f64, pitch: f64, gap: f64, blocks: usize) -> (usize, bool) {
    let k = ((v / pitch).floor() as usize).min(blocks);
    let within = v - k as f64 * pitch;
    if within <= gap {
        (k, true)
    } else {
        (k, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub pose: Pose2D,
    pub label: TopoLabel,
    /// Ground-truth region id (index into the layout's regions).
    pub region: usize,
    pub timestamp: f64,
}

pub const DEFAULT_STEP: f64 = 0.25;

/// Drives the plan's aisles in order. Each aisle is entered from whichever
/// end is closer to the current position (bottom on ties) and driven to the
/// other end; transit between aisles follows the current band and then the
/// target lane.
pub fn generate_trajectory(
    layout: &WarehouseLayout,
    plan: &[usize],
    step: f64,
) -> Result<Vec<TrajectoryPoint>> {
    let (&first, _) = plan.split_first().ok_or(Error::EmptyPlan)?;
    if let Some(&bad) = plan.iter().find(|&&a| a >= layout.n_aisles()) {
        return Err(Error::UnknownAisle(bad));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidInput("step length must be positive".into()));
    }

    // Junction grid coordinates (band, lane).
    let (row, lane) = layout.aisle_cell(first);
    let mut junctions = vec![(row, lane), (row + 1, lane)];
    for &aisle in &plan[1..] {
        let (row, lane) = layout.aisle_cell(aisle);
        let &(band, cur_lane) = junctions.last().expect("non-empty");
        let cost = |b: usize| {
            (layout.lane_center(lane) - layout.lane_center(cur_lane)).abs()
                + (layout.band_center(b) - layout.band_center(band)).abs()
        };
        let (entry, exit) = if cost(row) <= cost(row + 1) {
            (row, row + 1)
        } else {
            (row + 1, row)
        };
        junctions.push((band, lane));
        junctions.push((entry, lane));
        junctions.push((exit, lane));
    }
    junctions.dedup();

    let waypoints: Vec<[f64; 2]> = junctions
        .iter()
        .map(|&(b, l)| layout.junction(b, l))
        .collect();
    sample_polyline(layout, &waypoints, step)
}

fn sample_polyline(
    layout: &WarehouseLayout,
    waypoints: &[[f64; 2]],
    step: f64,
) -> Result<Vec<TrajectoryPoint>> {
    let seg_len: Vec<f64> = waypoints
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .collect();
    let total: f64 = seg_len.iter().sum();
    let n = (total / step + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let (mut seg, mut seg_start) = (0usize, 0.0f64);
    for i in 0..n {
        let s = i as f64 * step;
        // Points exactly on a waypoint take the outgoing segment's heading.
        while seg + 1 < seg_len.len() && s >= seg_start + seg_len[seg] - 1e-9 {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let (a, b) = (waypoints[seg], waypoints[seg + 1]);
        let t = ((s - seg_start) / seg_len[seg]).clamp(0.0, 1.0);
        let x = a[0] + t * (b[0] - a[0]);
        let y = a[1] + t * (b[1] - a[1]);
        let theta = (b[1] - a[1]).atan2(b[0] - a[0]);
        let region = layout
            .region_at(x, y)
            .ok_or(Error::PoseNotFree { x, y })?;
        out.push(TrajectoryPoint {
            pose: Pose2D::new(x, y, theta),
            label: layout.regions[region].label,
            region,
            timestamp: s,
        });
    }
    Ok(out)
}

/// Default visiting order: sweep the first row, sweep the second row back,
/// then revisit the first row pairwise so its aisles are driven in their
/// original direction.
pub fn default_plan(layout: &WarehouseLayout) -> Vec<usize> {
    let lanes = layout.lanes();
    let mut plan: Vec<usize> = (0..lanes).map(|l| layout.aisle_id(0, l)).collect();
    if layout.rows > 1 {
        plan.extend((0..lanes).rev().map(|l| layout.aisle_id(1, l)));
    }
    let mut lane = 0;
    while lane < lanes {
        if lane + 1 < lanes {
            plan.push(layout.aisle_id(0, lane + 1));
        }
        plan.push(layout.aisle_id(0, lane));
        lane += 2;
    }
    plan
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Per-step odometry standard deviation (m, m, rad).
    pub odom_sigma: (f64, f64, f64),
    /// Per-step constant odometry bias (m, m, rad).
    pub drift_bias: (f64, f64, f64),
    pub label_error_rate: f64,
    pub scan_range_sigma: f64,
    pub rng_seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            odom_sigma: (0.01, 0.005, 0.005),
            drift_bias: (0.0, 0.0, 0.002),
            label_error_rate: 0.06,
            scan_range_sigma: 0.01,
            rng_seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        NoiseModel {
            odom_sigma: (0.0, 0.0, 0.0),
            drift_bias: (0.0, 0.0, 0.0),
            label_error_rate: 0.0,
            scan_range_sigma: 0.0,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.odom_sigma;
        let sigmas = [a, b, c, self.scan_range_sigma];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidInput("noise sigmas must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.label_error_rate) {
            return Err(Error::InvalidInput("label_error_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub beams: usize,
    pub max_range: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            beams: 180,
            max_range: 15.0,
        }
    }
}

/// A 2D range scan in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub points: Vec<[f64; 2]>,
    /// Beam index of each point.
    pub beam_ids: Vec<usize>,
    pub beams: usize,
    pub max_range: f64,
}

impl Scan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Casts `beams` rays from `pose`; beam k points at `2πk/beams` in the sensor
/// frame. Beams that hit nothing within `max_range` are dropped.
pub fn raycast(
    layout: &WarehouseLayout,
    pose: &Pose2D,
    beams: usize,
    max_range: f64,
    range_sigma: f64,
    rng: &mut impl Rng,
) -> Result<Scan> {
    if !layout.is_free(pose.x, pose.y) {
        return Err(Error::PoseNotFree { x: pose.x, y: pose.y });
    }
    let noise = Normal::new(0.0, range_sigma.max(0.0)).expect("finite sigma");
    let mut points = Vec::with_capacity(beams);
    let mut beam_ids = Vec::with_capacity(beams);
    for k in 0..beams {
        let local = TAU * k as f64 / beams as f64;
        let (dy, dx) = (pose.theta + local).sin_cos();
        let mut t = wall_distance(layout, pose.x, pose.y, dx, dy);
        for rack in &layout.racks {
            if let Some(hit) = rack.rect.ray_entry(pose.x, pose.y, dx, dy) {
                t = t.min(hit);
            }
        }
        if t > max_range {
            continue;
        }
        let r = if range_sigma > 0.0 {
            (t + noise.sample(rng)).clamp(0.0, max_range)
        } else {
            t
        };
        let (s, c) = local.sin_cos();
        points.push([r * c, r * s]);
        beam_ids.push(k);
    }
    Ok(Scan {
        points,
        beam_ids,
        beams,
        max_range,
    })
}

fn wall_distance(layout: &WarehouseLayout, x: f64, y: f64, dx: f64, dy: f64) -> f64 {
    let along = |o: f64, d: f64, hi: f64| {
        if d > 1e-15 {
            (hi - o) / d
        } else if d < -1e-15 {
            -o / d
        } else {
            f64::INFINITY
        }
    };
    along(x, dx, layout.width).min(along(y, dy, layout.height))
}

/// Output of [`corrupt`]: a dead-reckoned graph with noisy labels and the
/// scans taken at each true pose.
#[derive(Debug, Clone)]
pub struct CorruptedRun {
    pub graph: PoseGraph,
    pub scans: Vec<Scan>,
}

// Independent random streams, so e.g. changing the label error rate leaves
// the odometry noise untouched.
const STREAM_ODOMETRY: u64 = 1;
const STREAM_LABELS: u64 = 2;
const STREAM_SCANS: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn corrupt(
    layout: &WarehouseLayout,
    truth: &[TrajectoryPoint],
    noise: &NoiseModel,
    scan: &ScanConfig,
) -> Result<CorruptedRun> {
    noise.validate()?;
    if truth.len() < 2 {
        return Err(Error::InvalidInput("need at least two poses".into()));
    }

    let mut rng = stream(noise.rng_seed, STREAM_ODOMETRY);
    let (sx, sy, st) = noise.odom_sigma;
    let (bx, by, bt) = noise.drift_bias;
    let gauss = |rng: &mut ChaCha8Rng, sigma: f64| {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
        } else {
            0.0
        }
    };

    let mut graph = PoseGraph::new();
    let mut estimate = truth[0].pose;
    graph.add_node(estimate, None);
    let mut measurements = Vec::with_capacity(truth.len() - 1);
    for w in truth.windows(2) {
        let rel = w[0].pose.between(&w[1].pose);
        let nx = gauss(&mut rng, sx);
        let ny = gauss(&mut rng, sy);
        let nt = gauss(&mut rng, st);
        let m = Pose2D::new(rel.x + nx + bx, rel.y + ny + by, rel.theta + nt + bt);
        estimate = estimate.compose(&m);
        graph.add_node(estimate, None);
        measurements.push(m);
    }
    for (i, m) in measurements.into_iter().enumerate() {
        graph.add_edge(PGEdge::odometry(i, m))?;
    }

    let mut rng = stream(noise.rng_seed, STREAM_LABELS);
    for (id, p) in truth.iter().enumerate() {
        let mut label = p.label;
        if noise.label_error_rate > 0.0 && rng.random::<f64>() < noise.label_error_rate {
            let others: Vec<TopoLabel> =
                TopoLabel::ALL.into_iter().filter(|l| *l != label).collect();
            label = others[rng.random_range(0..others.len())];
        }
        graph.set_label(id, Some(label));
    }

    let mut rng = stream(noise.rng_seed, STREAM_SCANS);
    let scans = truth
        .iter()
        .map(|p| {
            raycast(
                layout,
                &p.pose,
                scan.beams,
                scan.max_range,
                noise.scan_range_sigma,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CorruptedRun { graph, scans })
}

/// Poses of a trajectory, for metrics.
pub fn truth_poses(truth: &[TrajectoryPoint]) -> Vec<Pose2D> {
    truth.iter().map(|p| p.pose).collect()
}

/// `node_id,x,y,theta,label`, with shortest round-trip floats.
pub fn write_truth_csv<W: std::io::Write>(truth: &[TrajectoryPoint], mut out: W) -> Result<()> {
    writeln!(out, "node_id,x,y,theta,label")?;
    for (k, p) in truth.iter().enumerate() {
        writeln!(out, "{k},{},{},{},{}", p.pose.x, p.pose.y, p.pose.theta, p.label)?;
    }
    Ok(())
}

/// Reads a truth file back. Node ids must run 0, 1, 2, ... in order.
pub fn read_truth_csv<R: std::io::Read>(input: R) -> Result<Vec<(Pose2D, TopoLabel)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header_ok = reader
        .headers()
        .map(|h| h.iter().collect::<Vec<_>>() == ["node_id", "x", "y", "theta", "label"])
        .unwrap_or(false);
    if !header_ok {
        return Err(Error::Parse { line: 1, message: "expected header `node_id,x,y,theta,label`".into() });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { line, message };
        if record.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", record.len())));
        }
        let id: usize = record[0].parse().map_err(|_| bad(format!("bad node id `{}`", &record[0])))?;
        if id != rows.len() {
            return Err(bad(format!("node id {id} out of order (expected {})", rows.len())));
        }
        let num = |k: usize| -> Result<f64> {
            record[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("bad number `{}`", &record[k])))
        };
        let pose = Pose2D::new(num(1)?, num(2)?, num(3)?);
        let label = record[4].parse::<TopoLabel>().map_err(bad)?;
        rows.push((pose, label));
    }
    Ok(rows)
}

/// `node_id,beam_index,x,y` with points in the sensor frame.
pub fn write_scans_csv<W: std::io::Write>(scans: &[Scan], mut out: W) -> Result<()> {
    writeln!(out, "node_id,beam_index,x,y")?;
    for (k, s) in scans.iter().enumerate() {
        for (p, b) in s.points.iter().zip(&s.beam_ids) {
            writeln!(out, "{k},{b},{},{}", p[0], p[1])?;
        }
    }
    Ok(())
}

/// Heading of a cardinal direction, for tests and plan helpers.
pub fn cardinal(quadrant: i32) -> f64 {
    match quadrant.rem_euclid(4) {
        0 => 0.0,
        1 => FRAC_PI_2,
        2 => PI,
        _ => -FRAC_PI_2,
    }
}
