//! End-to-end runs: simulation, the six-stage ablation ladder, the feedback
//! loop and the outlier sweep.

mod report;
mod robustness;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

pub use report::{
    write_feedback_csv, write_ladder_csv, write_regions_csv, write_report_csv, write_robustness_csv, LadderRow,
};
pub use robustness::{robustness_sweep, true_loop_edges, RobustnessRow};

use crate::constraints::{build_manhattan_constraints, ConstraintConfig, LoopCandidate};
use crate::error::{Error, Result};
use crate::manhattan::{build_manhattan, ManhattanGraph};
use crate::metrics::{ate, AteResult};
use crate::optimizer::{solve_batch, solve_incremental, SolveMode, SolveReport, SolverConfig};
use crate::pose_graph::{ConstraintKind, PGEdge, Pose2D, PoseGraph};
use crate::similarity::{feature_scale, propose, Band, PairScorer, ProposalPair};
use crate::simulator::{
    corrupt, default_plan, generate_layout, generate_trajectory, truth_poses, LayoutParams, NoiseModel, Scan,
    ScanConfig, TrajectoryPoint, WarehouseLayout, DEFAULT_STEP,
};
use crate::topology::{group, smooth_labels, TopologicalGraph, DEFAULT_MIN_RUN, DEFAULT_WINDOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StageId {
    Unoptimized,
    ManhattanOnly,
    ManhattanPlusLC,
    DensePlusLC,
    FeedbackLoop,
    IncrementalFeedback,
}

impl StageId {
    pub const ALL: [StageId; 6] = [
        StageId::Unoptimized,
        StageId::ManhattanOnly,
        StageId::ManhattanPlusLC,
        StageId::DensePlusLC,
        StageId::FeedbackLoop,
        StageId::IncrementalFeedback,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StageId::Unoptimized => "unoptimized",
            StageId::ManhattanOnly => "manhattan",
            StageId::ManhattanPlusLC => "manhattan-lc",
            StageId::DensePlusLC => "dense-lc",
            StageId::FeedbackLoop => "feedback",
            StageId::IncrementalFeedback => "incremental",
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        StageId::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = StageId::ALL.iter().map(|st| st.as_str()).collect();
                format!("unknown stage `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub layout: LayoutParams,
    /// Aisle visiting order; `None` uses [`default_plan`].
    pub plan: Option<Vec<usize>>,
    pub step: f64,
    pub noise: NoiseModel,
    pub scan: ScanConfig,
    pub smoothing_window: usize,
    pub min_run: usize,
    pub constraints: ConstraintConfig,
    pub solver: SolverConfig,
    pub max_cycles: usize,
    /// Feedback stops once chi² changes by less than this (relative).
    pub chi2_plateau: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            layout: LayoutParams::default(),
            plan: None,
            step: DEFAULT_STEP,
            noise: NoiseModel::default(),
            scan: ScanConfig::default(),
            smoothing_window: DEFAULT_WINDOW,
            min_run: DEFAULT_MIN_RUN,
            constraints: ConstraintConfig::default(),
            // Stages that reach the same optimum should report the same ATE
            // to well below a micrometre.
            solver: SolverConfig { chi2_rel_tol: 1e-10, ..SolverConfig::default() },
            max_cycles: 10,
            chi2_plateau: 1e-4,
        }
    }
}

/// One simulated run. The layout and every noise stream are seeded from
/// `seed`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub layout: WarehouseLayout,
    pub truth: Vec<TrajectoryPoint>,
    /// Dead-reckoned, odometry-only graph with noisy labels.
    pub graph: PoseGraph,
    pub scans: Vec<Scan>,
}

impl Scenario {
    pub fn simulate(cfg: &PipelineConfig, seed: u64) -> Result<Self> {
        let layout = generate_layout(&LayoutParams { seed, ..cfg.layout.clone() })?;
        let plan = cfg.plan.clone().unwrap_or_else(|| default_plan(&layout));
        let truth = generate_trajectory(&layout, &plan, cfg.step)?;
        let noise = NoiseModel { rng_seed: seed, ..cfg.noise.clone() };
        let run = corrupt(&layout, &truth, &noise, &cfg.scan)?;
        Ok(Scenario { seed, layout, truth, graph: run.graph, scans: run.scans })
    }

    pub fn truth_poses(&self) -> Vec<Pose2D> {
        truth_poses(&self.truth)
    }

    pub fn feature_scale(&self) -> f64 {
        feature_scale(self.layout.width, self.layout.height)
    }

    /// Most frequent true region over a node range (lowest id on ties).
    pub fn majority_region(&self, nodes: std::ops::RangeInclusive<usize>) -> usize {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for n in nodes {
            *counts.entry(self.truth[n].region).or_default() += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(r, _)| r)
            .expect("non-empty range")
    }

    /// Whether a proposal joins two visits of the same true region.
    pub fn is_true_pair(&self, mg: &ManhattanGraph, p: &ProposalPair) -> bool {
        let a = &mg.meta_nodes[p.meta_i];
        let b = &mg.meta_nodes[p.meta_j];
        self.majority_region(a.collection()) == self.majority_region(b.collection())
    }
}

/// Smoothed labels grouped into regions.
pub fn topological_graph(graph: &PoseGraph, cfg: &PipelineConfig) -> Result<TopologicalGraph> {
    let labels = graph
        .labels()
        .ok_or_else(|| Error::InvalidInput("every node needs a topological label".into()))?;
    group(&smooth_labels(&labels, cfg.smoothing_window)?, cfg.min_run)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    /// 1-based.
    pub cycle: usize,
    pub proposals: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub loops_accepted: usize,
    pub loops_rejected: usize,
    pub manhattan_edges: usize,
    /// Objective after this cycle's solve (the previous value when the
    /// cycle only detected a fixpoint).
    pub chi2: f64,
    pub ate: f64,
    /// False for the cycle that found the proposal set unchanged.
    pub solved: bool,
}

impl CycleRecord {
    /// Fraction of proposals that are true; 0 with no proposals.
    pub fn accuracy(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.true_positives as f64 / self.proposals as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Fixpoint,
    Plateau,
    MaxCycles,
}

#[derive(Debug, Clone)]
pub struct FeedbackRun {
    pub history: Vec<CycleRecord>,
    pub graph: PoseGraph,
    pub mg: ManhattanGraph,
    pub proposals: Vec<ProposalPair>,
    /// Graph after the first solve.
    pub first: PoseGraph,
    pub stop: Convergence,
    /// Rejected loop candidates of the last solved cycle.
    pub rejected: Vec<LoopCandidate>,
    pub report: SolveReport,
}

impl FeedbackRun {
    pub fn solves(&self) -> usize {
        self.history.iter().filter(|c| c.solved).count()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub proposals: usize,
    pub high_confidence: usize,
    pub true_positives: usize,
    pub loops_accepted: usize,
    pub loops_rejected: usize,
    pub manhattan_edges: usize,
    pub cycles: Vec<CycleRecord>,
    pub stop: Option<Convergence>,
    pub rejected: Vec<LoopCandidate>,
    pub mg: Option<ManhattanGraph>,
    /// Report of the last solve.
    pub report: Option<SolveReport>,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub stage: StageId,
    pub graph: PoseGraph,
    pub ate: AteResult,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bands {
    High,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edges {
    ManhattanOnly,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Solver {
    Batch,
    Incremental,
}

struct Built {
    mg: ManhattanGraph,
    proposals: Vec<ProposalPair>,
    edges: Vec<PGEdge>,
    accepted: usize,
    rejected: Vec<LoopCandidate>,
    manhattan: usize,
}

/// Runs stages for one scenario with a fixed pair scorer.
pub struct Pipeline<'a> {
    cfg: &'a PipelineConfig,
    scorer: &'a dyn PairScorer,
    scenario: &'a Scenario,
    tg: TopologicalGraph,
    truth: Vec<Pose2D>,
    scale: f64,
    icp_cache: HashMap<(usize, usize, bool), LoopCandidate>,
}

type ProposalKey = BTreeSet<(usize, usize, bool)>;

fn proposal_key(props: &[ProposalPair]) -> ProposalKey {
    props.iter().map(|p| (p.meta_i, p.meta_j, p.reversed)).collect()
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a PipelineConfig, scorer: &'a dyn PairScorer, scenario: &'a Scenario) -> Result<Self> {
        cfg.solver.validate()?;
        Ok(Pipeline {
            cfg,
            scorer,
            scenario,
            tg: topological_graph(&scenario.graph, cfg)?,
            truth: scenario.truth_poses(),
            scale: scenario.feature_scale(),
            icp_cache: HashMap::new(),
        })
    }

    pub fn topological(&self) -> &TopologicalGraph {
        &self.tg
    }

    pub fn ate_of(&self, graph: &PoseGraph) -> Result<AteResult> {
        ate(&graph.poses(), &self.truth)
    }

    /// ICP over every sampled pair, reusing earlier results for pairs seen
    /// in a previous cycle.
    fn loops(&mut self, proposals: &[ProposalPair], mg: &ManhattanGraph) -> Vec<LoopCandidate> {
        let cc = &self.cfg.constraints;
        let mut fresh = Vec::new();
        let mut queued = BTreeSet::new();
        let mut keys = Vec::new();
        for (p, prop) in proposals.iter().enumerate() {
            for (i, j, _) in crate::constraints::sample_loop_pairs(prop, mg, cc.k) {
                let key = (i, j, prop.reversed);
                keys.push((p, key));
                if !self.icp_cache.contains_key(&key) && queued.insert(key) {
                    fresh.push((p, key));
                }
            }
        }
        for (key, c) in self.run_icp(&fresh) {
            self.icp_cache.insert(key, c);
        }
        let mut seen = BTreeSet::new();
        keys.into_iter()
            .filter(|(_, key)| seen.insert(*key))
            .map(|(p, key)| LoopCandidate { source_proposal: p, ..self.icp_cache[&key].clone() })
            .collect()
    }

    fn run_icp(&self, jobs: &[(usize, (usize, usize, bool))]) -> Vec<((usize, usize, bool), LoopCandidate)> {
        use rayon::prelude::*;
        let cc = &self.cfg.constraints;
        let scans = &self.scenario.scans;
        jobs.par_iter()
            .map(|&(p, (i, j, reversed))| {
                let guess = if reversed { Pose2D::new(0.0, 0.0, std::f64::consts::PI) } else { Pose2D::IDENTITY };
                let c = match crate::constraints::icp(&scans[i], &scans[j], guess, &cc.icp) {
                    Ok(r) => LoopCandidate {
                        pg_i: i,
                        pg_j: j,
                        measurement: r.transform,
                        residual: r.residual,
                        converged: r.converged,
                        source_proposal: p,
                    },
                    Err(_) => LoopCandidate {
                        pg_i: i,
                        pg_j: j,
                        measurement: guess,
                        residual: f64::INFINITY,
                        converged: false,
                        source_proposal: p,
                    },
                };
                ((i, j, reversed), c)
            })
            .collect()
    }

    fn build(&mut self, estimate: &PoseGraph, bands: Bands, kinds: Edges) -> Result<Built> {
        let mg = build_manhattan(estimate, &self.tg)?;
        let mut proposals = propose(self.scorer, &mg, self.scale);
        if bands == Bands::High {
            proposals.retain(|p| p.band == Band::HighConfidence);
        }
        let mut edges = Vec::new();
        let mut accepted = 0;
        let mut rejected = Vec::new();
        let mut verified = vec![false; proposals.len()];
        if kinds == Edges::Both {
            let rho = self.cfg.constraints.rho;
            for c in self.loops(&proposals, &mg) {
                if c.converged && c.residual <= rho && c.pg_i != c.pg_j {
                    verified[c.source_proposal] = true;
                    edges.push(PGEdge::new(c.pg_i, c.pg_j, c.measurement, ConstraintKind::LoopClosure));
                    accepted += 1;
                } else {
                    rejected.push(c);
                }
            }
        }
        // Low-confidence pairs only contribute Manhattan edges once ICP
        // has confirmed at least one of their loop pairs.
        let manhattan_props: Vec<ProposalPair> = proposals
            .iter()
            .zip(&verified)
            .filter(|(p, v)| p.band == Band::HighConfidence || **v)
            .map(|(p, _)| *p)
            .collect();
        let manhattan = build_manhattan_constraints(&manhattan_props, &mg, self.cfg.constraints.neighborhood);
        let n_manhattan = manhattan.len();
        edges.extend(manhattan);
        Ok(Built { mg, proposals, edges, accepted, rejected, manhattan: n_manhattan })
    }

    fn solve(&self, init: &PoseGraph, edges: &[PGEdge], solver: Solver) -> Result<(PoseGraph, SolveReport)> {
        let mut g = self.scenario.graph.odometry_only();
        g.set_poses(&init.poses());
        for e in edges {
            g.add_edge(e.clone())?;
        }
        match solver {
            Solver::Batch => solve_batch(&g, &self.cfg.solver),
            Solver::Incremental => {
                // A constraint arrives once the later region has been driven
                // to its end.
                let tg = &self.tg;
                let arrival = |e: &PGEdge| {
                    let last = e.from.max(e.to);
                    tg.region_of(last).map_or(last, |r| tg.regions[r].pg_end)
                };
                let (out, reports) = solve_incremental(&g, arrival, &self.cfg.solver)?;
                let report = reports.last().cloned().ok_or(Error::Singular)?;
                Ok((out, report))
            }
        }
    }

    /// The configured solver mode, used by every stage except the
    /// incremental one.
    fn default_solver(&self) -> Solver {
        match self.cfg.solver.mode {
            SolveMode::Batch => Solver::Batch,
            SolveMode::Incremental => Solver::Incremental,
        }
    }

    fn single(&mut self, stage: StageId, bands: Bands, kinds: Edges) -> Result<StageOutput> {
        let dr = self.scenario.graph.clone();
        let built = self.build(&dr, bands, kinds)?;
        let (graph, report) = self.solve(&dr, &built.edges, self.default_solver())?;
        let diagnostics = Diagnostics {
            proposals: built.proposals.len(),
            high_confidence: built.proposals.iter().filter(|p| p.band == Band::HighConfidence).count(),
            true_positives: built.proposals.iter().filter(|p| self.scenario.is_true_pair(&built.mg, p)).count(),
            loops_accepted: built.accepted,
            loops_rejected: built.rejected.len(),
            manhattan_edges: built.manhattan,
            rejected: built.rejected,
            mg: Some(built.mg),
            report: Some(report),
            ..Diagnostics::default()
        };
        Ok(StageOutput { stage, ate: self.ate_of(&graph)?, graph, diagnostics })
    }

    /// Feedback cycles starting from the dead-reckoned graph.
    pub fn run_feedback(&mut self, incremental: bool) -> Result<FeedbackRun> {
        let solver = if incremental { Solver::Incremental } else { self.default_solver() };
        let max_cycles = self.cfg.max_cycles.max(1);
        let mut current = self.scenario.graph.clone();
        let mut history: Vec<CycleRecord> = Vec::new();
        let mut previous: Option<ProposalKey> = None;
        let mut first: Option<PoseGraph> = None;
        let mut last_mg = None;
        let mut last_props = Vec::new();
        let mut rejected = Vec::new();
        let mut stop = Convergence::MaxCycles;
        let mut chi2_prev: Option<f64> = None;
        let mut last_report = None;
        for cycle in 1..=max_cycles {
            let built = self.build(&current, Bands::Dense, Edges::Both)?;
            let tp = built.proposals.iter().filter(|p| self.scenario.is_true_pair(&built.mg, p)).count();
            let key = proposal_key(&built.proposals);
            let mut record = CycleRecord {
                cycle,
                proposals: built.proposals.len(),
                true_positives: tp,
                false_positives: built.proposals.len() - tp,
                loops_accepted: built.accepted,
                loops_rejected: built.rejected.len(),
                manhattan_edges: built.manhattan,
                chi2: chi2_prev.unwrap_or(f64::NAN),
                ate: self.ate_of(&current)?.rmse,
                solved: false,
            };
            if previous.as_ref() == Some(&key) {
                history.push(record);
                stop = Convergence::Fixpoint;
                break;
            }
            let (solved, report) = self.solve(&current, &built.edges, solver)?;
            let chi2 = report.final_chi2;
            last_report = Some(report);
            record.chi2 = chi2;
            record.ate = self.ate_of(&solved)?.rmse;
            record.solved = true;
            history.push(record);
            current = solved;
            if first.is_none() {
                first = Some(current.clone());
            }
            last_mg = Some(built.mg);
            last_props = built.proposals;
            rejected = built.rejected;
            previous = Some(key);
            if let Some(prev) = chi2_prev {
                if (prev - chi2).abs() <= self.cfg.chi2_plateau * prev.abs().max(f64::MIN_POSITIVE) {
                    stop = Convergence::Plateau;
                    break;
                }
            }
            chi2_prev = Some(chi2);
        }
        Ok(FeedbackRun {
            history,
            first: first.expect("at least one cycle solves"),
            graph: current,
            mg: last_mg.expect("at least one cycle solves"),
            proposals: last_props,
            stop,
            rejected,
            report: last_report.expect("at least one cycle solves"),
        })
    }

    fn feedback_stage(&mut self, stage: StageId, incremental: bool) -> Result<StageOutput> {
        let run = self.run_feedback(incremental)?;
        let last = *run.history.iter().rev().find(|c| c.solved).expect("solved cycle");
        let diagnostics = Diagnostics {
            proposals: last.proposals,
            high_confidence: run.proposals.iter().filter(|p| p.band == Band::HighConfidence).count(),
            true_positives: last.true_positives,
            loops_accepted: last.loops_accepted,
            loops_rejected: last.loops_rejected,
            manhattan_edges: last.manhattan_edges,
            cycles: run.history.clone(),
            stop: Some(run.stop),
            rejected: run.rejected,
            mg: Some(run.mg),
            report: Some(run.report),
        };
        Ok(StageOutput { stage, ate: self.ate_of(&run.graph)?, graph: run.graph, diagnostics })
    }

    pub fn run_stage(&mut self, stage: StageId) -> Result<StageOutput> {
        match stage {
            StageId::Unoptimized => {
                let graph = self.scenario.graph.clone();
                Ok(StageOutput { stage, ate: self.ate_of(&graph)?, graph, diagnostics: Diagnostics::default() })
            }
            StageId::ManhattanOnly => self.single(stage, Bands::High, Edges::ManhattanOnly),
            StageId::ManhattanPlusLC => self.single(stage, Bands::High, Edges::Both),
            StageId::DensePlusLC => self.single(stage, Bands::Dense, Edges::Both),
            StageId::FeedbackLoop => self.feedback_stage(stage, false),
            StageId::IncrementalFeedback => self.feedback_stage(stage, true),
        }
    }

    /// Every stage in order.
    pub fn run_ladder(&mut self) -> Result<Vec<StageOutput>> {
        StageId::ALL.into_iter().map(|s| self.run_stage(s)).collect()
    }
}
