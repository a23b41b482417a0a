//! Multi-seed runs: train a scorer, run the selected stages for every seed in
//! parallel, then write all outputs from one place.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::constraints::LoopConstraints;
use crate::error::{Error, Result};
use crate::pipeline::{
    robustness_sweep, write_feedback_csv, write_ladder_csv, write_regions_csv, write_report_csv,
    write_robustness_csv, LadderRow, Pipeline, PipelineConfig, RobustnessRow, Scenario, StageId, StageOutput,
};
use crate::plot::{render_svg, Series};
use crate::pose_graph::{write_graph, GraphFormat};
use crate::similarity::{feature_scale, train_default_model, SiameseModel, SynthSpec, TrainConfig};
use crate::simulator::write_truth_csv;
use crate::topology::TopologicalGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSettings {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Synthetic training pairs.
    pub pairs: usize,
    pub tau_high: f64,
    pub tau_low: f64,
}

impl Default for MlpSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        MlpSettings {
            seed: 0,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            pairs: 2000,
            tau_high: 0.5,
            tau_low: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub base_seed: u64,
    pub n_seeds: usize,
    pub stages: Vec<StageId>,
    pub mlp: MlpSettings,
    /// Outlier fractions for the robustness sweep; empty skips it.
    pub fractions: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            pipeline: PipelineConfig::default(),
            base_seed: 0,
            n_seeds: 1,
            stages: StageId::ALL.to_vec(),
            mlp: MlpSettings::default(),
            fractions: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

impl ExperimentConfig {
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_seeds as u64).map(move |k| self.base_seed + k)
    }
}

/// Trains the pair scorer, with training geometry matched to the layout
/// extent.
pub fn train_scorer(cfg: &ExperimentConfig) -> Result<SiameseModel> {
    let layout = &cfg.pipeline.layout;
    let extent = layout.width.max(layout.height);
    let spec = SynthSpec { extent, scale: feature_scale(layout.width, layout.height), ..SynthSpec::default() };
    let m = &cfg.mlp;
    let train_cfg = TrainConfig {
        epochs: m.epochs,
        learning_rate: m.learning_rate,
        batch_size: m.batch_size,
        seed: m.seed,
    };
    let (model, _) = train_default_model(&spec, m.pairs, &train_cfg)?;
    model.with_thresholds(m.tau_high, m.tau_low)
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub scenario: Scenario,
    pub topological: TopologicalGraph,
    pub stages: Vec<StageOutput>,
    pub robustness: Vec<RobustnessRow>,
}

pub fn run_seed(cfg: &ExperimentConfig, scorer: &SiameseModel, seed: u64) -> Result<SeedOutcome> {
    let scenario = Scenario::simulate(&cfg.pipeline, seed)?;
    let mut pipeline = Pipeline::new(&cfg.pipeline, scorer, &scenario)?;
    let stages = cfg.stages.iter().map(|&s| pipeline.run_stage(s)).collect::<Result<Vec<_>>>()?;
    let topological = pipeline.topological().clone();
    drop(pipeline);
    let robustness = if cfg.fractions.is_empty() {
        Vec::new()
    } else {
        robustness_sweep(&scenario, &cfg.fractions, &cfg.pipeline)?
    };
    Ok(SeedOutcome { scenario, topological, stages, robustness })
}

/// Seeds run in parallel; results come back in seed order.
pub fn run_experiment(cfg: &ExperimentConfig, scorer: &SiameseModel) -> Result<Vec<SeedOutcome>> {
    if cfg.stages.is_empty() {
        return Err(Error::InvalidInput("no stages selected".into()));
    }
    let seeds: Vec<u64> = cfg.seeds().collect();
    seeds.par_iter().map(|&s| run_seed(cfg, scorer, s)).collect()
}

/// Renders into memory, then writes the file in one go.
fn save(path: &Path, render: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    render(&mut buf)?;
    fs::write(path, buf).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Estimate, unoptimized and truth trajectories with both estimates aligned
/// to truth.
pub fn trajectory_svg(outcome: &SeedOutcome) -> Result<Option<String>> {
    let Some(best) = outcome.stages.last() else {
        return Ok(None);
    };
    let aligned = |o: &StageOutput| -> Vec<[f64; 2]> {
        o.graph.poses().iter().map(|p| o.ate.alignment.transform_point([p.x, p.y])).collect()
    };
    let truth: Vec<[f64; 2]> = outcome.scenario.truth.iter().map(|t| [t.pose.x, t.pose.y]).collect();
    let mut series = Vec::new();
    if let Some(raw) = outcome.stages.iter().find(|o| o.stage == StageId::Unoptimized) {
        if raw.stage != best.stage {
            series.push(Series::new(format!("unoptimized (ATE {:.3} m)", raw.ate.rmse), aligned(raw)));
        }
    }
    series.push(Series::new(format!("{} (ATE {:.3} m)", best.stage, best.ate.rmse), aligned(best)));
    series.push(Series::new("ground truth", truth));
    render_svg(&format!("seed {}", outcome.scenario.seed), &series).map(Some)
}

/// Writes every output file under `out`. Called once, after all seeds finish.
pub fn write_outputs(outcomes: &[SeedOutcome], model: &SiameseModel, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut ladder = Vec::new();
    let mut feedback = Vec::new();
    let mut robustness = Vec::new();
    let mut reports = Vec::new();
    for o in outcomes {
        let seed = o.scenario.seed;
        for s in &o.stages {
            ladder.push(LadderRow { stage: s.stage, seed, ate: s.ate.rmse });
            feedback.extend(s.diagnostics.cycles.iter().map(|c| (seed, s.stage, *c)));
            if let Some(r) = &s.diagnostics.report {
                reports.push((seed, s.stage, r));
            }
        }
        robustness.extend_from_slice(&o.robustness);
    }
    save(&out.join("ladder.csv"), |w| write_ladder_csv(&ladder, w))?;
    save(&out.join("feedback.csv"), |w| write_feedback_csv(&feedback, w))?;
    save(&out.join("report.csv"), |w| write_report_csv(&reports, w))?;
    if !robustness.is_empty() {
        save(&out.join("robustness.csv"), |w| write_robustness_csv(&robustness, w))?;
    }
    save(&out.join("model.txt"), |w| model.write_checkpoint(w))?;

    for o in outcomes {
        let dir = seed_dir(out, o.scenario.seed);
        fs::create_dir_all(&dir)?;
        save(&dir.join("truth.csv"), |w| write_truth_csv(&o.scenario.truth, w))?;
        save(&dir.join("regions.csv"), |w| write_regions_csv(&o.topological, w))?;
        for s in &o.stages {
            save(&dir.join(format!("{}.g2o", s.stage)), |w| write_graph(&s.graph, GraphFormat::Tagged, w))?;
        }
        if let Some(s) = o.stages.iter().rev().find(|s| s.diagnostics.mg.is_some()) {
            let mg = s.diagnostics.mg.as_ref().expect("checked");
            save(&dir.join("manhattan.csv"), |w| mg.write_csv(w))?;
            let rejected = LoopConstraints { rejected: s.diagnostics.rejected.clone(), ..LoopConstraints::default() };
            save(&dir.join("rejected_loops.csv"), |w| rejected.write_rejected_csv(w))?;
        }
        if let Some(svg) = trajectory_svg(o)? {
            save(&dir.join("trajectory.svg"), |w| {
                w.extend_from_slice(svg.as_bytes());
                Ok(())
            })?;
        }
    }
    Ok(())
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}
