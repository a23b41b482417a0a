//! Run configuration file: flat `key = value` lines in TOML syntax, e.g.
//!
//! ```text
//! seed = 3
//! noise.drift_bias = [0.0, 0.0, 0.003]
//! solver.mode = "incremental"
//! ```
//!
//! Unknown keys are rejected. Values given here override built-in defaults
//! and are in turn overridden by command-line flags.

use std::path::Path;

use manhattan_slam::experiment::ExperimentConfig;
use manhattan_slam::optimizer::SolveMode;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    /// Aisle visiting order.
    pub plan: Option<Vec<usize>>,
    pub step: Option<f64>,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub scan: Scan,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub constraints: Constraints,
    #[serde(default)]
    pub icp: Icp,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub pipeline: Pipeline,
    #[serde(default)]
    pub mlp: Mlp,
    #[serde(default)]
    pub robustness: Robustness,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub width: Option<f64>,
    pub height: Option<f64>,
    pub n_racks: Option<usize>,
    pub aisle_width: Option<f64>,
    pub rack_size: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    pub odom_sigma: Option<[f64; 3]>,
    pub drift_bias: Option<[f64; 3]>,
    pub label_error_rate: Option<f64>,
    pub scan_range_sigma: Option<f64>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scan {
    pub beams: Option<usize>,
    pub max_range: Option<f64>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub window: Option<usize>,
    pub min_run: Option<usize>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    pub k: Option<usize>,
    pub rho: Option<f64>,
    pub neighborhood: Option<usize>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Icp {
    pub max_iterations: Option<usize>,
    pub tol: Option<f64>,
    pub max_correspondence: Option<f64>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Solver {
    pub max_iterations: Option<usize>,
    pub chi2_rel_tol: Option<f64>,
    pub damping: Option<f64>,
    pub phi: Option<f64>,
    pub robust: Option<bool>,
    pub mode: Option<Mode>,
    pub batch_period: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Batch,
    Incremental,
}

impl From<Mode> for SolveMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Batch => SolveMode::Batch,
            Mode::Incremental => SolveMode::Incremental,
        }
    }
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub max_cycles: Option<usize>,
    pub chi2_plateau: Option<f64>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Mlp {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub pairs: Option<usize>,
    pub tau_high: Option<f64>,
    pub tau_low: Option<f64>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Robustness {
    pub fractions: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            match line {
                Some(l) => format!("line {l}: {}", e.message()),
                None => e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Overwrites every field this file sets.
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        let p = &mut cfg.pipeline;
        set(&mut cfg.base_seed, &self.seed);
        set(&mut cfg.n_seeds, &self.seeds);
        if self.plan.is_some() {
            p.plan = self.plan.clone();
        }
        set(&mut p.step, &self.step);

        let l = &self.layout;
        set(&mut p.layout.width, &l.width);
        set(&mut p.layout.height, &l.height);
        set(&mut p.layout.n_racks, &l.n_racks);
        set(&mut p.layout.aisle_width, &l.aisle_width);
        if let Some([d, len]) = l.rack_size {
            p.layout.rack_size = (d, len);
        }

        let n = &self.noise;
        if let Some([a, b, c]) = n.odom_sigma {
            p.noise.odom_sigma = (a, b, c);
        }
        if let Some([a, b, c]) = n.drift_bias {
            p.noise.drift_bias = (a, b, c);
        }
        set(&mut p.noise.label_error_rate, &n.label_error_rate);
        set(&mut p.noise.scan_range_sigma, &n.scan_range_sigma);

        set(&mut p.scan.beams, &self.scan.beams);
        set(&mut p.scan.max_range, &self.scan.max_range);
        set(&mut p.smoothing_window, &self.topology.window);
        set(&mut p.min_run, &self.topology.min_run);

        let c = &self.constraints;
        set(&mut p.constraints.k, &c.k);
        set(&mut p.constraints.rho, &c.rho);
        set(&mut p.constraints.neighborhood, &c.neighborhood);
        let i = &self.icp;
        set(&mut p.constraints.icp.max_iterations, &i.max_iterations);
        set(&mut p.constraints.icp.tol, &i.tol);
        set(&mut p.constraints.icp.max_correspondence, &i.max_correspondence);

        let s = &self.solver;
        set(&mut p.solver.max_iterations, &s.max_iterations);
        set(&mut p.solver.chi2_rel_tol, &s.chi2_rel_tol);
        set(&mut p.solver.damping, &s.damping);
        set(&mut p.solver.dcs_phi, &s.phi);
        if s.robust == Some(false) {
            p.solver.robust_kinds.clear();
        }
        if let Some(m) = s.mode {
            p.solver.mode = m.into();
        }
        set(&mut p.solver.incremental_batch_period, &s.batch_period);

        set(&mut p.max_cycles, &self.pipeline.max_cycles);
        set(&mut p.chi2_plateau, &self.pipeline.chi2_plateau);

        let m = &self.mlp;
        set(&mut cfg.mlp.epochs, &m.epochs);
        set(&mut cfg.mlp.learning_rate, &m.learning_rate);
        set(&mut cfg.mlp.batch_size, &m.batch_size);
        set(&mut cfg.mlp.pairs, &m.pairs);
        set(&mut cfg.mlp.tau_high, &m.tau_high);
        set(&mut cfg.mlp.tau_low, &m.tau_low);
        set(&mut cfg.fractions, &self.robustness.fractions);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use manhattan_slam::ConstraintKind;

    #[test]
    fn dotted_keys_fill_sections() {
        let text = "seed = 4\nnoise.drift_bias = [0.0, 0.0, 0.003] # heavier\nsolver.mode = \"incremental\"\nsolver.robust = false\nmlp.seed = 9\n";
        let f = FileConfig::parse(text).unwrap();
        let mut cfg = ExperimentConfig::default();
        f.apply(&mut cfg);
        assert_eq!(cfg.base_seed, 4);
        assert_eq!(cfg.pipeline.noise.drift_bias, (0.0, 0.0, 0.003));
        assert_eq!(cfg.pipeline.solver.mode, SolveMode::Incremental);
        assert!(cfg.pipeline.solver.robust_kinds.is_empty());
        assert_eq!(f.mlp.seed, Some(9));
    }

    #[test]
    fn untouched_fields_keep_defaults() {
        let mut cfg = ExperimentConfig::default();
        FileConfig::parse("# nothing\n").unwrap().apply(&mut cfg);
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(
            cfg.pipeline.solver.robust_kinds,
            vec![ConstraintKind::LoopClosure, ConstraintKind::Manhattan]
        );
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let err = FileConfig::parse("seed = 1\nsolver.lambda = 3\n").unwrap_err();
        assert!(err.starts_with("line 2:"), "{err}");
        assert!(err.contains("lambda"), "{err}");
        assert!(FileConfig::parse("bogus = 1\n").is_err());
        assert!(FileConfig::parse("solver.mode = \"sideways\"\n").is_err());
    }
}
