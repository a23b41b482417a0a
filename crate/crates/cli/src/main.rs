mod config;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use manhattan_slam::experiment::{run_experiment, train_scorer, write_outputs, ExperimentConfig, MlpSettings};
use manhattan_slam::metrics::ate;
use manhattan_slam::optimizer::SolverConfig;
use manhattan_slam::pipeline::{Scenario, StageId};
use manhattan_slam::plot::{render_svg, Series};
use manhattan_slam::pose_graph::{read_graph, write_graph, GraphFormat};
use manhattan_slam::simulator::{read_truth_csv, write_scans_csv, write_truth_csv};
use manhattan_slam::{Pose2D, PoseGraph};

use config::{FileConfig, Mode};

#[derive(Parser)]
#[command(name = "manhattan-slam", version, about = "Pose-graph recovery for drifted odometry in warehouse-like maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run; writes graph.g2o, truth.csv and scans.csv
    Generate(GenerateArgs),
    /// Run pipeline stages over one or more seeds
    Run(RunArgs),
    /// ATE of an estimate against a truth file; writes ate_per_node.csv
    Evaluate(EvaluateArgs),
    /// Render graphs (and optionally truth) as an SVG overlay
    Plot(PlotArgs),
    /// Rewrite a graph file, optionally without labels and edge tags
    #[command(name = "export-g2o")]
    ExportG2o(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// Global seed; every random stream derives from it
    #[arg(long, env = "MANHATTAN_SLAM_SEED", default_value_t = 0)]
    seed: u64,
    /// Configuration file of `key = value` lines [default: none]
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory
    #[arg(long, default_value = "generated")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum StageSel {
    All,
    One(StageId),
}

fn parse_stage(s: &str) -> Result<StageSel, String> {
    if s == "all" {
        Ok(StageSel::All)
    } else {
        s.parse().map(StageSel::One)
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Stage to run: all, unoptimized, manhattan, manhattan-lc, dense-lc, feedback or incremental.
    /// `all` also runs the outlier sweep
    #[arg(long, default_value = "all", value_parser = parse_stage)]
    stage: StageSel,
    /// Number of seeds, starting at --seed
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// DCS kernel parameter
    #[arg(long, default_value_t = SolverConfig::default().dcs_phi, value_parser = positive)]
    phi: f64,
    /// Solve without the robust kernel [default: off]
    #[arg(long)]
    no_robust: bool,
    /// Solver used by the non-incremental stages
    #[arg(long, value_enum, default_value_t = Mode::Batch)]
    mode: Mode,
    /// Levenberg-Marquardt iteration cap
    #[arg(long, default_value_t = SolverConfig::default().max_iterations as u64, value_parser = clap::value_parser!(u64).range(1..))]
    max_iters: u64,
    /// Seed of the similarity network [default: value of --seed]
    #[arg(long)]
    mlp_seed: Option<u64>,
    /// Training epochs of the similarity network
    #[arg(long, default_value_t = MlpSettings::default().epochs)]
    mlp_epochs: usize,
    /// Embedding distance of high-confidence proposals
    #[arg(long, default_value_t = MlpSettings::default().tau_high, value_parser = positive)]
    tau_high: f64,
    /// Embedding distance of low-confidence proposals
    #[arg(long, default_value_t = MlpSettings::default().tau_low, value_parser = positive)]
    tau_low: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated graph [required]
    #[arg(long, value_name = "FILE")]
    est: PathBuf,
    /// Truth CSV (node_id,x,y,theta,label) [required]
    #[arg(long, value_name = "FILE")]
    truth: PathBuf,
    /// Directory for ate_per_node.csv
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Graph files, one polyline each
    #[arg(required = true, value_name = "GRAPH")]
    graphs: Vec<PathBuf>,
    /// Truth CSV; estimates are aligned to it when given [default: none]
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
    /// Output SVG
    #[arg(long, default_value = "trajectory.svg")]
    out: PathBuf,
    /// Plot title
    #[arg(long, default_value = "trajectories")]
    title: String,
}

#[derive(Args)]
struct ExportArgs {
    /// Graph to read [required]
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Graph to write [required]
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Drop labels and KIND tags for standard g2o tools [default: off]
    #[arg(long)]
    plain_g2o: bool,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<manhattan_slam::Error> for Failure {
    fn from(e: manhattan_slam::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn data_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn from_cli(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Defaults, then the config file, then the environment and flags.
fn resolve(common: &Common, m: &ArgMatches) -> CliResult<ExperimentConfig> {
    let file = match &common.config {
        Some(p) => FileConfig::load(p).map_err(Failure::Data)?,
        None => FileConfig::default(),
    };
    let mut cfg = ExperimentConfig::default();
    file.apply(&mut cfg);
    if matches!(m.value_source("seed"), Some(ValueSource::CommandLine | ValueSource::EnvVariable)) {
        cfg.base_seed = common.seed;
    }
    cfg.mlp.seed = file.mlp.seed.unwrap_or(cfg.base_seed);
    Ok(cfg)
}

fn read_graph_file(path: &Path) -> CliResult<PoseGraph> {
    let f = fs::File::open(path).map_err(|e| data_err(path, e))?;
    read_graph(BufReader::new(f)).map_err(|e| data_err(path, e))
}

fn read_truth_file(path: &Path) -> CliResult<Vec<Pose2D>> {
    let f = fs::File::open(path).map_err(|e| data_err(path, e))?;
    let rows = read_truth_csv(BufReader::new(f)).map_err(|e| data_err(path, e))?;
    Ok(rows.into_iter().map(|(p, _)| p).collect())
}

fn write_file(path: &Path, render: impl FnOnce(&mut Vec<u8>) -> manhattan_slam::Result<()>) -> CliResult {
    let mut buf = Vec::new();
    render(&mut buf)?;
    fs::write(path, buf).map_err(|e| data_err(path, e))
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| data_err(path, e))
}

fn cmd_generate(args: &GenerateArgs, m: &ArgMatches) -> CliResult {
    let cfg = resolve(&args.common, m)?;
    let sc = Scenario::simulate(&cfg.pipeline, cfg.base_seed)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("graph.g2o"), |w| write_graph(&sc.graph, GraphFormat::Tagged, w))?;
    write_file(&args.out.join("truth.csv"), |w| write_truth_csv(&sc.truth, w))?;
    write_file(&args.out.join("scans.csv"), |w| write_scans_csv(&sc.scans, w))?;
    println!("wrote {} poses to {}", sc.graph.len(), args.out.display());
    Ok(())
}

fn cmd_run(args: &RunArgs, m: &ArgMatches) -> CliResult {
    let mut cfg = resolve(&args.common, m)?;
    if from_cli(m, "seeds") {
        cfg.n_seeds = args.seeds as usize;
    }
    let solver = &mut cfg.pipeline.solver;
    if from_cli(m, "phi") {
        solver.dcs_phi = args.phi;
    }
    if args.no_robust {
        solver.robust_kinds.clear();
    }
    if from_cli(m, "mode") {
        solver.mode = args.mode.into();
    }
    if from_cli(m, "max_iters") {
        solver.max_iterations = args.max_iters as usize;
    }
    if let Some(s) = args.mlp_seed {
        cfg.mlp.seed = s;
    }
    if from_cli(m, "mlp_epochs") {
        cfg.mlp.epochs = args.mlp_epochs;
    }
    if from_cli(m, "tau_high") {
        cfg.mlp.tau_high = args.tau_high;
    }
    if from_cli(m, "tau_low") {
        cfg.mlp.tau_low = args.tau_low;
    }
    if let StageSel::One(s) = args.stage {
        cfg.stages = vec![s];
        cfg.fractions.clear();
    }
    if cfg.n_seeds == 0 {
        return Err(Failure::Data("seeds must be at least 1".into()));
    }

    let start = Instant::now();
    eprintln!("training similarity model (seed {}, {} epochs)", cfg.mlp.seed, cfg.mlp.epochs);
    let model = train_scorer(&cfg)?;
    eprintln!("running {} seed(s) from {}", cfg.n_seeds, cfg.base_seed);
    let outcomes = run_experiment(&cfg, &model)?;
    write_outputs(&outcomes, &model, &args.out).map_err(|e| data_err(&args.out, e))?;

    println!("{:<14} {:>12}", "stage", "mean ATE (m)");
    for (k, stage) in cfg.stages.iter().enumerate() {
        let mean = outcomes.iter().map(|o| o.stages[k].ate.rmse).sum::<f64>() / outcomes.len() as f64;
        println!("{:<14} {:>12.3}", stage.as_str(), mean);
    }
    eprintln!("done in {:.1} s; outputs in {}", start.elapsed().as_secs_f64(), args.out.display());
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult {
    let est = read_graph_file(&args.est)?;
    let truth = read_truth_file(&args.truth)?;
    if est.len() != truth.len() {
        return Err(Failure::Data(format!(
            "{} has {} poses but {} has {}",
            args.est.display(),
            est.len(),
            args.truth.display(),
            truth.len()
        )));
    }
    let result = ate(&est.poses(), &truth)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("ate_per_node.csv"), |w| {
        use std::io::Write;
        writeln!(w, "node_id,error")?;
        for (k, e) in result.errors.iter().enumerate() {
            writeln!(w, "{k},{e:.6}")?;
        }
        Ok(())
    })?;
    println!("rmse {:.3}", result.rmse);
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> CliResult {
    let truth = args.truth.as_deref().map(read_truth_file).transpose()?;
    let mut series = Vec::new();
    for path in &args.graphs {
        let g = read_graph_file(path)?;
        let poses = g.poses();
        let align = match &truth {
            Some(t) if t.len() == poses.len() => ate(&poses, t)?.alignment,
            Some(t) => {
                return Err(Failure::Data(format!(
                    "{} has {} poses but the truth file has {}",
                    path.display(),
                    poses.len(),
                    t.len()
                )))
            }
            None => Pose2D::IDENTITY,
        };
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        series.push(Series::new(name, poses.iter().map(|p| align.transform_point([p.x, p.y])).collect()));
    }
    if let Some(t) = truth {
        series.push(Series::new("ground truth", t.iter().map(|p| [p.x, p.y]).collect()));
    }
    let svg = render_svg(&args.title, &series)?;
    fs::write(&args.out, svg).map_err(|e| data_err(&args.out, e))
}

fn cmd_export(args: &ExportArgs) -> CliResult {
    let g = read_graph_file(&args.input)?;
    let format = if args.plain_g2o { GraphFormat::PlainG2o } else { GraphFormat::Tagged };
    write_file(&args.output, |w| write_graph(&g, format, w))
}

fn run() -> CliResult {
    let matches = Cli::command().try_get_matches().map_err(|e| {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            let _ = e.print();
            std::process::exit(0);
        }
        Failure::Usage(e.render().to_string())
    })?;
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::Usage(e.to_string()))?;
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, sub),
        Command::Run(a) => cmd_run(a, sub),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Plot(a) => cmd_plot(a),
        Command::ExportG2o(a) => cmd_export(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprint!("{msg}");
            if !msg.ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
