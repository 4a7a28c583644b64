#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use cbfnav::io::{parse_scenario, write_trajectory_csv, RunSummary};
use cbfnav::runner::{
    campaign, liveness_sweep, with_workers, CampaignConfig, CampaignSummary, CellOutcome, NoiseSelection, SweepBounds,
};
use cbfnav::{run, GoalPosition, Integrator, Obstacle, Scenario, TerminalStatus, TrajectoryRecord, WorldPose};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

const EXIT_INPUT: u8 = 1;
const EXIT_COLLISION: u8 = 2;
const EXIT_OTHER: u8 = 3;

/// Reactive CLF-CBF navigation simulator.
#[derive(Debug, Parser)]
#[command(name = "cbfnav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario and write its trajectory.
    Run(RunArgs),
    /// Sweep a single obstacle over a grid of placements.
    Sweep(SweepArgs),
    /// Run start/goal pairs on randomly generated maps.
    Campaign(CampaignArgs),
    /// Collinear scenario with and without equilibrium breaking.
    EqDemo(EqDemoArgs),
}

/// Flags that override the corresponding `runner` entries of the scenario file.
#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_integrator)]
    integrator: Option<Integrator>,
    /// Turn-rate offset applied at induced equilibria; 0 disables breaking.
    #[arg(long)]
    epsilon: Option<f64>,
}

impl Overrides {
    fn apply(&self, sc: &mut Scenario) {
        if let Some(seed) = self.seed {
            sc.runner.seed = seed;
        }
        if let Some(integrator) = self.integrator {
            sc.runner.integrator = integrator;
        }
        if let Some(eps) = self.epsilon {
            sc.runner.epsilon_break = eps;
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Trajectory CSV.
    #[arg(long)]
    out: PathBuf,
    /// Summary JSON; defaults to the CSV path with a `.summary.json` extension.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Base scenario; its obstacles are replaced by the swept one.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    spacing: f64,
    /// Grid CSV with columns x_o, y_o, status.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = -16.0, allow_negative_numbers = true)]
    x_min: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    x_max: f64,
    #[arg(long, default_value_t = -16.0, allow_negative_numbers = true)]
    y_min: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    y_max: f64,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseArg {
    None,
    Split,
    All,
}

impl From<NoiseArg> for NoiseSelection {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::None => NoiseSelection::None,
            NoiseArg::Split => NoiseSelection::Split,
            NoiseArg::All => NoiseSelection::All,
        }
    }
}

#[derive(Debug, Args)]
struct CampaignArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    maps: usize,
    /// Start/goal pairs per map.
    #[arg(long, default_value_t = 6)]
    runs: usize,
    /// Which maps perceive obstacles through bounded noise.
    #[arg(long, value_enum, default_value_t = NoiseArg::Split)]
    noisy: NoiseArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_integrator, default_value = "alip")]
    integrator: Integrator,
    /// Obstacles per map.
    #[arg(long, default_value_t = 20)]
    obstacles: usize,
}

#[derive(Debug, Args)]
struct EqDemoArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Offset used for the breaking run.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
}

fn parse_integrator(s: &str) -> Result<Integrator, String> {
    s.parse().map_err(|e: cbfnav::NavError| e.to_string())
}

fn status_code(status: TerminalStatus) -> u8 {
    match status {
        TerminalStatus::ReachedGoal => 0,
        TerminalStatus::Collision => EXIT_COLLISION,
        _ => EXIT_OTHER,
    }
}

fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("scenario {}", path.display()))
}

fn write_csv(path: &Path, rec: &TrajectoryRecord) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_trajectory_csv(rec, BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn default_summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<u8> {
    let mut sc = load_scenario(&args.scenario)?;
    args.overrides.apply(&mut sc);
    sc.validate()?;
    let rec = run(&sc)?;
    write_csv(&args.out, &rec)?;
    let summary_path = args.summary.clone().unwrap_or_else(|| default_summary_path(&args.out));
    write_json(&summary_path, &RunSummary::from(&rec))?;
    log::info!(
        "{}: {} after {} steps",
        args.scenario.display(),
        rec.status,
        rec.steps.len()
    );
    Ok(status_code(rec.status))
}

#[derive(Serialize)]
struct GridRow {
    x_o: f64,
    y_o: f64,
    status: &'static str,
}

fn default_sweep_base() -> Scenario {
    Scenario::new(
        WorldPose::new(-15.0, -15.0, (-15.0f64).to_radians()),
        GoalPosition::new(0.0, 0.0),
        Vec::new(),
    )
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<u8> {
    if !(args.spacing > 0.0) {
        bail!("--spacing must be positive, got {}", args.spacing);
    }
    let mut base = match &args.scenario {
        Some(path) => load_scenario(path)?,
        None => default_sweep_base(),
    };
    args.overrides.apply(&mut base);
    base.validate()?;
    let bounds = SweepBounds {
        x: [args.x_min, args.x_max],
        y: [args.y_min, args.y_max],
    };
    if !(bounds.x[0] <= bounds.x[1] && bounds.y[0] <= bounds.y[1]) {
        bail!("sweep bounds are empty: {bounds:?}");
    }
    let grid = liveness_sweep(&base, args.radius, args.spacing, bounds)?;
    let mut w = csv::Writer::from_path(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for cell in &grid.cells {
        let status = match cell.status {
            Some(s) => s.as_str(),
            None => "excluded",
        };
        w.serialize(GridRow {
            x_o: cell.x_o,
            y_o: cell.y_o,
            status,
        })?;
    }
    w.flush()?;
    let failed = grid.count(CellOutcome::Failure);
    log::info!(
        "sweep: {} reached, {} excluded, {failed} failed",
        grid.count(CellOutcome::Success),
        grid.count(CellOutcome::Excluded)
    );
    if failed == 0 {
        Ok(0)
    } else if grid.cells.iter().any(|c| c.status == Some(TerminalStatus::Collision)) {
        Ok(EXIT_COLLISION)
    } else {
        Ok(EXIT_OTHER)
    }
}

#[derive(Serialize)]
struct CampaignRunSummary {
    map: usize,
    run: usize,
    noisy: bool,
    start: WorldPose,
    goal: GoalPosition,
    trajectory: String,
    #[serde(flatten)]
    result: RunSummary,
}

#[derive(Serialize)]
struct CampaignFile<'a> {
    summary: &'a CampaignSummary,
    maps: Vec<&'a [Obstacle]>,
    runs: Vec<CampaignRunSummary>,
}

fn cmd_campaign(args: &CampaignArgs) -> anyhow::Result<u8> {
    let mut cfg = CampaignConfig {
        maps: args.maps,
        runs_per_map: args.runs,
        noise: args.noisy.into(),
        seed: args.seed,
        ..CampaignConfig::default()
    };
    cfg.generator.obstacles = args.obstacles;
    cfg.base.runner.integrator = args.integrator;
    let result = campaign(&cfg)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut runs = Vec::with_capacity(result.runs.len());
    for r in &result.runs {
        let name = format!("map{}_run{}.csv", r.map, r.run);
        write_csv(&args.out.join(&name), &r.record)?;
        runs.push(CampaignRunSummary {
            map: r.map,
            run: r.run,
            noisy: r.noisy,
            start: r.start,
            goal: r.goal,
            trajectory: name,
            result: RunSummary::from(&r.record),
        });
    }
    let file = CampaignFile {
        summary: &result.summary,
        maps: result.maps.iter().map(|m| m.obstacles.as_slice()).collect(),
        runs,
    };
    write_json(&args.out.join("summary.json"), &file)?;
    let s = &result.summary;
    log::info!(
        "campaign: {}/{} reached, {} collisions",
        s.reached,
        s.total,
        s.collisions
    );
    Ok(if s.collisions > 0 {
        EXIT_COLLISION
    } else if s.reached < s.total {
        EXIT_OTHER
    } else {
        0
    })
}

fn collinear(epsilon: f64) -> Scenario {
    let mut sc = Scenario::new(
        WorldPose::new(-10.0, 0.0, 0.0),
        GoalPosition::new(0.0, 0.0),
        vec![Obstacle::circle(-5.0, 0.0, 1.0)],
    );
    sc.runner.epsilon_break = epsilon;
    sc
}

#[derive(Serialize)]
struct EqDemoFile {
    stall: RunSummary,
    r#break: RunSummary,
}

fn cmd_eq_demo(args: &EqDemoArgs) -> anyhow::Result<u8> {
    if !(args.epsilon > 0.0) {
        bail!("--epsilon must be positive, got {}", args.epsilon);
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let stall = run(&collinear(0.0))?;
    let escape = run(&collinear(args.epsilon))?;
    write_csv(&args.out.join("stall.csv"), &stall)?;
    write_csv(&args.out.join("break.csv"), &escape)?;
    write_json(
        &args.out.join("summary.json"),
        &EqDemoFile {
            stall: RunSummary::from(&stall),
            r#break: RunSummary::from(&escape),
        },
    )?;
    log::info!(
        "eq-demo: without breaking {}, with breaking {}",
        stall.status,
        escape.status
    );
    let expected = stall.status == TerminalStatus::Equilibrium && escape.status == TerminalStatus::ReachedGoal;
    Ok(if expected { 0 } else { EXIT_OTHER })
}

fn worker_cap() -> anyhow::Result<Option<usize>> {
    match std::env::var("NAV_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => bail!("NAV_THREADS must be a positive integer, got {v:?}"),
        },
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("NAV_THREADS: {e}"),
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<u8> {
    let workers = worker_cap()?;
    with_workers(workers, || match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Campaign(a) => cmd_campaign(a),
        Command::EqDemo(a) => cmd_eq_demo(a),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
