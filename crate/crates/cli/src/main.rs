//! `cable-follow` command-line driver.
//!
//! Configuration precedence: command-line flags, then the JSON file given by
//! `--config` or `CABLE_FOLLOW_CONFIG`, then built-in defaults.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or usage
//! error, 3 model fit failure.

mod chart;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use cable_follow::cable_sim::{make_cable, CableSim, Fixture};
use cable_follow::harness::{
    compare_controllers, fit_model, run_episode, schedule_from_file, summarize, sweep_cables, sweep_velocity,
    write_results_csv, write_summary_csv, write_trace, Config, ControllerKind, EpisodeConfig, GroupSummary, ResultRow,
    RunManifest,
};
use cable_follow::lqr::GainSchedule;
use cable_follow::perception::Perception;
use cable_follow::sysid::ModelFile;
use cable_follow::tactile_sim::{render_depth, write_markers_csv, write_pgm};
use cable_follow::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cable-follow", version, about = "Tactile cable-following simulator and controller suite")]
struct Cli {
    /// JSON configuration file. Missing sections take their defaults.
    #[arg(long, global = true, env = "CABLE_FOLLOW_CONFIG")]
    config: Option<PathBuf>,

    /// Worker threads for episode grids (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect identification data, fit the linear model and solve the LQR gain.
    Sysid(SysidArgs),
    /// Run a single episode and write its trace.
    Run(RunArgs),
    /// Compare the four controllers on the default cable.
    Compare(GridArgs),
    /// Run the LQR controller at several pulling speeds.
    SweepVelocity(VelocityArgs),
    /// Run the LQR controller on every configured cable.
    SweepCables(GridArgs),
    /// Render one synthetic tactile frame and the perception estimate for it.
    RenderFrame(FrameArgs),
}

#[derive(Debug, Args)]
struct SysidArgs {
    #[arg(long, default_value = "out/sysid")]
    out: PathBuf,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    n_trajectories: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cable: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// open_loop, open_loop_regrasp, p_control (p) or lqr_control (lqr).
    #[arg(long)]
    controller: String,
    #[arg(long)]
    cable: Option<String>,
    /// Pulling speed, m/s.
    #[arg(long)]
    vx: Option<f64>,
    /// Episode seed (marker noise, regrasp placement).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cable shape seed; defaults to `--seed`.
    #[arg(long)]
    curve_seed: Option<u64>,
    /// Model JSON from `sysid`; required for the LQR controller.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "out/run")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Model JSON from `sysid`. Without it the model is fitted first.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated seeds, overriding `experiments.seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Pulling speed, m/s, overriding `episode.v_x`.
    #[arg(long)]
    vx: Option<f64>,
    /// Skip per-episode trace files.
    #[arg(long)]
    no_traces: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VelocityArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Comma-separated speeds in m/s, overriding `experiments.velocities`.
    #[arg(long, value_delimiter = ',')]
    velocities: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct FrameArgs {
    #[arg(long)]
    cable: Option<String>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    y_mm: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta_deg: f64,
    #[arg(long, default_value_t = 1.5)]
    grip_force: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out/frame")]
    out: PathBuf,
}

/// Error tagged with the exit status it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Config { .. }) | Some(Error::InvalidArgument { .. }) => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

fn config_error(field: &str, reason: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        error: Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
        .into(),
    }
}

fn fit_failure(e: Error) -> Failure {
    match e {
        Error::Io(_) => e.into(),
        other => Failure {
            code: 3,
            error: anyhow::Error::new(other).context("model fit failed"),
        },
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn load_config(path: Option<&Path>) -> std::result::Result<Config, Failure> {
    match path {
        Some(p) => Config::load(p).map_err(|e| match e {
            Error::Io(io) => config_error("--config", format!("cannot read {}: {io}", p.display())),
            other => other.into(),
        }),
        None => Ok(Config::default()),
    }
}

fn validated(cfg: Config) -> std::result::Result<Config, Failure> {
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn finish(mut manifest: RunManifest, outputs: Vec<PathBuf>, dir: &Path, started: Instant) -> CmdResult {
    let path = dir.join("manifest.json");
    manifest.outputs = outputs.iter().map(|p| display(p)).collect();
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    manifest.save(&path)?;
    println!("manifest: {}", path.display());
    Ok(())
}

fn load_schedule(path: &Path, cfg: &Config) -> std::result::Result<GainSchedule<f64>, Failure> {
    let file = ModelFile::load(path).map_err(|e| match e {
        Error::Io(io) => config_error("--model", format!("cannot read {}: {io}", path.display())),
        other => config_error("--model", other.to_string()),
    })?;
    schedule_from_file(&file, cfg).map_err(|e| config_error("--model", e.to_string()))
}

fn schedule_for_grid(model: Option<&Path>, cfg: &Config) -> std::result::Result<GainSchedule<f64>, Failure> {
    match model {
        Some(p) => load_schedule(p, cfg),
        None => {
            eprintln!("no --model given; fitting from the configured sysid settings");
            Ok(fit_model(cfg).map_err(fit_failure)?.schedule)
        }
    }
}

fn cmd_sysid(cfg: Config, args: SysidArgs) -> CmdResult {
    let started = Instant::now();
    let mut cfg = cfg;
    if let Some(n) = args.n_points {
        cfg.sysid.n_points = n;
    }
    if let Some(n) = args.n_trajectories {
        cfg.sysid.n_trajectories = n;
    }
    if let Some(s) = args.seed {
        cfg.sysid.seed = s;
    }
    if let Some(c) = args.cable {
        cfg.sysid.cable = c;
    }
    let cfg = validated(cfg)?;
    create_dir(&args.out)?;

    let fitted = fit_model(&cfg).map_err(fit_failure)?;
    let model_path = args.out.join("model.json");
    let data_path = args.out.join("dataset.csv");
    fitted.file.save(&model_path)?;
    fitted.dataset.write_csv(&data_path)?;

    let m = &fitted.model;
    println!("samples: {} ({} train, {} holdout)", fitted.dataset.len(), m.n_train, m.n_holdout);
    println!("fit rmse:     {:.6} {:.6} {:.6}", m.fit_rmse[0], m.fit_rmse[1], m.fit_rmse[2]);
    println!("holdout rmse: {:.6} {:.6} {:.6}", m.holdout_rmse[0], m.holdout_rmse[1], m.holdout_rmse[2]);
    let k = &fitted.gain.k;
    println!("K: {:.6} {:.6} {:.6}", k[(0, 0)], k[(0, 1)], k[(0, 2)]);
    if let Some(g) = &fitted.file.gain {
        println!("closed-loop spectral radius: {:.6}", g.spectral_radius);
    }
    println!("model: {}", model_path.display());

    let manifest = RunManifest::new(&command_line(), &cfg, &[cfg.sysid.seed]);
    finish(manifest, vec![model_path, data_path], &args.out, started)
}

fn cmd_run(cfg: Config, args: RunArgs) -> CmdResult {
    let started = Instant::now();
    let controller: ControllerKind = args.controller.parse()?;
    let mut cfg = cfg;
    if let Some(v) = args.vx {
        cfg.episode.v_x = v;
    }
    let cable = args.cable.unwrap_or_else(|| cfg.corpus.default_cable.clone());
    let cfg = validated(cfg)?;
    let schedule = match (controller, &args.model) {
        (ControllerKind::LqrControl, None) => {
            return Err(config_error("--model", "lqr_control needs a model file; run `cable-follow sysid` first"));
        }
        (ControllerKind::LqrControl, Some(p)) => Some(load_schedule(p, &cfg)?),
        _ => None,
    };
    let curve_seed = args.curve_seed.unwrap_or(args.seed);
    let ec = EpisodeConfig::from_config(&cfg, controller, &cable, curve_seed, schedule.as_ref())?;
    let episode = run_episode(&ec, args.seed)?;

    create_dir(&args.out)?;
    let trace_path = args.out.join("trace.csv");
    let metrics_path = args.out.join("metrics.json");
    write_trace(&episode.trace, &trace_path)?;
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&episode.metrics)? + "\n")?;

    let m = &episode.metrics;
    println!("outcome: {}", m.outcome.as_str());
    println!("ratio_followed: {:.6}", m.ratio_followed);
    println!("dist_per_regrasp_norm: {:.6}", m.dist_per_regrasp_norm);
    println!("velocity_norm: {:.6}", m.velocity_norm);
    println!("n_regrasps: {}", m.n_regrasps);
    println!("trace: {}", trace_path.display());

    let manifest = RunManifest::new(&command_line(), &cfg, &[args.seed]);
    finish(manifest, vec![trace_path, metrics_path], &args.out, started)
}

fn grid_config(cfg: Config, args: &GridArgs) -> std::result::Result<(Config, Vec<u64>), Failure> {
    let mut cfg = cfg;
    if let Some(s) = &args.seeds {
        cfg.experiments.seeds = s.clone();
    }
    if let Some(v) = args.vx {
        cfg.episode.v_x = v;
    }
    let cfg = validated(cfg)?;
    let seeds = cfg.experiments.seeds.clone();
    Ok((cfg, seeds))
}

/// Writes results, summary CSV and chart; returns the written paths.
fn write_tables(
    rows: &[ResultRow],
    groups: &[GroupSummary],
    key: &str,
    dir: &Path,
) -> anyhow::Result<Vec<PathBuf>> {
    let results = dir.join("results.csv");
    let summary = dir.join("summary.csv");
    let png = dir.join("summary.png");
    write_results_csv(rows, &results)?;
    write_summary_csv(groups, key, &summary)?;
    chart::bar_chart(groups, &png)?;
    for g in groups {
        println!(
            "{:>20}  ratio {:.3} ± {:.3}  dist/regrasp {:.3} ± {:.3}  velocity {:.3} ± {:.3}  regrasps {:.2}  regrasps/m {:.2}",
            g.label,
            g.ratio_mean,
            g.ratio_std,
            g.dist_per_regrasp_mean,
            g.dist_per_regrasp_std,
            g.vel_norm_mean,
            g.vel_norm_std,
            g.regrasps_mean,
            g.regrasps_per_m_mean,
        );
    }
    Ok(vec![results, summary, png])
}

fn trace_dir(args: &GridArgs, out: &Path) -> anyhow::Result<Option<PathBuf>> {
    if args.no_traces {
        return Ok(None);
    }
    let dir = out.join("traces");
    create_dir(&dir)?;
    Ok(Some(dir))
}

fn cmd_compare(cfg: Config, args: GridArgs) -> CmdResult {
    let started = Instant::now();
    let (cfg, seeds) = grid_config(cfg, &args)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("out/compare"));
    create_dir(&out)?;
    let schedule = schedule_for_grid(args.model.as_deref(), &cfg)?;
    let traces = trace_dir(&args, &out)?;
    let (rows, mut outputs) = compare_controllers(&cfg, &seeds, Some(&schedule), traces.as_deref())?;
    let groups = summarize(&rows, cfg.corpus.length_mm, |r| r.controller.clone());
    outputs.extend(write_tables(&rows, &groups, "controller", &out)?);
    finish(RunManifest::new(&command_line(), &cfg, &seeds), outputs, &out, started)
}

fn cmd_sweep_velocity(cfg: Config, args: VelocityArgs) -> CmdResult {
    let started = Instant::now();
    let mut cfg = cfg;
    if let Some(v) = &args.velocities {
        cfg.experiments.velocities = v.clone();
    }
    let (cfg, seeds) = grid_config(cfg, &args.grid)?;
    if cfg.experiments.velocities.is_empty() {
        return Err(config_error("experiments.velocities", "need at least one speed"));
    }
    let out = args.grid.out.clone().unwrap_or_else(|| PathBuf::from("out/sweep-velocity"));
    create_dir(&out)?;
    let schedule = schedule_for_grid(args.grid.model.as_deref(), &cfg)?;
    let traces = trace_dir(&args.grid, &out)?;
    let (rows, mut outputs) = sweep_velocity(&cfg, &cfg.experiments.velocities, &seeds, &schedule, traces.as_deref())?;
    let groups = summarize(&rows, cfg.corpus.length_mm, |r| r.v_x.to_string());
    outputs.extend(write_tables(&rows, &groups, "v_x", &out)?);
    finish(RunManifest::new(&command_line(), &cfg, &seeds), outputs, &out, started)
}

fn cmd_sweep_cables(cfg: Config, args: GridArgs) -> CmdResult {
    let started = Instant::now();
    let (cfg, seeds) = grid_config(cfg, &args)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("out/sweep-cables"));
    create_dir(&out)?;
    let schedule = schedule_for_grid(args.model.as_deref(), &cfg)?;
    let traces = trace_dir(&args, &out)?;
    let (rows, mut outputs) = sweep_cables(&cfg, &seeds, &schedule, traces.as_deref())?;
    let groups = summarize(&rows, cfg.corpus.length_mm, |r| r.cable.clone());
    outputs.extend(write_tables(&rows, &groups, "cable", &out)?);
    finish(RunManifest::new(&command_line(), &cfg, &seeds), outputs, &out, started)
}

fn cmd_render_frame(cfg: Config, args: FrameArgs) -> CmdResult {
    let started = Instant::now();
    let cfg = validated(cfg)?;
    let cable = args.cable.unwrap_or_else(|| cfg.corpus.default_cable.clone());
    let spec = cfg.cable(&cable)?.clone();
    if !(args.grip_force > 0.0) {
        return Err(config_error("--grip-force", "must be positive"));
    }
    let curve = make_cable(0, 200.0, 0.0, cfg.corpus.n_waypoints, cfg.corpus.kappa_max)?;
    let opening = cfg.sim.opening_for_force(&spec, args.grip_force);
    let mut sim = CableSim::new(curve, spec, cfg.sim.clone(), Fixture::default(), opening)?;
    sim.state.cable_state.y = args.y_mm;
    sim.state.cable_state.theta = args.theta_deg.to_radians();

    let frame = sim.observe_tactile::<f64>(&cfg.sensor, cfg.episode.marker_noise_px, args.seed)?;
    let perception = Perception::<f64>::new(cfg.sensor.clone(), cfg.perception.clone())?;
    let obs = perception.process(&frame, &cfg.sensor.marker_rest_positions::<f64>())?;

    create_dir(&args.out)?;
    let pgm = args.out.join("depth.pgm");
    let png = args.out.join("depth.png");
    let markers = args.out.join("markers.csv");
    write_pgm(&frame.depth, &pgm)?;
    write_markers_csv(&frame.markers, &markers)?;
    depth_png(&render_depth(&sim.contact_truth::<f64>(&cfg.sensor), &cfg.sensor), &png)?;

    println!("contact area: {} px (quality {})", obs.quality.area_px, u8::from(obs.quality.s));
    if obs.pose.valid {
        println!("estimated y: {:.4} mm  theta: {:.3} deg", obs.pose.y_mm, obs.pose.theta_rad.to_degrees());
    } else {
        println!("no valid pose estimate");
    }
    println!("marker displacement D: {:.4} px", obs.friction.d);

    let manifest = RunManifest::new(&command_line(), &cfg, &[args.seed]);
    finish(manifest, vec![pgm, png, markers], &args.out, started)
}

fn depth_png(depth: &nalgebra::DMatrix<f64>, path: &Path) -> anyhow::Result<()> {
    let peak = depth.iter().cloned().fold(0.0, f64::max);
    let img = image::GrayImage::from_fn(depth.ncols() as u32, depth.nrows() as u32, |x, y| {
        let v = if peak > 0.0 { depth[(y as usize, x as usize)] / peak } else { 0.0 };
        image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path)?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(config_error("--jobs", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Sysid(a) => cmd_sysid(cfg, a),
        Command::Run(a) => cmd_run(cfg, a),
        Command::Compare(a) => cmd_compare(cfg, a),
        Command::SweepVelocity(a) => cmd_sweep_velocity(cfg, a),
        Command::SweepCables(a) => cmd_sweep_cables(cfg, a),
        Command::RenderFrame(a) => cmd_render_frame(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
