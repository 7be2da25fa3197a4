//! Argument parsing and command dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use solmplan::geometry::PlanarPose;
use solmplan::metric::Strategy;
use solmplan::scene::SceneModel;
use solmplan::solm::SolmGrid;
use solmplan::traj::RobotKind;
use solmplan::Error;

use crate::config::RunConfig;
use crate::pipeline;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PLANNING: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "solmplan",
    version,
    about = "Localizability-aware planning on static observation loss maps"
)]
pub struct Cli {
    /// Run configuration (TOML). Unset fields take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Global seed [default: 0, or the config value]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads, 0 uses every core [default: 0, or the config value]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scene compilation.
    #[command(subcommand)]
    Scene(SceneCommand),
    /// Loss-map building and export.
    #[command(subcommand)]
    Solm(SolmCommand),
    /// Observation loss at one pose.
    #[command(subcommand)]
    Metric(MetricCommand),
    /// Mean disturbance-induced error at one pose.
    #[command(subcommand)]
    Mde(MdeCommand),
    /// Search and optimize a trajectory.
    Plan(PlanArgs),
    /// Per-pose MDE along a trajectory.
    Validate(ValidateArgs),
}

#[derive(Debug, Subcommand)]
pub enum SceneCommand {
    /// Compile a scene and write its mesh, map cloud and occupancy grid.
    Build(SceneBuildArgs),
}

#[derive(Debug, Subcommand)]
pub enum SolmCommand {
    /// Evaluate the loss over the grid and write the map plus one graymap per
    /// yaw channel.
    Build(SolmBuildArgs),
    /// Write graymaps of a stored map.
    Export(SolmExportArgs),
}

#[derive(Debug, Subcommand)]
pub enum MetricCommand {
    /// Print q, σ₁, ξ and the top eigenvalues as one key=value line.
    Eval(MetricEvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum MdeCommand {
    /// Print the MDE as one key=value line.
    Eval(MdeEvalArgs),
}

#[derive(Debug, Args)]
pub struct SceneArg {
    /// Scene description (TOML) [default: the config's `scene`]
    #[arg(long, value_name = "FILE")]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LidarArg {
    /// LiDAR preset: mid70-like or spin-360 [default: mid70-like, or the config value]
    #[arg(long)]
    pub lidar: Option<String>,
}

#[derive(Debug, Args)]
pub struct SceneBuildArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolmBuildArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    #[command(flatten)]
    pub lidar: LidarArg,
    /// Output map file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// xy cell size in meters [default: 0.25, or the config value]
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Yaw channels [default: 1 for spin-360, 8 otherwise, or the config value]
    #[arg(long)]
    pub channels: Option<usize>,
    /// Skip the graymap export.
    #[arg(long, default_value_t = false)]
    pub no_images: bool,
}

#[derive(Debug, Args)]
pub struct SolmExportArgs {
    /// Stored map.
    #[arg(long, value_name = "FILE")]
    pub solm: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Single channel to export [default: all]
    #[arg(long)]
    pub channel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MetricEvalArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    #[command(flatten)]
    pub lidar: LidarArg,
    /// Pose as x,y,theta.
    #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
    pub pose: PlanarPose,
    /// min, n or max [default: n, or the config value]
    #[arg(long)]
    pub strategy: Option<Strategy>,
}

#[derive(Debug, Args)]
pub struct MdeEvalArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    #[command(flatten)]
    pub lidar: LidarArg,
    /// Pose as x,y,theta.
    #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
    pub pose: PlanarPose,
    /// Disturbance count [default: 50, or the config value]
    #[arg(long)]
    pub n: Option<usize>,
    /// Disturbance radius [default: 0.1, or the config value]
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Stored map.
    #[arg(long, value_name = "FILE")]
    pub solm: PathBuf,
    #[command(flatten)]
    pub scene: SceneArg,
    /// Start pose as x,y,theta.
    #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
    pub start: PlanarPose,
    /// Goal pose as x,y,theta.
    #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
    pub goal: PlanarPose,
    /// Loss weight of the search; 0 gives the shortest path [default: 5, or the config value]
    #[arg(long)]
    pub rho_q: Option<f64>,
    /// Loss weight of the optimizer [default: 1, or the config value]
    #[arg(long)]
    pub q_weight: Option<f64>,
    /// omnidirectional or nonholonomic [default: omnidirectional, or the config value]
    #[arg(long, value_parser = parse_robot)]
    pub robot: Option<RobotKind>,
    /// Trajectory CSV (t,x,y,theta,vx,vy,omega,q_interp).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Grid path CSV, written before optimization.
    #[arg(long, value_name = "FILE")]
    pub path_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    #[command(flatten)]
    pub lidar: LidarArg,
    /// Trajectory CSV written by `plan`.
    #[arg(long, value_name = "FILE")]
    pub traj: PathBuf,
    /// Validation CSV (index,t,x,y,theta,mde,converged).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Seconds between validated poses [default: 1, or the config value]
    #[arg(long)]
    pub interval: Option<f64>,
}

fn parse_pose(s: &str) -> Result<PlanarPose, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("'{s}': {e}"))?;
    match v.as_slice() {
        [x, y, t] if v.iter().all(|c| c.is_finite()) => Ok(PlanarPose::new(*x, *y, *t)),
        _ => Err(format!("'{s}': expected three finite numbers x,y,theta")),
    }
}

fn parse_robot(s: &str) -> Result<RobotKind, String> {
    match s {
        "omnidirectional" => Ok(RobotKind::Omnidirectional),
        "nonholonomic" => Ok(RobotKind::Nonholonomic),
        _ => Err(format!("'{s}': expected omnidirectional or nonholonomic")),
    }
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Core(Error::NoPath | Error::BlockedEndpoint { .. } | Error::DegeneratePath) => EXIT_PLANNING,
            _ => EXIT_USAGE,
        }
    }
}

type Outcome = Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.workers = t;
    }
    Ok(cfg)
}

fn scene_path(cfg: &RunConfig, arg: &SceneArg) -> Result<PathBuf, Failure> {
    arg.scene
        .clone()
        .or_else(|| cfg.scene.clone())
        .ok_or_else(|| Failure::Usage("no scene given (use --scene or set `scene` in the config)".into()))
}

fn apply_lidar(cfg: &mut RunConfig, arg: &LidarArg) {
    if let Some(l) = &arg.lidar {
        cfg.lidar = l.clone();
    }
}

fn load_scene(cfg: &RunConfig, arg: &SceneArg) -> Result<SceneModel, Failure> {
    let path = scene_path(cfg, arg)?;
    Ok(pipeline::load_scene(cfg, &path)?)
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| {
        Failure::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn execute(cli: &Cli) -> Outcome {
    let mut cfg = base_config(cli)?;
    match &cli.command {
        Command::Scene(SceneCommand::Build(a)) => scene_build(&cfg, a),
        Command::Solm(SolmCommand::Build(a)) => {
            apply_lidar(&mut cfg, &a.lidar);
            if let Some(r) = a.resolution {
                cfg.grid.resolution = r;
            }
            if a.channels.is_some() {
                cfg.grid.channels = a.channels;
            }
            cfg.validate()?;
            solm_build(&cfg, a)
        }
        Command::Solm(SolmCommand::Export(a)) => solm_export(a),
        Command::Metric(MetricCommand::Eval(a)) => {
            apply_lidar(&mut cfg, &a.lidar);
            if let Some(s) = a.strategy {
                cfg.metric.strategy = s;
            }
            cfg.validate()?;
            metric_eval(&cfg, a)
        }
        Command::Mde(MdeCommand::Eval(a)) => {
            apply_lidar(&mut cfg, &a.lidar);
            if let Some(n) = a.n {
                cfg.mde.n = n;
            }
            if let Some(r) = a.radius {
                cfg.mde.radius = r;
            }
            cfg.validate()?;
            mde_eval(&cfg, a)
        }
        Command::Plan(a) => {
            if let Some(r) = a.rho_q {
                cfg.planner.rho_q = r;
            }
            if let Some(q) = a.q_weight {
                cfg.optimizer.q_weight = q;
            }
            if let Some(r) = a.robot {
                cfg.optimizer.robot = r;
            }
            cfg.validate()?;
            plan(&cfg, a)
        }
        Command::Validate(a) => {
            apply_lidar(&mut cfg, &a.lidar);
            if let Some(i) = a.interval {
                cfg.validate_interval = i;
            }
            cfg.validate()?;
            validate(&cfg, a)
        }
    }
}

fn scene_build(cfg: &RunConfig, a: &SceneBuildArgs) -> Outcome {
    let scene = load_scene(cfg, &a.scene)?;
    create_dir(&a.out)?;
    let mesh_path = a.out.join("mesh.obj");
    let mut obj = String::new();
    for v in &scene.mesh.vertices {
        obj.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in &scene.mesh.triangles {
        obj.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    write_file(&mesh_path, obj.as_bytes())?;
    let mut xyz = String::new();
    for p in &scene.map.points {
        xyz.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    write_file(&a.out.join("map.xyz"), xyz.as_bytes())?;
    let occ = &scene.occupancy;
    let (w, h) = (occ.width(), occ.height());
    let mut pgm = format!("P5\n{w} {h}\n255\n").into_bytes();
    for j in (0..h).rev() {
        pgm.extend((0..w).map(|i| if occ.get(i, j) { 0u8 } else { 255 }));
    }
    write_file(&a.out.join("occupancy.pgm"), &pgm)?;
    println!(
        "triangles={} area={} map_points={} occupied_cells={} grid={}x{}",
        scene.mesh.triangles.len(),
        scene.mesh.area(),
        scene.map.len(),
        occ.occupied_count(),
        w,
        h
    );
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| {
        Failure::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn channel_image_path(out: &Path, k: usize) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "solm".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_c{k}.pgm"))
}

fn solm_build(cfg: &RunConfig, a: &SolmBuildArgs) -> Outcome {
    let clock = Instant::now();
    let scene = load_scene(cfg, &a.scene)?;
    let sdf = pipeline::scene_sdf(&scene);
    let grid = pipeline::build_solm(cfg, &scene, &sdf, cfg.threads())?;
    grid.save(&a.out)?;
    if !a.no_images {
        for k in 0..grid.spec.dims[2] {
            grid.export_image(k, &channel_image_path(&a.out, k))?;
        }
    }
    let cells = grid.spec.len();
    println!(
        "cells={} obstacle_cells={} degenerate_cells={} dims={}x{}x{} seconds={:.3}",
        cells,
        cells - grid.free_count(),
        grid.values.iter().filter(|v| v.is_infinite()).count(),
        grid.spec.dims[0],
        grid.spec.dims[1],
        grid.spec.dims[2],
        clock.elapsed().as_secs_f64()
    );
    Ok(())
}

fn solm_export(a: &SolmExportArgs) -> Outcome {
    let grid = SolmGrid::load(&a.solm)?;
    let channels = grid.spec.dims[2];
    let ks: Vec<usize> = match a.channel {
        Some(k) if k >= channels => {
            return Err(Failure::Usage(format!("channel {k} out of range (map has {channels})")));
        }
        Some(k) => vec![k],
        None => (0..channels).collect(),
    };
    create_dir(&a.out)?;
    for k in ks {
        grid.export_image(k, &a.out.join(format!("channel_{k}.pgm")))?;
    }
    Ok(())
}

fn format_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn metric_eval(cfg: &RunConfig, a: &MetricEvalArgs) -> Outcome {
    let scene = load_scene(cfg, &a.scene)?;
    let r = pipeline::metric_at(cfg, &scene, &a.pose)?;
    println!(
        "strategy={} q={} sigma1={} xi={} lambda={} observations={} degenerate={}",
        r.strategy,
        r.q,
        r.sigma1,
        r.xi,
        format_list(&r.lambda_top),
        r.observations,
        r.degenerate
    );
    Ok(())
}

fn mde_eval(cfg: &RunConfig, a: &MdeEvalArgs) -> Outcome {
    let scene = load_scene(cfg, &a.scene)?;
    let r = pipeline::mde_at(cfg, &scene, &a.pose, 0)?;
    println!(
        "mde={} n={} converged={}",
        r.mde,
        r.outcomes.len(),
        r.outcomes.iter().filter(|o| o.converged).count()
    );
    Ok(())
}

fn plan(cfg: &RunConfig, a: &PlanArgs) -> Outcome {
    let grid = SolmGrid::load(&a.solm)?;
    let scene = load_scene(cfg, &a.scene)?;
    let sdf = pipeline::scene_sdf(&scene);
    let result = pipeline::plan(cfg, &grid, &sdf, &a.start, &a.goal)?;
    if let Some(p) = &a.path_out {
        pipeline::write_path(p, &result.path)?;
    }
    pipeline::write_trajectory(&a.out, &result.samples)?;
    let duration = result.samples.last().map_or(0.0, |s| s.t);
    match &result.optimized {
        Some(o) => {
            if o.flags.infeasible_start {
                eprintln!("warning: the initial trajectory crosses an obstacle");
            }
            if o.flags.line_search_failed {
                eprintln!("warning: the optimizer stopped on a failed line search");
            }
            if o.flags.constraint_not_met {
                eprintln!("warning: nonholonomic residual {} above tolerance", o.max_residual);
            }
            println!(
                "path_cells={} path_cost={} duration={} objective={} loss_integral={} inner_iterations={} outer_iterations={}",
                result.path.cells.len(),
                result.path.cost,
                duration,
                o.breakdown.total,
                o.breakdown.loss_integral,
                o.inner_iterations,
                o.outer_iterations
            );
            if let Some(a) = &result.audit {
                println!(
                    "audit v_lon_excess={} v_lat_excess={} w_excess={} safety_excess={} nonholonomic={}",
                    a.v_lon_excess, a.v_lat_excess, a.w_excess, a.safety_excess, a.nonholonomic
                );
            }
        }
        None => println!("path_cells=1 path_cost=0 duration=0"),
    }
    Ok(())
}

fn validate(cfg: &RunConfig, a: &ValidateArgs) -> Outcome {
    let scene = load_scene(cfg, &a.scene)?;
    let samples = pipeline::read_trajectory(&a.traj)?;
    let v = pipeline::validate(cfg, &scene, &samples, cfg.validate_interval)?;
    pipeline::write_validation(&a.out, &v)?;
    println!("poses={} S={}", v.rows.len(), v.total);
    Ok(())
}
