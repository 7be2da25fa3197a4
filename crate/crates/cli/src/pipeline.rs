//! The steps behind the commands, usable without the argument parser.

use std::path::Path;

use nalgebra::Vector3;
use solmplan::geometry::PlanarPose;
use solmplan::metric::{evaluate, MetricResult};
use solmplan::observation::{build_observations, MapRef};
use solmplan::registration::{mde, MdeReport};
use solmplan::scan::simulate_scan;
use solmplan::scene::{SceneDescription, SceneModel};
use solmplan::sdf::{build_sdf, SdfField};
use solmplan::search::{search, GridPath};
use solmplan::seed;
use solmplan::solm::{self, SolmGrid};
use solmplan::traj::{audit, init_from_path, optimize, Audit, CubicSplineTraj, OptResult, RobotKind};
use solmplan::{Error, Result};

use crate::config::RunConfig;

pub fn load_scene(cfg: &RunConfig, path: &Path) -> Result<SceneModel> {
    let desc = SceneDescription::load(path)?;
    SceneModel::build(&desc, &cfg.scene_params, cfg.map_seed())
}

pub fn scene_sdf(scene: &SceneModel) -> SdfField {
    build_sdf(&scene.occupancy)
}

pub fn build_solm(cfg: &RunConfig, scene: &SceneModel, sdf: &SdfField, workers: usize) -> Result<SolmGrid> {
    let spec = cfg.grid_spec(scene.xy_bounds())?;
    solm::build(scene, sdf, &spec, &cfg.solm_config()?, workers)
}

/// Loss at one pose. Poses without usable observations come back as the
/// degenerate sentinel rather than an error.
pub fn metric_at(cfg: &RunConfig, scene: &SceneModel, pose: &PlanarPose) -> Result<MetricResult> {
    let lidar = cfg.lidar_model()?;
    let scan = simulate_scan(&scene.bvh, pose, &lidar, seed::mix(cfg.seed, seed::stream::SCAN));
    let map = MapRef {
        cloud: &scene.map,
        bvh: Some(&scene.bvh),
    };
    match build_observations(&scan, &map, pose, lidar.mount_height, &cfg.observation) {
        Ok(set) => evaluate(&set, &cfg.metric),
        Err(Error::EmptyScan | Error::NoAssociations | Error::TooFewObservations { .. }) => Ok(MetricResult {
            strategy: cfg.metric.strategy,
            q: f64::INFINITY,
            sigma1: 0.0,
            xi: 0.0,
            lambda_top: Vec::new(),
            degenerate: true,
            observations: 0,
        }),
        Err(e) => Err(e),
    }
}

pub fn mde_at(cfg: &RunConfig, scene: &SceneModel, pose: &PlanarPose, key: u64) -> Result<MdeReport> {
    let params = solmplan::registration::MdeParams {
        seed: seed::mix(cfg.mde_params().seed, key),
        ..cfg.mde_params()
    };
    mde(scene, pose, &cfg.lidar_model()?, &cfg.observation, &params)
}

/// One row of the sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
    pub q: f64,
}

impl TrajSample {
    pub fn pose(&self) -> PlanarPose {
        PlanarPose::new(self.x, self.y, self.theta)
    }
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub path: GridPath,
    /// `None` when start and goal coincide.
    pub optimized: Option<OptResult>,
    /// Limits checked at `10 κ` points per segment.
    pub audit: Option<Audit>,
    pub samples: Vec<TrajSample>,
}

fn same_pose(a: &PlanarPose, b: &PlanarPose) -> bool {
    (a.x - b.x).abs() < 1e-9
        && (a.y - b.y).abs() < 1e-9
        && solmplan::geometry::wrap_angle(a.theta - b.theta).abs() < 1e-9
}

/// Spline through the searched cells, pinned to the exact start and goal.
/// `None` when start and goal coincide.
pub fn initial_trajectory(
    cfg: &RunConfig,
    path: &GridPath,
    start: &PlanarPose,
    goal: &PlanarPose,
) -> Result<Option<CubicSplineTraj>> {
    if same_pose(start, goal) {
        return Ok(None);
    }
    let mut endpoints = path.clone();
    if endpoints.poses.len() == 1 {
        endpoints.cells.push(endpoints.cells[0]);
        endpoints.poses.push(endpoints.poses[0]);
    }
    let last = endpoints.poses.len() - 1;
    endpoints.poses[0] = *start;
    endpoints.poses[last] = *goal;
    let init = init_from_path(&endpoints, cfg.v_avg, cfg.planner.l_yaw)?;
    match cfg.optimizer.robot {
        RobotKind::Nonholonomic => init.with_motion_heading().map(Some),
        RobotKind::Omnidirectional => Ok(Some(init)),
    }
}

/// Search, spline initialization and optimization.
pub fn plan(cfg: &RunConfig, solm: &SolmGrid, sdf: &SdfField, start: &PlanarPose, goal: &PlanarPose) -> Result<Plan> {
    let path = search(solm, sdf, start, goal, &cfg.planner())?;
    let Some(init) = initial_trajectory(cfg, &path, start, goal)? else {
        let samples = vec![sample_state(solm, 0.0, start, &Vector3::zeros())];
        return Ok(Plan {
            path,
            optimized: None,
            audit: None,
            samples,
        });
    };
    let params = cfg.optimizer();
    let optimized = optimize(&init, solm, sdf, &params)?;
    let samples = sample_trajectory(&optimized.traj, solm, cfg.sample_rate);
    let audit = audit(&optimized.traj, sdf, &params, 10 * params.kappa);
    Ok(Plan {
        path,
        optimized: Some(optimized),
        audit: Some(audit),
        samples,
    })
}

fn sample_state(solm: &SolmGrid, t: f64, pose: &PlanarPose, velocity: &Vector3<f64>) -> TrajSample {
    TrajSample {
        t,
        x: pose.x,
        y: pose.y,
        theta: pose.theta,
        vx: velocity.x,
        vy: velocity.y,
        omega: velocity.z,
        q: solm.interpolate(pose).q,
    }
}

pub fn sample_trajectory(traj: &CubicSplineTraj, solm: &SolmGrid, rate: f64) -> Vec<TrajSample> {
    traj.sample_uniform(1.0 / rate)
        .into_iter()
        .map(|(t, st)| sample_state(solm, t, &st.pose(), &st.velocity))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub const TRAJ_HEADER: [&str; 8] = ["t", "x", "y", "theta", "vx", "vy", "omega", "q_interp"];

pub fn write_trajectory(path: &Path, samples: &[TrajSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(TRAJ_HEADER).map_err(|e| csv_error(path, e))?;
    for s in samples {
        let row = [s.t, s.x, s.y, s.theta, s.vx, s.vy, s.omega, s.q].map(|v| v.to_string());
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajSample>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(TRAJ_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("expected header {}", TRAJ_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let v: Vec<f64> = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: format!("row {}: {e}", line + 2),
            })?;
        out.push(TrajSample {
            t: v[0],
            x: v[1],
            y: v[2],
            theta: v[3],
            vx: v[4],
            vy: v[5],
            omega: v[6],
            q: v[7],
        });
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "trajectory has no rows".into(),
        });
    }
    Ok(out)
}

pub fn write_path(path: &Path, grid_path: &GridPath) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["i", "j", "k", "x", "y", "theta"])
        .map_err(|e| csv_error(path, e))?;
    for (c, p) in grid_path.cells.iter().zip(&grid_path.poses) {
        let row = [
            c.0.to_string(),
            c.1.to_string(),
            c.2.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.theta.to_string(),
        ];
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRow {
    pub index: usize,
    pub t: f64,
    pub pose: PlanarPose,
    pub mde: f64,
    /// Registrations that met the step tolerance.
    pub converged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub rows: Vec<ValidationRow>,
    /// Sum of the per-pose MDE.
    pub total: f64,
}

/// MDE at poses taken every `interval` seconds along the samples.
pub fn validate(cfg: &RunConfig, scene: &SceneModel, samples: &[TrajSample], interval: f64) -> Result<Validation> {
    if !(interval.is_finite() && interval > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "interval must be positive, got {interval}"
        )));
    }
    let t0 = samples[0].t;
    let mut picked = Vec::new();
    let mut next = 0usize;
    for s in samples {
        let slot = t0 + next as f64 * interval;
        if s.t + 1e-9 >= slot {
            picked.push(*s);
            next = ((s.t - t0 + 1e-9) / interval).floor() as usize + 1;
        }
    }
    let mut rows = Vec::with_capacity(picked.len());
    for (index, s) in picked.iter().enumerate() {
        let pose = s.pose();
        let report = mde_at(cfg, scene, &pose, seed::mix(seed::stream::VALIDATE, index as u64))?;
        rows.push(ValidationRow {
            index,
            t: s.t,
            pose,
            mde: report.mde,
            converged: report.outcomes.iter().filter(|o| o.converged).count(),
        });
    }
    let total = rows.iter().map(|r| r.mde).sum();
    Ok(Validation { rows, total })
}

pub fn write_validation(path: &Path, v: &Validation) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["index", "t", "x", "y", "theta", "mde", "converged"])
        .map_err(|e| csv_error(path, e))?;
    for r in &v.rows {
        let row = [
            r.index.to_string(),
            r.t.to_string(),
            r.pose.x.to_string(),
            r.pose.y.to_string(),
            r.pose.theta.to_string(),
            r.mde.to_string(),
            r.converged.to_string(),
        ];
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}
