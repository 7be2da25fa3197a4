//! Iterated Gauss-Newton point-to-plane registration and the mean
//! disturbance-induced error (MDE).

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{exp_se2, PlanarPose, PlanarTwist};
use crate::observation::{build_observations, MapRef, ObservationParams};
use crate::scan::{simulate_scan, LidarModel, Scan};
use crate::scene::SceneModel;
use crate::seed;

/// Singular values below this fraction of the largest are treated as zero
/// when solving a Gauss-Newton step.
pub const STEP_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationParams {
    pub max_iterations: usize,
    /// Step-norm threshold for convergence (m).
    pub tolerance: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdeParams {
    /// Number of disturbances.
    pub n: usize,
    /// Radius of the twist ball the disturbances are drawn from.
    pub radius: f64,
    /// Supplied by the caller, not read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for MdeParams {
    fn default() -> Self {
        Self {
            n: 50,
            radius: 0.1,
            seed: 0,
            max_iterations: 30,
            tolerance: 1e-6,
        }
    }
}

impl MdeParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("MDE needs at least one disturbance".into()));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "MDE radius must be >= 0, got {}",
                self.radius
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("registration tolerance must be > 0".into()));
        }
        Ok(())
    }

    pub fn registration(&self) -> RegistrationParams {
        RegistrationParams {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    pub pose: PlanarPose,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimum-norm least-squares step; unobservable directions stay at zero.
fn gauss_newton_step(a: &DMatrix<f64>, b: &DVector<f64>) -> Vector3<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Vector3::zeros();
    }
    let x = svd.solve(b, smax * STEP_RANK_TOL).unwrap_or_else(|_| DVector::zeros(3));
    Vector3::new(x[0], x[1], x[2])
}

pub fn register(
    scan: &Scan,
    map: &MapRef<'_>,
    init: &PlanarPose,
    mount_height: f64,
    obs: &ObservationParams,
    params: &RegistrationParams,
) -> Result<Registration> {
    if scan.is_empty() {
        return Err(Error::EmptyScan);
    }
    let mut pose = *init;
    let mut before_last: Option<PlanarPose> = None;
    for it in 0..params.max_iterations {
        let set = match build_observations(scan, map, &pose, mount_height, obs) {
            Ok(s) => s,
            Err(Error::NoAssociations) => {
                return Ok(Registration {
                    pose,
                    iterations: it,
                    converged: false,
                })
            }
            Err(e) => return Err(e),
        };
        let step = gauss_newton_step(&set.a, &set.b);
        let previous = pose;
        pose = PlanarPose::new(pose.x + step.x, pose.y + step.y, pose.theta + step.z);
        if step.norm() < params.tolerance {
            return Ok(Registration {
                pose,
                iterations: it + 1,
                converged: true,
            });
        }
        // two association sets alternating: further iterations cannot help
        if let Some(p) = before_last {
            let back = Vector3::new(pose.x - p.x, pose.y - p.y, pose.theta - p.theta);
            if back.norm() < params.tolerance {
                return Ok(Registration {
                    pose,
                    iterations: it + 1,
                    converged: false,
                });
            }
        }
        before_last = Some(previous);
    }
    Ok(Registration {
        pose,
        iterations: params.max_iterations,
        converged: false,
    })
}

/// Disturbance `j`: a uniformly random direction scaled by a uniform radius.
pub fn disturbance(seed_value: u64, j: usize, radius: f64) -> PlanarTwist {
    let mut rng = seed::rng(seed::mix(seed_value, seed::stream::MDE), j as u64);
    let [a, b, c]: [f64; 3] = UnitSphere.sample(&mut rng);
    let r = rng.gen::<f64>() * radius;
    PlanarTwist::new(a * r, b * r, c * r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceOutcome {
    pub disturbance: PlanarTwist,
    /// `log(T_gt⁻¹ T_reg)`.
    pub error: PlanarTwist,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdeReport {
    pub mde: f64,
    pub outcomes: Vec<DisturbanceOutcome>,
}

/// MDE for a scan already simulated at `truth`.
pub fn mde_for_scan(
    scan: &Scan,
    map: &MapRef<'_>,
    truth: &PlanarPose,
    mount_height: f64,
    obs: &ObservationParams,
    params: &MdeParams,
) -> Result<MdeReport> {
    params.validate()?;
    if scan.is_empty() {
        return Err(Error::EmptyScan);
    }
    let reg = params.registration();
    let outcomes = (0..params.n)
        .into_par_iter()
        .map(|j| {
            let d = disturbance(params.seed, j, params.radius);
            let init = truth.compose(&exp_se2(&d));
            let r = register(scan, map, &init, mount_height, obs, &reg)?;
            Ok(DisturbanceOutcome {
                disturbance: d,
                error: r.pose.error_twist(truth),
                converged: r.converged,
                iterations: r.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mde = outcomes.iter().map(|o| o.error.weighted_norm_squared()).sum::<f64>() / params.n as f64;
    Ok(MdeReport { mde, outcomes })
}

/// Evaluates the MDE at `truth`. Disturbance `j` registers its own scan,
/// simulated with noise drawn from the stream keyed by `(seed, j)`.
pub fn mde(
    scene: &SceneModel,
    truth: &PlanarPose,
    lidar: &LidarModel,
    obs: &ObservationParams,
    params: &MdeParams,
) -> Result<MdeReport> {
    params.validate()?;
    let map = MapRef {
        cloud: &scene.map,
        bvh: Some(&scene.bvh),
    };
    let reg = params.registration();
    let outcomes = (0..params.n)
        .into_par_iter()
        .map(|j| {
            let scan = simulate_scan(&scene.bvh, truth, lidar, seed::mix(params.seed, j as u64));
            if scan.is_empty() {
                return Err(Error::EmptyScan);
            }
            let d = disturbance(params.seed, j, params.radius);
            let init = truth.compose(&exp_se2(&d));
            let r = register(&scan, &map, &init, lidar.mount_height, obs, &reg)?;
            Ok(DisturbanceOutcome {
                disturbance: d,
                error: r.pose.error_twist(truth),
                converged: r.converged,
                iterations: r.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mde = outcomes.iter().map(|o| o.error.weighted_norm_squared()).sum::<f64>() / params.n as f64;
    Ok(MdeReport { mde, outcomes })
}
