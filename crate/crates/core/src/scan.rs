//! Deterministic ray-casting LiDAR simulator.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bvh::Bvh;
use crate::error::{Error, Result};
use crate::geometry::PlanarPose;
use crate::seed;

/// Range noise is truncated at this many standard deviations.
pub const NOISE_CLIP_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarModel {
    pub horizontal_fov_deg: f64,
    pub vertical_fov_deg: f64,
    pub azimuth_count: usize,
    pub elevation_count: usize,
    pub max_range: f64,
    pub min_range: f64,
    /// Standard deviation of the range noise (m).
    pub sigma_r: f64,
    pub mount_height: f64,
    /// Per-scan random offset of each ray inside its angular cell, as a
    /// fraction of the cell (0 = fixed pattern, 1 = anywhere in the cell).
    #[serde(default)]
    pub angular_jitter: f64,
}

impl LidarModel {
    /// Forward-looking 70° × 70° sensor.
    pub fn mid70_like() -> Self {
        Self {
            horizontal_fov_deg: 70.0,
            vertical_fov_deg: 70.0,
            azimuth_count: 64,
            elevation_count: 56,
            max_range: 20.0,
            min_range: 0.1,
            sigma_r: 0.01,
            mount_height: 0.5,
            angular_jitter: 1.0,
        }
    }

    /// Spinning sensor with full azimuth coverage.
    pub fn spin_360() -> Self {
        Self {
            horizontal_fov_deg: 360.0,
            vertical_fov_deg: 30.0,
            azimuth_count: 120,
            elevation_count: 12,
            max_range: 8.0,
            min_range: 0.1,
            sigma_r: 0.01,
            mount_height: 0.5,
            angular_jitter: 0.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "mid70-like" => Some(Self::mid70_like()),
            "spin-360" => Some(Self::spin_360()),
            _ => None,
        }
    }

    pub fn is_full_circle(&self) -> bool {
        self.horizontal_fov_deg >= 360.0
    }

    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f <= 360.0;
        if !fov_ok(self.horizontal_fov_deg) || !fov_ok(self.vertical_fov_deg) || self.vertical_fov_deg > 180.0 {
            return Err(Error::InvalidParameter(format!(
                "LiDAR FoV out of range: {}° x {}°",
                self.horizontal_fov_deg, self.vertical_fov_deg
            )));
        }
        if self.azimuth_count == 0 || self.elevation_count == 0 {
            return Err(Error::InvalidParameter("LiDAR ray counts must be >= 1".into()));
        }
        if !(self.min_range >= 0.0 && self.min_range < self.max_range) {
            return Err(Error::InvalidParameter(format!(
                "LiDAR ranges must satisfy 0 <= min < max, got [{}, {}]",
                self.min_range, self.max_range
            )));
        }
        if !(self.sigma_r >= 0.0) {
            return Err(Error::InvalidParameter("LiDAR sigma_r must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.angular_jitter) {
            return Err(Error::InvalidParameter(
                "LiDAR angular_jitter must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Unit ray directions at the cell centers in the sensor frame
    /// (x forward, z up), azimuth major.
    pub fn ray_directions(&self) -> Vec<Vector3<f64>> {
        self.directions_with(|| (0.5, 0.5))
    }

    fn directions_with(&self, mut cell_offset: impl FnMut() -> (f64, f64)) -> Vec<Vector3<f64>> {
        let h = self.horizontal_fov_deg.to_radians();
        let v = self.vertical_fov_deg.to_radians();
        let mut dirs = Vec::with_capacity(self.azimuth_count * self.elevation_count);
        for a in 0..self.azimuth_count {
            for e in 0..self.elevation_count {
                let (oa, oe) = cell_offset();
                let az = -h / 2.0 + h * (a as f64 + oa) / self.azimuth_count as f64;
                let el = -v / 2.0 + v * (e as f64 + oe) / self.elevation_count as f64;
                let (sa, ca) = az.sin_cos();
                let (se, ce) = el.sin_cos();
                dirs.push(Vector3::new(ce * ca, ce * sa, se));
            }
        }
        dirs
    }
}

/// One simulated sweep, sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub points: Vec<Vector3<f64>>,
    /// Noise-free range of each point.
    pub true_ranges: Vec<f64>,
    pub ray_ids: Vec<usize>,
}

impl Scan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sensor origin and rotation in the world for a planar pose.
pub fn sensor_frame(pose: &PlanarPose, model: &LidarModel) -> (nalgebra::Matrix3<f64>, Vector3<f64>) {
    pose.lift(model.mount_height)
}

pub fn simulate_scan(bvh: &Bvh, pose: &PlanarPose, model: &LidarModel, seed_value: u64) -> Scan {
    let (rot, origin) = sensor_frame(pose, model);
    let mut rng = seed::rng(seed_value, seed::stream::SCAN);
    let noise = (model.sigma_r > 0.0).then(|| Normal::new(0.0, model.sigma_r).expect("valid sigma"));
    let clip = NOISE_CLIP_SIGMAS * model.sigma_r;
    let dirs = if model.angular_jitter > 0.0 {
        let j = model.angular_jitter;
        let mut jr = seed::rng(seed_value, seed::stream::SCAN_PATTERN);
        model.directions_with(|| {
            let (u, w): (f64, f64) = (jr.gen(), jr.gen());
            (0.5 + j * (u - 0.5), 0.5 + j * (w - 0.5))
        })
    } else {
        model.ray_directions()
    };
    let mut scan = Scan {
        points: Vec::new(),
        true_ranges: Vec::new(),
        ray_ids: Vec::new(),
    };
    for (id, d) in dirs.iter().enumerate() {
        let world_dir = rot * d;
        let Some(hit) = bvh.cast_ray(&origin, &world_dir, model.max_range) else {
            continue;
        };
        if hit.distance < model.min_range {
            continue;
        }
        let range = match &noise {
            Some(n) => {
                let e: f64 = n.sample(&mut rng);
                (hit.distance + e.clamp(-clip, clip)).max(model.min_range)
            }
            None => hit.distance,
        };
        scan.points.push(d * range);
        scan.true_ranges.push(hit.distance);
        scan.ray_ids.push(id);
    }
    scan
}
