//! Static observation loss map (SOLM): the localizability loss `q` tabulated
//! over a regular (x, y, θ) grid.
//!
//! Storage keeps obstacle cells as quiet NaN plus a bitmask and degenerate
//! poses as `+inf`. Interpolation replaces both with a finite surrogate.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::PlanarPose;
use crate::metric::{evaluate, MetricConfig};
use crate::observation::{build_observations, MapRef, ObservationParams};
use crate::scan::{simulate_scan, LidarModel};
use crate::scene::SceneModel;
use crate::sdf::SdfField;
use crate::seed;

pub const MAGIC: &[u8; 4] = b"SOLM";
pub const VERSION: u32 = 1;
/// Surrogate loss for sentinel cells, as a multiple of the largest finite q.
pub const SENTINEL_FACTOR: f64 = 10.0;

/// Placement and size of the (x, y, θ) grid. Yaw channel `k` sits at
/// `θ = k · 2π / c` (wrapped).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub resolution: [f64; 2],
    /// a × b × c cells.
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Smallest resolution-aligned grid covering `[lo, hi]` with `channels`
    /// yaw channels.
    pub fn covering(lo: [f64; 2], hi: [f64; 2], resolution: f64, channels: usize) -> Self {
        let frame = crate::scene::GridFrame::covering(lo, hi, resolution);
        Self {
            origin: frame.origin,
            resolution: [resolution, resolution],
            dims: [frame.width, frame.height, channels],
        }
    }

    pub fn yaw_resolution(&self) -> f64 {
        2.0 * PI / self.dims[2] as f64
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "grid dims must be positive, got {:?}",
                self.dims
            )));
        }
        if !self.resolution.iter().all(|r| r.is_finite() && *r > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid resolution must be positive, got {:?}",
                self.resolution
            )));
        }
        if !self.origin.iter().all(|o| o.is_finite()) {
            return Err(Error::InvalidParameter("grid origin must be finite".into()));
        }
        Ok(())
    }

    /// Flat index, x fastest, θ outermost.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let plane = self.dims[0] * self.dims[1];
        (idx % self.dims[0], (idx % plane) / self.dims[0], idx / plane)
    }

    pub fn cell_pose(&self, i: usize, j: usize, k: usize) -> PlanarPose {
        PlanarPose::new(
            self.origin[0] + (i as f64 + 0.5) * self.resolution[0],
            self.origin[1] + (j as f64 + 0.5) * self.resolution[1],
            k as f64 * self.yaw_resolution(),
        )
    }

    /// Cell containing a pose, or `None` outside the xy extent.
    pub fn cell_of(&self, pose: &PlanarPose) -> Option<(usize, usize, usize)> {
        let u = ((pose.x - self.origin[0]) / self.resolution[0]).floor();
        let v = ((pose.y - self.origin[1]) / self.resolution[1]).floor();
        if u < 0.0 || v < 0.0 || u >= self.dims[0] as f64 || v >= self.dims[1] as f64 {
            return None;
        }
        let w = (pose.theta.rem_euclid(2.0 * PI) / self.yaw_resolution()).round() as usize % self.dims[2];
        Some((u as usize, v as usize, w))
    }
}

/// Everything besides the scene that determines the cell values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolmConfig {
    pub lidar: LidarModel,
    pub observation: ObservationParams,
    pub metric: MetricConfig,
    /// Cells whose center is closer than this to an obstacle are skipped.
    pub r_safe: f64,
    pub seed: u64,
}

impl SolmConfig {
    pub fn digest(&self) -> [u8; 32] {
        let text = toml::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).into()
    }
}

#[derive(Debug, Clone)]
pub struct SolmGrid {
    pub spec: GridSpec,
    /// Row-major, x fastest, θ outermost. NaN on obstacles, `+inf` on
    /// degenerate poses.
    pub values: Vec<f32>,
    pub obstacle: Vec<bool>,
    pub config_digest: [u8; 32],
    surrogate: OnceLock<f64>,
}

impl PartialEq for SolmGrid {
    fn eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}

/// Loss at one pose, `+inf` when the pose has no usable observations.
pub fn pose_loss(scene: &SceneModel, cfg: &SolmConfig, pose: &PlanarPose, seed_value: u64) -> f64 {
    let scan = simulate_scan(&scene.bvh, pose, &cfg.lidar, seed_value);
    let map = MapRef {
        cloud: &scene.map,
        bvh: Some(&scene.bvh),
    };
    build_observations(&scan, &map, pose, cfg.lidar.mount_height, &cfg.observation)
        .and_then(|set| evaluate(&set, &cfg.metric))
        .map(|r| r.q)
        .unwrap_or(f64::INFINITY)
}

/// True when the cell center is occupied or closer than `r_safe` to an
/// obstacle.
pub fn is_blocked(scene: &SceneModel, sdf: &SdfField, x: f64, y: f64, r_safe: f64) -> bool {
    let occupied = scene
        .occupancy
        .frame
        .cell_of(x, y)
        .is_some_and(|(i, j)| scene.occupancy.get(i, j));
    occupied || sdf.sample(&Vector2::new(x, y)).distance < r_safe
}

pub fn build(
    scene: &SceneModel,
    sdf: &SdfField,
    spec: &GridSpec,
    cfg: &SolmConfig,
    workers: usize,
) -> Result<SolmGrid> {
    spec.validate()?;
    cfg.lidar.validate()?;
    cfg.metric.validate()?;
    let plane = spec.dims[0] * spec.dims[1];
    let blocked: Vec<bool> = (0..plane)
        .map(|c| {
            let p = spec.cell_pose(c % spec.dims[0], c / spec.dims[0], 0);
            is_blocked(scene, sdf, p.x, p.y, cfg.r_safe)
        })
        .collect();
    if blocked.iter().all(|&b| b) {
        return Err(Error::NoFreeCells);
    }
    let obstacle: Vec<bool> = (0..spec.len()).map(|idx| blocked[idx % plane]).collect();
    #[cfg(debug_assertions)]
    let visits = std::sync::atomic::AtomicUsize::new(0);
    let eval = |idx: usize| -> f32 {
        if obstacle[idx] {
            return f32::NAN;
        }
        #[cfg(debug_assertions)]
        visits.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let (i, j, k) = spec.unindex(idx);
        pose_loss(scene, cfg, &spec.cell_pose(i, j, k), seed::mix(cfg.seed, idx as u64)) as f32
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let values: Vec<f32> = pool.install(|| (0..spec.len()).into_par_iter().map(eval).collect());
    #[cfg(debug_assertions)]
    debug_assert_eq!(
        visits.load(std::sync::atomic::Ordering::Relaxed),
        obstacle.iter().filter(|&&o| !o).count()
    );
    Ok(SolmGrid::new(*spec, values, obstacle, cfg.digest()))
}

/// Node pair and weight along one interpolation axis, plus the node pair and
/// scale used for the derivative.
#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: usize,
    hi: usize,
    t: f64,
    d_lo: usize,
    d_hi: usize,
    d_scale: f64,
}

/// Rounds coordinates within float noise of a node onto it.
fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < 1e-9 {
        r
    } else {
        u
    }
}

/// Axis with nodes at `u = 0..n-1`, clamped at both ends.
fn clamped_axis(u: f64, n: usize, res: f64) -> Axis {
    let u = snap(u);
    let flat = |i: usize| Axis {
        lo: i,
        hi: i,
        t: 0.0,
        d_lo: i,
        d_hi: i,
        d_scale: 0.0,
    };
    if n == 1 {
        return flat(0);
    }
    let top = (n - 1) as f64;
    if u < 0.0 {
        return flat(0);
    }
    if u > top {
        return flat(n - 1);
    }
    let i0 = (u.floor() as usize).min(n - 2);
    let t = u - i0 as f64;
    if t == 0.0 && i0 > 0 {
        // on an interior node the slope is the central difference
        return Axis {
            lo: i0,
            hi: i0 + 1,
            t,
            d_lo: i0 - 1,
            d_hi: i0 + 1,
            d_scale: 0.5 / res,
        };
    }
    Axis {
        lo: i0,
        hi: i0 + 1,
        t,
        d_lo: i0,
        d_hi: i0 + 1,
        d_scale: 1.0 / res,
    }
}

/// Periodic axis with `n` nodes at `u = 0..n`.
fn periodic_axis(u: f64, n: usize, res: f64) -> Axis {
    if n == 1 {
        return Axis {
            lo: 0,
            hi: 0,
            t: 0.0,
            d_lo: 0,
            d_hi: 0,
            d_scale: 0.0,
        };
    }
    let u = snap(u).rem_euclid(n as f64);
    let i0 = (u.floor() as usize).min(n - 1);
    let t = u - i0 as f64;
    let hi = (i0 + 1) % n;
    if t == 0.0 {
        return Axis {
            lo: i0,
            hi,
            t,
            d_lo: (i0 + n - 1) % n,
            d_hi: hi,
            d_scale: 0.5 / res,
        };
    }
    Axis {
        lo: i0,
        hi,
        t,
        d_lo: i0,
        d_hi: hi,
        d_scale: 1.0 / res,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    pub q: f64,
    /// dq / d(x, y, θ).
    pub gradient: Vector3<f64>,
}

impl SolmGrid {
    pub fn new(spec: GridSpec, values: Vec<f32>, obstacle: Vec<bool>, config_digest: [u8; 32]) -> Self {
        Self {
            spec,
            values,
            obstacle,
            config_digest,
            surrogate: OnceLock::new(),
        }
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.spec.index(i, j, k)]
    }

    pub fn free_count(&self) -> usize {
        self.obstacle.iter().filter(|&&o| !o).count()
    }

    /// Largest finite loss over free cells, if any.
    pub fn max_finite(&self) -> Option<f64> {
        self.values
            .iter()
            .filter(|v| v.is_finite())
            .map(|&v| v as f64)
            .reduce(f64::max)
    }

    pub fn min_finite(&self) -> Option<f64> {
        self.values
            .iter()
            .filter(|v| v.is_finite())
            .map(|&v| v as f64)
            .reduce(f64::min)
    }

    /// Finite value that stands in for obstacle and degenerate cells.
    pub fn surrogate(&self) -> f64 {
        *self.surrogate.get_or_init(|| match self.max_finite() {
            Some(m) if m > 0.0 => SENTINEL_FACTOR * m,
            _ => SENTINEL_FACTOR,
        })
    }

    /// Cell values with sentinels replaced by the surrogate.
    pub fn dense_values(&self) -> Vec<f64> {
        let s = self.surrogate();
        self.values
            .iter()
            .map(|&v| if v.is_finite() { v as f64 } else { s })
            .collect()
    }

    /// Trilinear interpolation over cell centers, periodic in θ. Sentinel
    /// cells enter with the surrogate value.
    pub fn interpolate(&self, pose: &PlanarPose) -> LossSample {
        self.interpolate_with(pose, &|idx| {
            let v = self.values[idx];
            if v.is_finite() {
                v as f64
            } else {
                self.surrogate()
            }
        })
    }

    /// As [`SolmGrid::interpolate`], reading cells from a precomputed dense array.
    pub fn interpolate_dense(&self, dense: &[f64], pose: &PlanarPose) -> LossSample {
        self.interpolate_with(pose, &|idx| dense[idx])
    }

    fn interpolate_with(&self, pose: &PlanarPose, cell: &dyn Fn(usize) -> f64) -> LossSample {
        let s = &self.spec;
        let ax = clamped_axis(
            (pose.x - s.origin[0]) / s.resolution[0] - 0.5,
            s.dims[0],
            s.resolution[0],
        );
        let ay = clamped_axis(
            (pose.y - s.origin[1]) / s.resolution[1] - 0.5,
            s.dims[1],
            s.resolution[1],
        );
        let rt = s.yaw_resolution();
        let at = periodic_axis(pose.theta / rt, s.dims[2], rt);
        let f = |i: usize, j: usize, k: usize| cell(s.index(i, j, k));
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        // value of the bilinear (x, y) interpolant on channel k
        let xy = |k: usize| {
            lerp(
                lerp(f(ax.lo, ay.lo, k), f(ax.hi, ay.lo, k), ax.t),
                lerp(f(ax.lo, ay.hi, k), f(ax.hi, ay.hi, k), ax.t),
                ay.t,
            )
        };
        let q = lerp(xy(at.lo), xy(at.hi), at.t);
        let dx_k = |k: usize| {
            lerp(
                f(ax.d_hi, ay.lo, k) - f(ax.d_lo, ay.lo, k),
                f(ax.d_hi, ay.hi, k) - f(ax.d_lo, ay.hi, k),
                ay.t,
            ) * ax.d_scale
        };
        let dy_k = |k: usize| {
            lerp(
                f(ax.lo, ay.d_hi, k) - f(ax.lo, ay.d_lo, k),
                f(ax.hi, ay.d_hi, k) - f(ax.hi, ay.d_lo, k),
                ax.t,
            ) * ay.d_scale
        };
        let gx = lerp(dx_k(at.lo), dx_k(at.hi), at.t);
        let gy = lerp(dy_k(at.lo), dy_k(at.hi), at.t);
        let gt = (xy(at.d_hi) - xy(at.d_lo)) * at.d_scale;
        LossSample {
            q,
            gradient: Vector3::new(gx, gy, gt),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let mut out = Vec::with_capacity(128 + 4 * self.values.len() + self.obstacle.len() / 8 + 1);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        for v in [
            s.origin[0],
            s.origin[1],
            s.resolution[0],
            s.resolution[1],
            s.yaw_resolution(),
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for d in s.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.config_digest);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut mask = vec![0u8; self.obstacle.len().div_ceil(8)];
        for (i, _) in self.obstacle.iter().enumerate().filter(|(_, &o)| o) {
            mask[i / 8] |= 1 << (i % 8);
        }
        out.extend_from_slice(&mask);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: "bad magic".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let rank_at = r.pos;
        let rank = r.u32()?;
        if rank != 3 {
            return Err(r.error_at(rank_at, format!("unsupported rank {rank}")));
        }
        let spec_at = r.pos;
        let origin = [r.f64()?, r.f64()?];
        let resolution = [r.f64()?, r.f64()?];
        let yaw_res = r.f64()?;
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            *d = usize::try_from(r.u64()?).map_err(|_| r.error_at(spec_at, "dims overflow".into()))?;
        }
        let spec = GridSpec {
            origin,
            resolution,
            dims,
        };
        spec.validate().map_err(|e| r.error_at(spec_at, e.to_string()))?;
        if (yaw_res * dims[2] as f64 - 2.0 * PI).abs() > 1e-9 {
            return Err(r.error_at(spec_at, "yaw channels do not cover a full turn".into()));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|p| p.checked_mul(dims[2]))
            .ok_or_else(|| r.error_at(spec_at, "dims overflow".into()))?;
        let mut config_digest = [0u8; 32];
        config_digest.copy_from_slice(r.take(32)?);
        let values_at = r.pos;
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| r.error_at(values_at, "dims overflow".into()))?,
        )?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mask_at = r.pos;
        let mask = r.take(n.div_ceil(8))?;
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, "trailing bytes".into()));
        }
        let obstacle: Vec<bool> = (0..n).map(|i| mask[i / 8] >> (i % 8) & 1 == 1).collect();
        for (i, (&v, &o)) in values.iter().zip(&obstacle).enumerate() {
            let ok = if o {
                v.is_nan()
            } else {
                v == f32::INFINITY || (v.is_finite() && v >= 0.0)
            };
            if !ok {
                let offset = if o { mask_at + i / 8 } else { values_at + 4 * i };
                return Err(r.error_at(offset, format!("cell {i} holds {v} (obstacle: {o})")));
            }
        }
        Ok(Self::new(spec, values, obstacle, config_digest))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// 8-bit pixel values of channel `k`, top row = largest y. Obstacles are
    /// 0, degenerate cells 1, and lower loss is brighter.
    pub fn channel_pixels(&self, k: usize) -> Vec<u8> {
        let [a, b, _] = self.spec.dims;
        let (lo, hi) = (self.min_finite().unwrap_or(0.0), self.max_finite().unwrap_or(0.0));
        let mut px = Vec::with_capacity(a * b);
        for j in (0..b).rev() {
            for i in 0..a {
                let idx = self.spec.index(i, j, k);
                let v = self.values[idx];
                px.push(if self.obstacle[idx] {
                    0
                } else if !v.is_finite() {
                    1
                } else if hi == lo {
                    255
                } else {
                    1 + (254.0 * (hi - v as f64) / (hi - lo)).round() as u8
                });
            }
        }
        px
    }

    /// Writes channel `k` as a binary graymap (P5).
    pub fn export_image(&self, k: usize, path: &Path) -> Result<()> {
        if k >= self.spec.dims[2] {
            return Err(Error::InvalidParameter(format!(
                "channel {k} out of range (grid has {})",
                self.spec.dims[2]
            )));
        }
        let mut out = format!("P5\n{} {}\n255\n", self.spec.dims[0], self.spec.dims[1]).into_bytes();
        out.extend_from_slice(&self.channel_pixels(k));
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, reason: String) -> Error {
        Error::Format { offset, reason }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.error_at(self.bytes.len(), format!("truncated: needed {n} bytes at {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
