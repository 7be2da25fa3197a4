//! Cubic-spline trajectories over (x, y, θ) and their optimization against
//! a loss map.
//!
//! A trajectory is stored as knot positions and durations. Knot velocities
//! come from the clamped C² spline conditions (a tridiagonal solve), so
//! position, velocity and acceleration are continuous by construction.
//! The optimizer moves interior knots and `τ_i = ln T_i`, and differentiates
//! through the tridiagonal solve with its adjoint.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, PlanarPose};
use crate::lbfgs::{self, LbfgsParams, Status};
use crate::sdf::SdfField;
use crate::search::GridPath;
use crate::solm::SolmGrid;

/// Waypoint cap when a grid path is turned into a spline.
pub const MAX_SEGMENTS: usize = 30;
/// Shortest segment duration produced by the initializer (s).
pub const MIN_SEGMENT_TIME: f64 = 0.05;

fn hermite(s: f64) -> [f64; 4] {
    let (s2, s3) = (s * s, s * s * s);
    [
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    ]
}

fn hermite_d(s: f64) -> [f64; 4] {
    let s2 = s * s;
    [
        6.0 * s2 - 6.0 * s,
        3.0 * s2 - 4.0 * s + 1.0,
        -6.0 * s2 + 6.0 * s,
        3.0 * s2 - 2.0 * s,
    ]
}

fn hermite_dd(s: f64) -> [f64; 4] {
    [12.0 * s - 6.0, 6.0 * s - 4.0, -12.0 * s + 6.0, 6.0 * s - 2.0]
}

/// Solves the symmetric tridiagonal system with diagonal `diag` and
/// off-diagonal `off` (`off[i]` couples rows `i` and `i + 1`).
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![Vector3::zeros(); n];
    let mut denom = diag[0];
    c[0] = if n > 1 { off[0] / denom } else { 0.0 };
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = off[i] / denom;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] = d[i] - c[i] * d[i + 1];
    }
    d
}

/// Tridiagonal matrix of the C² knot conditions for interior knots
/// `1..N-1`.
fn knot_matrix(t: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = t.len();
    let diag = (1..n).map(|i| 2.0 * (1.0 / t[i - 1] + 1.0 / t[i])).collect();
    let off = (1..n.saturating_sub(1)).map(|i| 1.0 / t[i]).collect();
    (diag, off)
}

/// Knot velocities of the clamped cubic spline through `p` with end
/// velocities `v0` and `vn`.
pub fn knot_velocities(p: &[Vector3<f64>], t: &[f64], v0: Vector3<f64>, vn: Vector3<f64>) -> Vec<Vector3<f64>> {
    let n = t.len();
    let mut v = vec![v0; n + 1];
    v[n] = vn;
    if n < 2 {
        return v;
    }
    let (diag, off) = knot_matrix(t);
    let rhs: Vec<Vector3<f64>> = (1..n)
        .map(|i| {
            let mut r = 3.0 * (p[i] - p[i - 1]) / (t[i - 1] * t[i - 1]) + 3.0 * (p[i + 1] - p[i]) / (t[i] * t[i]);
            if i == 1 {
                r -= v0 / t[0];
            }
            if i == n - 1 {
                r -= vn / t[n - 1];
            }
            r
        })
        .collect();
    let inner = solve_tridiagonal(&diag, &off, &rhs);
    v[1..n].copy_from_slice(&inner);
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajState {
    /// (x, y, θ) with θ unwrapped.
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// The requested time was outside `[0, T_s]` and was clamped.
    pub clamped: bool,
}

impl TrajState {
    pub fn pose(&self) -> PlanarPose {
        PlanarPose::new(self.position.x, self.position.y, self.position.z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicSplineTraj {
    /// N + 1 knots, θ unwrapped.
    pub waypoints: Vec<Vector3<f64>>,
    /// Knot velocities; the first is the start velocity, the last zero.
    pub velocities: Vec<Vector3<f64>>,
    pub durations: Vec<f64>,
}

impl CubicSplineTraj {
    pub fn new(waypoints: Vec<Vector3<f64>>, durations: Vec<f64>, start_velocity: Vector3<f64>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::DegeneratePath);
        }
        if durations.len() + 1 != waypoints.len() {
            return Err(Error::InvalidParameter(format!(
                "{} waypoints need {} durations, got {}",
                waypoints.len(),
                waypoints.len() - 1,
                durations.len()
            )));
        }
        if let Some(t) = durations.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "segment durations must be positive, got {t}"
            )));
        }
        let velocities = knot_velocities(&waypoints, &durations, start_velocity, Vector3::zeros());
        Ok(Self {
            waypoints,
            velocities,
            durations,
        })
    }

    pub fn segment_count(&self) -> usize {
        self.durations.len()
    }

    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// Segment index and local time of a global time, clamped.
    fn locate(&self, t: f64) -> (usize, f64, bool) {
        let total = self.total_duration();
        let clamped = !(0.0..=total).contains(&t);
        let mut rest = t.clamp(0.0, total);
        let last = self.segment_count() - 1;
        for (i, &d) in self.durations.iter().enumerate() {
            if rest <= d || i == last {
                return (i, rest.min(d), clamped);
            }
            rest -= d;
        }
        unreachable!("durations are non-empty")
    }

    /// State at local time `tau` of segment `i`.
    pub fn segment_state(&self, i: usize, tau: f64) -> TrajState {
        let t = self.durations[i];
        let s = tau / t;
        let (p0, p1) = (self.waypoints[i], self.waypoints[i + 1]);
        let (v0, v1) = (self.velocities[i], self.velocities[i + 1]);
        let h = hermite(s);
        let hd = hermite_d(s);
        let hdd = hermite_dd(s);
        TrajState {
            position: h[0] * p0 + h[1] * t * v0 + h[2] * p1 + h[3] * t * v1,
            velocity: (hd[0] * p0 + hd[2] * p1) / t + hd[1] * v0 + hd[3] * v1,
            acceleration: (hdd[0] * p0 + hdd[2] * p1) / (t * t) + (hdd[1] * v0 + hdd[3] * v1) / t,
            clamped: false,
        }
    }

    pub fn evaluate(&self, t: f64) -> TrajState {
        let (i, tau, clamped) = self.locate(t);
        let mut st = self.segment_state(i, tau);
        if (clamped && t > 0.0) || (i == self.segment_count() - 1 && tau == self.durations[i]) {
            // exact terminal state
            st.position = self.waypoints[i + 1];
            st.velocity = self.velocities[i + 1];
        }
        st.clamped = clamped;
        st
    }

    /// Monomial coefficients in local time, rows `4i..4i+4` for segment `i`
    /// (constant term first), columns x, y, θ.
    pub fn coefficients(&self) -> DMatrix<f64> {
        let n = self.segment_count();
        let mut c = DMatrix::zeros(4 * n, 3);
        for i in 0..n {
            let t = self.durations[i];
            let (p0, p1) = (self.waypoints[i], self.waypoints[i + 1]);
            let (v0, v1) = (self.velocities[i], self.velocities[i + 1]);
            let a2 = (3.0 * (p1 - p0) - t * (2.0 * v0 + v1)) / (t * t);
            let a3 = (-2.0 * (p1 - p0) + t * (v0 + v1)) / (t * t * t);
            for (r, a) in [p0, v0, a2, a3].iter().enumerate() {
                for col in 0..3 {
                    c[(4 * i + r, col)] = a[col];
                }
            }
        }
        c
    }

    /// Poses sampled at a fixed rate, always including both ends.
    pub fn sample_uniform(&self, dt: f64) -> Vec<(f64, TrajState)> {
        let total = self.total_duration();
        let steps = (total / dt).floor() as usize;
        let mut out: Vec<(f64, TrajState)> = (0..=steps)
            .map(|k| (k as f64 * dt, self.evaluate(k as f64 * dt)))
            .collect();
        if total - steps as f64 * dt > 1e-9 {
            out.push((total, self.evaluate(total)));
        }
        out
    }

    /// Trajectory through the given poses with θ unwrapped and durations
    /// from an average speed (yaw counted at `l_yaw` m/rad).
    pub fn from_poses(poses: &[PlanarPose], v_avg: f64, l_yaw: f64, start_velocity: Vector3<f64>) -> Result<Self> {
        if poses.len() < 2 {
            return Err(Error::DegeneratePath);
        }
        if !(v_avg.is_finite() && v_avg > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "average speed must be positive, got {v_avg}"
            )));
        }
        let mut waypoints = vec![Vector3::new(poses[0].x, poses[0].y, poses[0].theta)];
        for p in &poses[1..] {
            let prev = waypoints.last().expect("non-empty").z;
            waypoints.push(Vector3::new(p.x, p.y, prev + wrap_angle(p.theta - prev)));
        }
        let durations = waypoints
            .windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                let len = (d.x * d.x + d.y * d.y + (l_yaw * d.z).powi(2)).sqrt();
                (len / v_avg).max(MIN_SEGMENT_TIME)
            })
            .collect();
        Self::new(waypoints, durations, start_velocity)
    }
}

impl CubicSplineTraj {
    /// Same knots and durations with every interior yaw replaced by the
    /// direction of travel through that knot (unwrapped).
    pub fn with_motion_heading(&self) -> Result<Self> {
        let p = &self.waypoints;
        let mut waypoints = p.clone();
        for i in 1..p.len() - 1 {
            let d = p[i + 1] - p[i - 1];
            if d.x.hypot(d.y) < 1e-12 {
                continue;
            }
            let prev = waypoints[i - 1].z;
            waypoints[i].z = prev + wrap_angle(d.y.atan2(d.x) - prev);
        }
        let last = waypoints.len() - 1;
        let before = waypoints[last - 1].z;
        waypoints[last].z = before + wrap_angle(p[last].z - before);
        Self::new(waypoints, self.durations.clone(), self.velocities[0])
    }
}

/// Indices kept when a path of `len` cells is thinned to at most
/// [`MAX_SEGMENTS`] segments.
pub fn downsample_indices(len: usize) -> Vec<usize> {
    if len <= 1 {
        return (0..len).collect();
    }
    let stride = (len - 1).div_ceil(MAX_SEGMENTS).max(1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if *idx.last().expect("non-empty") != len - 1 {
        idx.push(len - 1);
    }
    idx
}

/// Spline through the (downsampled) cell centers of a grid path.
pub fn init_from_path(path: &GridPath, v_avg: f64, l_yaw: f64) -> Result<CubicSplineTraj> {
    if path.cells.len() < 2 {
        return Err(Error::DegeneratePath);
    }
    let poses: Vec<PlanarPose> = downsample_indices(path.poses.len())
        .into_iter()
        .map(|i| path.poses[i])
        .collect();
    CubicSplineTraj::from_poses(&poses, v_avg, l_yaw, Vector3::zeros())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotKind {
    Omnidirectional,
    Nonholonomic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlmParams {
    pub initial_multiplier: f64,
    pub rho0: f64,
    pub gamma: f64,
    /// Cap on the multiplier magnitude.
    pub cap: f64,
    /// Ceiling for the penalty weight.
    pub rho_max: f64,
    /// Outer-loop tolerance on the largest constraint violation.
    pub tolerance: f64,
    pub max_outer: usize,
}

impl Default for AlmParams {
    fn default() -> Self {
        Self {
            initial_multiplier: 0.0,
            rho0: 1.0,
            gamma: 10.0,
            cap: 1e4,
            rho_max: 1e8,
            tolerance: 1e-4,
            max_outer: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptParams {
    /// Weight of the total duration.
    pub rho_t: f64,
    /// Weight of the integrated loss.
    pub q_weight: f64,
    pub v_mlon: f64,
    pub v_mlat: f64,
    pub w_max: f64,
    /// Supplied by the caller, not read from config files.
    #[serde(skip)]
    pub r_safe: f64,
    /// Quadrature samples per segment.
    pub kappa: usize,
    pub w_safety: f64,
    pub w_dynamics: f64,
    /// Penalties act on limits shrunk by this fraction, so the true limits
    /// hold between quadrature samples.
    pub limit_margin: f64,
    pub alm: AlmParams,
    pub lbfgs: LbfgsParams,
    pub robot: RobotKind,
}

impl Default for OptParams {
    fn default() -> Self {
        Self {
            rho_t: 0.05,
            q_weight: 1.0,
            v_mlon: 1.0,
            v_mlat: 0.5,
            w_max: 1.0,
            r_safe: 0.3,
            kappa: 8,
            w_safety: 1e5,
            w_dynamics: 1e5,
            limit_margin: 0.05,
            alm: AlmParams::default(),
            lbfgs: LbfgsParams::default(),
            robot: RobotKind::Omnidirectional,
        }
    }
}

impl OptParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v_mlon", self.v_mlon),
            ("v_mlat", self.v_mlat),
            ("w_max", self.w_max),
            ("r_safe", self.r_safe),
            ("alm.rho0", self.alm.rho0),
            ("alm.cap", self.alm.cap),
            ("alm.rho_max", self.alm.rho_max),
            ("alm.tolerance", self.alm.tolerance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("rho_t", self.rho_t),
            ("q_weight", self.q_weight),
            ("w_safety", self.w_safety),
            ("w_dynamics", self.w_dynamics),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.kappa < 4 {
            return Err(Error::InvalidParameter(format!(
                "kappa must be >= 4, got {}",
                self.kappa
            )));
        }
        if !(0.0..0.5).contains(&self.limit_margin) {
            return Err(Error::InvalidParameter(format!(
                "limit_margin must lie in [0, 0.5), got {}",
                self.limit_margin
            )));
        }
        if self.alm.gamma < 1.0 {
            return Err(Error::InvalidParameter("alm.gamma must be >= 1".into()));
        }
        Ok(())
    }
}

/// Multipliers and penalty of the nonholonomic equality, one multiplier per
/// quadrature sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmState {
    pub lambda: Vec<f64>,
    pub rho: f64,
}

fn cubic_hinge(g: f64) -> (f64, f64) {
    if g > 0.0 {
        (g * g * g, 3.0 * g * g)
    } else {
        (0.0, 0.0)
    }
}

/// Lateral-slip residual `ẋ sin θ − ẏ cos θ`.
pub fn nonholonomic_residual(position: &Vector3<f64>, velocity: &Vector3<f64>) -> f64 {
    let (s, c) = position.z.sin_cos();
    velocity.x * s - velocity.y * c
}

/// Body-frame (longitudinal, lateral) speed.
pub fn body_velocity(position: &Vector3<f64>, velocity: &Vector3<f64>) -> (f64, f64) {
    let (s, c) = position.z.sin_cos();
    (c * velocity.x + s * velocity.y, -s * velocity.x + c * velocity.y)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct SampleTerms {
    /// Integrand (multiplied by dt) and its gradients.
    f_int: f64,
    gp_int: Vector3<f64>,
    gv_int: Vector3<f64>,
    /// Pointwise terms.
    f_pt: f64,
    gp_pt: Vector3<f64>,
    gv_pt: Vector3<f64>,
}

/// Objective parts without the augmented-Lagrangian terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Breakdown {
    pub loss_integral: f64,
    pub time: f64,
    pub safety: f64,
    pub dynamics: f64,
    pub total: f64,
}

/// The optimization problem for a fixed start, goal, loss map and SDF.
pub struct Problem<'a> {
    solm: &'a SolmGrid,
    dense: Vec<f64>,
    sdf: &'a SdfField,
    params: OptParams,
    start: Vector3<f64>,
    goal: Vector3<f64>,
    start_velocity: Vector3<f64>,
    segments: usize,
}

impl<'a> Problem<'a> {
    pub fn new(traj: &CubicSplineTraj, solm: &'a SolmGrid, sdf: &'a SdfField, params: &OptParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            solm,
            dense: solm.dense_values(),
            sdf,
            params: *params,
            start: traj.waypoints[0],
            goal: *traj.waypoints.last().expect("at least two waypoints"),
            start_velocity: traj.velocities[0],
            segments: traj.segment_count(),
        })
    }

    pub fn sample_count(&self) -> usize {
        self.segments * self.params.kappa
    }

    pub fn dimension(&self) -> usize {
        3 * (self.segments - 1) + self.segments
    }

    /// Decision vector: interior knots, then `ln T_i`.
    pub fn pack(&self, traj: &CubicSplineTraj) -> DVector<f64> {
        let n = self.segments;
        let mut z = DVector::zeros(self.dimension());
        for i in 1..n {
            for c in 0..3 {
                z[3 * (i - 1) + c] = traj.waypoints[i][c];
            }
        }
        for i in 0..n {
            z[3 * (n - 1) + i] = traj.durations[i].ln();
        }
        z
    }

    fn unpack_raw(&self, z: &DVector<f64>) -> (Vec<Vector3<f64>>, Vec<f64>) {
        let n = self.segments;
        let mut p = Vec::with_capacity(n + 1);
        p.push(self.start);
        for i in 1..n {
            p.push(Vector3::new(z[3 * (i - 1)], z[3 * (i - 1) + 1], z[3 * (i - 1) + 2]));
        }
        p.push(self.goal);
        let t = (0..n).map(|i| z[3 * (n - 1) + i].exp()).collect();
        (p, t)
    }

    pub fn unpack(&self, z: &DVector<f64>) -> CubicSplineTraj {
        let (p, t) = self.unpack_raw(z);
        let v = knot_velocities(&p, &t, self.start_velocity, Vector3::zeros());
        CubicSplineTraj {
            waypoints: p,
            velocities: v,
            durations: t,
        }
    }

    fn sample_fraction(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.params.kappa as f64
    }

    fn sample_terms(
        &self,
        pos: &Vector3<f64>,
        vel: &Vector3<f64>,
        alm: Option<(f64, f64)>,
        parts: &mut Breakdown,
        dt: f64,
    ) -> SampleTerms {
        let p = &self.params;
        let mut st = SampleTerms::default();
        if p.q_weight > 0.0 {
            let ls = self
                .solm
                .interpolate_dense(&self.dense, &PlanarPose::new(pos.x, pos.y, pos.z));
            st.f_int += p.q_weight * ls.q;
            st.gp_int += p.q_weight * ls.gradient;
            parts.loss_integral += p.q_weight * ls.q * dt;
        }
        if p.w_safety > 0.0 {
            let sd = self.sdf.sample(&Vector2::new(pos.x, pos.y));
            let (h, dh) = cubic_hinge(p.r_safe * (1.0 + p.limit_margin) - sd.distance);
            st.f_int += p.w_safety * h;
            st.gp_int.x -= p.w_safety * dh * sd.gradient.x;
            st.gp_int.y -= p.w_safety * dh * sd.gradient.y;
            parts.safety += p.w_safety * h * dt;
        }
        if p.w_dynamics > 0.0 {
            let shrink = 1.0 - p.limit_margin;
            let (s, c) = pos.z.sin_cos();
            let (lon, lat) = body_velocity(pos, vel);
            let mut add = |g: f64, dg: Vector3<f64>, dtheta: f64| {
                let (h, dh) = cubic_hinge(g);
                st.f_int += p.w_dynamics * h;
                st.gv_int += p.w_dynamics * dh * dg;
                st.gp_int.z += p.w_dynamics * dh * dtheta;
                parts.dynamics += p.w_dynamics * h * dt;
            };
            add(
                lon * lon - (shrink * p.v_mlon).powi(2),
                Vector3::new(2.0 * lon * c, 2.0 * lon * s, 0.0),
                2.0 * lon * lat,
            );
            add(
                lat * lat - (shrink * p.v_mlat).powi(2),
                Vector3::new(-2.0 * lat * s, 2.0 * lat * c, 0.0),
                -2.0 * lat * lon,
            );
            add(
                vel.z * vel.z - (shrink * p.w_max).powi(2),
                Vector3::new(0.0, 0.0, 2.0 * vel.z),
                0.0,
            );
        }
        if let Some((lambda, rho)) = alm {
            let h = nonholonomic_residual(pos, vel);
            let (s, c) = pos.z.sin_cos();
            st.f_pt += lambda * h + 0.5 * rho * h * h;
            let d = lambda + rho * h;
            st.gv_pt += Vector3::new(d * s, -d * c, 0.0);
            st.gp_pt.z += d * (vel.x * c + vel.y * s);
        }
        st
    }

    /// Objective and gradient with respect to the decision vector. With
    /// `alm`, the augmented-Lagrangian terms of the nonholonomic equality
    /// are included.
    pub fn objective(&self, z: &DVector<f64>, alm: Option<&AlmState>) -> (f64, DVector<f64>, Breakdown) {
        let n = self.segments;
        let kappa = self.params.kappa;
        let (p, t) = self.unpack_raw(z);
        let v = knot_velocities(&p, &t, self.start_velocity, Vector3::zeros());
        let mut gp = vec![Vector3::zeros(); n + 1];
        let mut gv = vec![Vector3::zeros(); n + 1];
        let mut gt = vec![self.params.rho_t; n];
        let mut parts = Breakdown {
            time: self.params.rho_t * t.iter().sum::<f64>(),
            ..Default::default()
        };
        let mut f = parts.time;
        for i in 0..n {
            let ti = t[i];
            let dt = ti / kappa as f64;
            for k in 0..kappa {
                let s = self.sample_fraction(k);
                let h = hermite(s);
                let hd = hermite_d(s);
                let pos = h[0] * p[i] + h[1] * ti * v[i] + h[2] * p[i + 1] + h[3] * ti * v[i + 1];
                let vel_p = (hd[0] * p[i] + hd[2] * p[i + 1]) / ti;
                let vel = vel_p + hd[1] * v[i] + hd[3] * v[i + 1];
                let a = alm.map(|a| (a.lambda[i * kappa + k], a.rho));
                let st = self.sample_terms(&pos, &vel, a, &mut parts, dt);
                f += dt * st.f_int + st.f_pt;
                let g_pos = dt * st.gp_int + st.gp_pt;
                let g_vel = dt * st.gv_int + st.gv_pt;
                gp[i] += h[0] * g_pos + hd[0] / ti * g_vel;
                gp[i + 1] += h[2] * g_pos + hd[2] / ti * g_vel;
                gv[i] += h[1] * ti * g_pos + hd[1] * g_vel;
                gv[i + 1] += h[3] * ti * g_pos + hd[3] * g_vel;
                gt[i] += st.f_int / kappa as f64 + g_pos.dot(&(h[1] * v[i] + h[3] * v[i + 1])) - g_vel.dot(&vel_p) / ti;
            }
        }
        if n >= 2 {
            // adjoint of the knot-velocity solve
            let (diag, off) = knot_matrix(&t);
            let mu = solve_tridiagonal(&diag, &off, &gv[1..n]);
            for i in 1..n {
                let m = mu[i - 1];
                let (tm, tp) = (t[i - 1], t[i]);
                let df_dtm = -(v[i - 1] + 2.0 * v[i]) / (tm * tm) + 6.0 * (p[i] - p[i - 1]) / (tm * tm * tm);
                let df_dtp = -(2.0 * v[i] + v[i + 1]) / (tp * tp) + 6.0 * (p[i + 1] - p[i]) / (tp * tp * tp);
                gt[i - 1] -= m.dot(&df_dtm);
                gt[i] -= m.dot(&df_dtp);
                gp[i - 1] -= 3.0 / (tm * tm) * m;
                gp[i] -= (3.0 / (tp * tp) - 3.0 / (tm * tm)) * m;
                gp[i + 1] += 3.0 / (tp * tp) * m;
            }
        }
        let mut grad = DVector::zeros(self.dimension());
        for i in 1..n {
            for c in 0..3 {
                grad[3 * (i - 1) + c] = gp[i][c];
            }
        }
        for i in 0..n {
            grad[3 * (n - 1) + i] = gt[i] * t[i];
        }
        parts.total = parts.loss_integral + parts.time + parts.safety + parts.dynamics;
        (f, grad, parts)
    }

    /// Nonholonomic residual at every quadrature sample.
    pub fn residuals(&self, traj: &CubicSplineTraj) -> Vec<f64> {
        let kappa = self.params.kappa;
        let mut out = Vec::with_capacity(self.sample_count());
        for i in 0..self.segments {
            for k in 0..kappa {
                let st = traj.segment_state(i, self.sample_fraction(k) * traj.durations[i]);
                out.push(nonholonomic_residual(&st.position, &st.velocity));
            }
        }
        out
    }

    /// True when a quadrature sample of `traj` lies in an obstacle.
    pub fn touches_obstacle(&self, traj: &CubicSplineTraj) -> bool {
        (0..self.segments).any(|i| {
            (0..self.params.kappa).any(|k| {
                let st = traj.segment_state(i, self.sample_fraction(k) * traj.durations[i]);
                let pose = st.pose();
                let in_obstacle = self
                    .solm
                    .spec
                    .cell_of(&pose)
                    .is_some_and(|(a, b, c)| self.solm.obstacle[self.solm.spec.index(a, b, c)]);
                in_obstacle || self.sdf.sample(&Vector2::new(pose.x, pose.y)).distance <= 0.0
            })
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OptFlags {
    /// The initial trajectory crosses an obstacle.
    pub infeasible_start: bool,
    /// The inner solver stopped because no step decreased the objective
    /// while the gradient was still large.
    pub line_search_failed: bool,
    /// The nonholonomic tolerance was not met within the outer iterations.
    pub constraint_not_met: bool,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub traj: CubicSplineTraj,
    pub breakdown: Breakdown,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub max_residual: f64,
    pub flags: OptFlags,
}

pub fn optimize(traj: &CubicSplineTraj, solm: &SolmGrid, sdf: &SdfField, params: &OptParams) -> Result<OptResult> {
    let problem = Problem::new(traj, solm, sdf, params)?;
    let mut flags = OptFlags {
        infeasible_start: problem.touches_obstacle(traj),
        ..Default::default()
    };
    let mut z = problem.pack(traj);
    let mut inner = 0;
    let mut outer = 0;
    let mut max_residual = 0.0;
    let mut record = |r: &lbfgs::LbfgsResult, flags: &mut OptFlags| {
        inner += r.iterations;
        // a failed line search near stationarity is the expected end on a
        // piecewise-smooth objective
        flags.line_search_failed = r.status == Status::LineSearchFailed && r.gradient.amax() > 1e-3;
    };
    match params.robot {
        RobotKind::Omnidirectional => {
            let r = lbfgs::minimize(
                |x: &DVector<f64>| {
                    let (f, g, _) = problem.objective(x, None);
                    (f, g)
                },
                z,
                &params.lbfgs,
            );
            record(&r, &mut flags);
            z = r.x;
        }
        RobotKind::Nonholonomic => {
            let mut state = AlmState {
                lambda: vec![params.alm.initial_multiplier; problem.sample_count()],
                rho: params.alm.rho0,
            };
            flags.constraint_not_met = true;
            for _ in 0..params.alm.max_outer {
                outer += 1;
                let r = lbfgs::minimize(
                    |x: &DVector<f64>| {
                        let (f, g, _) = problem.objective(x, Some(&state));
                        (f, g)
                    },
                    z,
                    &params.lbfgs,
                );
                record(&r, &mut flags);
                z = r.x;
                let h = problem.residuals(&problem.unpack(&z));
                max_residual = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if max_residual < params.alm.tolerance {
                    flags.constraint_not_met = false;
                    break;
                }
                let cap = params.alm.cap;
                for (l, hv) in state.lambda.iter_mut().zip(&h) {
                    *l = (*l + state.rho * hv).clamp(-cap, cap);
                }
                state.rho = (state.rho * params.alm.gamma).min(params.alm.rho_max);
            }
        }
    }
    let (_, _, breakdown) = problem.objective(&z, None);
    Ok(OptResult {
        traj: problem.unpack(&z),
        breakdown,
        inner_iterations: inner,
        outer_iterations: outer,
        max_residual,
        flags,
    })
}

/// Largest constraint excesses over a dense sampling of the trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Audit {
    pub samples: usize,
    pub v_lon_excess: f64,
    pub v_lat_excess: f64,
    pub w_excess: f64,
    /// `r_safe − SDF`, positive when too close.
    pub safety_excess: f64,
    pub nonholonomic: f64,
}

impl Audit {
    pub fn passes(&self, tol: f64, nonholonomic: bool) -> bool {
        self.v_lon_excess <= tol
            && self.v_lat_excess <= tol
            && self.w_excess <= tol
            && self.safety_excess <= tol
            && (!nonholonomic || self.nonholonomic < tol)
    }
}

/// Checks limits at `per_segment` evenly spaced points of every segment
/// (both ends included).
pub fn audit(traj: &CubicSplineTraj, sdf: &SdfField, params: &OptParams, per_segment: usize) -> Audit {
    let mut a = Audit::default();
    for i in 0..traj.segment_count() {
        for k in 0..=per_segment {
            let st = traj.segment_state(i, traj.durations[i] * k as f64 / per_segment as f64);
            let (lon, lat) = body_velocity(&st.position, &st.velocity);
            a.samples += 1;
            a.v_lon_excess = a.v_lon_excess.max(lon.abs() - params.v_mlon);
            a.v_lat_excess = a.v_lat_excess.max(lat.abs() - params.v_mlat);
            a.w_excess = a.w_excess.max(st.velocity.z.abs() - params.w_max);
            let d = sdf.sample(&Vector2::new(st.position.x, st.position.y)).distance;
            a.safety_excess = a.safety_excess.max(params.r_safe - d);
            a.nonholonomic = a
                .nonholonomic
                .max(nonholonomic_residual(&st.position, &st.velocity).abs());
        }
    }
    a
}
