//! Point-to-plane observations and their linearization.
//!
//! For a scan point `p` (sensor frame), pose `(x, y, theta)` and an associated
//! plane `(u, q)`, the residual is `h = u · (R(theta) p + t - q)` with
//! `t = (x, y, mount_height)`. The Jacobian row is
//! `[u_x, u_y, u_xy · R'(theta) p_xy]` and the right-hand side is `-h`.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::bvh::Bvh;
use crate::error::{Error, Result};
use crate::geometry::{rot2_derivative, PlanarPose};
use crate::scan::Scan;
use crate::scene::MapCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    /// Unit normal.
    pub normal: Vector3<f64>,
    /// A point on the plane.
    pub anchor: Vector3<f64>,
    pub valid: bool,
    /// Largest distance of a neighbor from the fitted plane.
    pub max_residual: f64,
}

impl PlaneFit {
    fn invalid() -> Self {
        Self {
            normal: Vector3::z(),
            anchor: Vector3::zeros(),
            valid: false,
            max_residual: f64::INFINITY,
        }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.anchor))
    }
}

/// Total-least-squares plane through the neighbors' centroid. Valid iff the
/// covariance has a well-defined smallest direction and every neighbor lies
/// within `d_thresh` of the plane.
pub fn fit_plane(neighbors: &[Vector3<f64>], d_thresh: f64) -> PlaneFit {
    if neighbors.len() < 3 {
        return PlaneFit::invalid();
    }
    let n = neighbors.len() as f64;
    let centroid = neighbors.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in neighbors {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l_min, l_mid, l_max) = (
        eig.eigenvalues[idx[0]],
        eig.eigenvalues[idx[1]],
        eig.eigenvalues[idx[2]],
    );
    // collinear or coincident points leave the normal undetermined
    if l_max <= 0.0 || l_mid <= 1e-9 * l_max || l_mid - l_min <= 1e-12 * l_max {
        return PlaneFit::invalid();
    }
    let normal = eig.eigenvectors.column(idx[0]).normalize();
    let mut fit = PlaneFit {
        normal,
        anchor: centroid,
        valid: true,
        max_residual: 0.0,
    };
    fit.max_residual = neighbors
        .iter()
        .map(|p| fit.signed_distance(p).abs())
        .fold(0.0, f64::max);
    fit.valid = fit.max_residual <= d_thresh;
    fit
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Association {
    /// Plane fitted through the k nearest map points.
    Knn,
    /// Plane of the nearest mesh triangle (ablation).
    Mesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationParams {
    pub k: usize,
    pub d_thresh: f64,
    /// Neighbors farther than this from the query point are ignored (m).
    pub max_neighbor_dist: f64,
    pub association: Association,
}

impl Default for ObservationParams {
    fn default() -> Self {
        Self {
            k: 5,
            d_thresh: 0.1,
            max_neighbor_dist: 0.5,
            association: Association::Knn,
        }
    }
}

/// Maps the scan to the sources the associations are drawn from.
pub struct MapRef<'a> {
    pub cloud: &'a MapCloud,
    pub bvh: Option<&'a Bvh>,
}

/// Linearized least-squares system at one pose.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    /// m x 3, columns (x, y, theta).
    pub a: DMatrix<f64>,
    /// `b_j = -h_j`.
    pub b: DVector<f64>,
    pub pose: PlanarPose,
    /// Index into the scan for each row.
    pub scan_index: Vec<usize>,
    pub planes: Vec<PlaneFit>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }
}

/// World coordinates of a sensor-frame point under the lifted pose.
pub fn to_world(pose: &PlanarPose, mount_height: f64, p: &Vector3<f64>) -> Vector3<f64> {
    let (r, t) = pose.lift(mount_height);
    r * p + t
}

/// Point-to-plane residual `h`.
pub fn residual(pose: &PlanarPose, mount_height: f64, p: &Vector3<f64>, plane: &PlaneFit) -> f64 {
    plane.signed_distance(&to_world(pose, mount_height, p))
}

/// Gradient of [`residual`] with respect to `(x, y, theta)`.
pub fn residual_gradient(pose: &PlanarPose, p: &Vector3<f64>, plane: &PlaneFit) -> [f64; 3] {
    let u = &plane.normal;
    let dr = rot2_derivative(pose.theta) * Vector2::new(p.x, p.y);
    [u.x, u.y, u.x * dr.x + u.y * dr.y]
}

fn associate(world: &Vector3<f64>, map: &MapRef<'_>, params: &ObservationParams) -> Option<PlaneFit> {
    match params.association {
        Association::Knn => {
            let neighbors = map.cloud.knn(world, params.k, params.max_neighbor_dist);
            if neighbors.len() < params.k {
                return None;
            }
            let fit = fit_plane(&neighbors, params.d_thresh);
            fit.valid.then_some(fit)
        }
        Association::Mesh => {
            let bvh = map.bvh?;
            let (tri, _, dist) = bvh.nearest_triangle(world, params.max_neighbor_dist)?;
            if dist > params.d_thresh {
                return None;
            }
            let [a, b, c] = *bvh.triangle(tri);
            let normal = (b - a).cross(&(c - a)).normalize();
            Some(PlaneFit {
                normal,
                anchor: a,
                valid: true,
                max_residual: 0.0,
            })
        }
    }
}

pub fn build_observations(
    scan: &Scan,
    map: &MapRef<'_>,
    pose: &PlanarPose,
    mount_height: f64,
    params: &ObservationParams,
) -> Result<ObservationSet> {
    if scan.is_empty() {
        return Err(Error::EmptyScan);
    }
    let (_, sensor) = pose.lift(mount_height);
    let mut rows: Vec<[f64; 3]> = Vec::with_capacity(scan.len());
    let mut rhs = Vec::with_capacity(scan.len());
    let mut scan_index = Vec::with_capacity(scan.len());
    let mut planes = Vec::with_capacity(scan.len());
    for (i, p) in scan.points.iter().enumerate() {
        let world = to_world(pose, mount_height, p);
        let Some(mut plane) = associate(&world, map, params) else {
            continue;
        };
        // orient normals toward the sensor; the sign does not change the
        // least-squares problem but keeps the output canonical
        if plane.normal.dot(&(sensor - plane.anchor)) < 0.0 {
            plane.normal = -plane.normal;
        }
        let h = plane.signed_distance(&world);
        let row = residual_gradient(pose, p, &plane);
        if !(h.is_finite() && row.iter().all(|v| v.is_finite())) {
            continue;
        }
        rows.push(row);
        rhs.push(-h);
        scan_index.push(i);
        planes.push(plane);
    }
    if rows.is_empty() {
        return Err(Error::NoAssociations);
    }
    let a = DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
    Ok(ObservationSet {
        a,
        b: DVector::from_vec(rhs),
        pose: *pose,
        scan_index,
        planes,
    })
}
