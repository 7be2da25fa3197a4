//! Declarative synthetic worlds compiled to a triangle mesh, a sampled map
//! cloud with a k-NN index, and a 2-D occupancy grid.
//!
//! Scene files are TOML:
//!
//! ```toml
//! name = "houses"
//!
//! [[primitive]]
//! kind = "box"
//! center = [2.0, 1.0]
//! yaw = 0.3
//! size = [2.0, 1.5, 2.5]
//!
//! [[primitive]]
//! kind = "heightfield"
//! center = [0.0, 0.0]
//! size = [20.0, 20.0]
//! samples = 101
//! amplitude = 0.08
//! correlation_length = 0.5
//! seed = 7
//! ```
//!
//! Every primitive accepts `center` (m), `yaw` (rad, default 0) and
//! `base_z` (m, default 0). Kind-specific keys:
//!
//! | kind           | keys                                                        |
//! |----------------|-------------------------------------------------------------|
//! | `box`          | `size = [lx, ly, lz]`                                       |
//! | `wall`         | `length`, `height` (a vertical quad along the local x axis) |
//! | `ground_plane` | `size = [lx, ly]`                                           |
//! | `heightfield`  | `size`, `samples` (vertices per side), `amplitude`, `correlation_length`, `seed` |
//!
//! Unknown keys are rejected.

use std::path::Path;

use kiddo::{KdTree, SquaredEuclidean};
use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::rot2;
use crate::seed;

fn zero() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxPrimitive {
    pub center: [f64; 2],
    #[serde(default = "zero")]
    pub yaw: f64,
    #[serde(default = "zero")]
    pub base_z: f64,
    pub size: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallPrimitive {
    pub center: [f64; 2],
    #[serde(default = "zero")]
    pub yaw: f64,
    #[serde(default = "zero")]
    pub base_z: f64,
    pub length: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundPlanePrimitive {
    pub center: [f64; 2],
    #[serde(default = "zero")]
    pub yaw: f64,
    #[serde(default = "zero")]
    pub base_z: f64,
    pub size: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeightfieldPrimitive {
    pub center: [f64; 2],
    #[serde(default = "zero")]
    pub yaw: f64,
    #[serde(default = "zero")]
    pub base_z: f64,
    pub size: [f64; 2],
    /// Vertices per side.
    pub samples: usize,
    pub amplitude: f64,
    pub correlation_length: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Box(BoxPrimitive),
    Wall(WallPrimitive),
    GroundPlane(GroundPlanePrimitive),
    Heightfield(HeightfieldPrimitive),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDescription {
    #[serde(default)]
    pub name: String,
    #[serde(rename = "primitive", default)]
    pub primitives: Vec<Primitive>,
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidScene(format!("{what} must be positive, got {v}")))
    }
}

impl SceneDescription {
    pub fn new(name: impl Into<String>, primitives: Vec<Primitive>) -> Self {
        Self {
            name: name.into(),
            primitives,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidScene("scene has no primitives".into()));
        }
        for p in &self.primitives {
            match p {
                Primitive::Box(b) => {
                    for (k, v) in b.size.iter().enumerate() {
                        positive(&format!("box size[{k}]"), *v)?;
                    }
                }
                Primitive::Wall(w) => {
                    positive("wall length", w.length)?;
                    positive("wall height", w.height)?;
                }
                Primitive::GroundPlane(g) => {
                    positive("ground size x", g.size[0])?;
                    positive("ground size y", g.size[1])?;
                }
                Primitive::Heightfield(h) => {
                    positive("heightfield size x", h.size[0])?;
                    positive("heightfield size y", h.size[1])?;
                    positive("heightfield correlation length", h.correlation_length)?;
                    if h.samples < 2 {
                        return Err(Error::InvalidScene(
                            "heightfield needs at least 2 samples per side".into(),
                        ));
                    }
                    if !(h.amplitude >= 0.0) {
                        return Err(Error::InvalidScene("heightfield amplitude must be non-negative".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> std::result::Result<Self, String> {
        toml::from_str(s).map_err(|e| e.to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene description serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let desc = Self::from_toml_str(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        desc.validate()?;
        Ok(desc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn triangle(&self, i: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[i];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    fn push_quad(&mut self, q: [Vector3<f64>; 4]) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&q);
        self.triangles.push([base, base + 1, base + 2]);
        self.triangles.push([base, base + 2, base + 3]);
    }
}

fn place(center: [f64; 2], yaw: f64, local: Vector2<f64>, z: f64) -> Vector3<f64> {
    let p = rot2(yaw) * local + Vector2::new(center[0], center[1]);
    Vector3::new(p.x, p.y, z)
}

fn emit_box(mesh: &mut TriangleMesh, b: &BoxPrimitive) {
    let (hx, hy) = (b.size[0] / 2.0, b.size[1] / 2.0);
    let (z0, z1) = (b.base_z, b.base_z + b.size[2]);
    let corners = [
        Vector2::new(-hx, -hy),
        Vector2::new(hx, -hy),
        Vector2::new(hx, hy),
        Vector2::new(-hx, hy),
    ];
    let lo: Vec<_> = corners.iter().map(|c| place(b.center, b.yaw, *c, z0)).collect();
    let hi: Vec<_> = corners.iter().map(|c| place(b.center, b.yaw, *c, z1)).collect();
    mesh.push_quad([lo[0], lo[3], lo[2], lo[1]]);
    mesh.push_quad([hi[0], hi[1], hi[2], hi[3]]);
    for k in 0..4 {
        let n = (k + 1) % 4;
        mesh.push_quad([lo[k], lo[n], hi[n], hi[k]]);
    }
}

fn emit_wall(mesh: &mut TriangleMesh, w: &WallPrimitive) {
    let h = w.length / 2.0;
    let (z0, z1) = (w.base_z, w.base_z + w.height);
    let a = Vector2::new(-h, 0.0);
    let b = Vector2::new(h, 0.0);
    mesh.push_quad([
        place(w.center, w.yaw, a, z0),
        place(w.center, w.yaw, b, z0),
        place(w.center, w.yaw, b, z1),
        place(w.center, w.yaw, a, z1),
    ]);
}

fn emit_ground(mesh: &mut TriangleMesh, g: &GroundPlanePrimitive) {
    let (hx, hy) = (g.size[0] / 2.0, g.size[1] / 2.0);
    let q = [
        Vector2::new(-hx, -hy),
        Vector2::new(hx, -hy),
        Vector2::new(hx, hy),
        Vector2::new(-hx, hy),
    ];
    mesh.push_quad(q.map(|c| place(g.center, g.yaw, c, g.base_z)));
}

/// Value noise: a lattice of uniform values in [-1, 1] with spacing equal to
/// the correlation length, bilinearly interpolated.
pub struct ValueNoise {
    lattice: Vec<f64>,
    nx: usize,
    ny: usize,
    spacing: f64,
    origin: Vector2<f64>,
}

impl ValueNoise {
    pub fn new(size: [f64; 2], spacing: f64, seed_value: u64) -> Self {
        let nx = (size[0] / spacing).ceil() as usize + 2;
        let ny = (size[1] / spacing).ceil() as usize + 2;
        let mut rng = seed::rng(seed_value, 0);
        let lattice = (0..nx * ny).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Self {
            lattice,
            nx,
            ny,
            spacing,
            origin: Vector2::new(-size[0] / 2.0, -size[1] / 2.0),
        }
    }

    pub fn sample(&self, local: Vector2<f64>) -> f64 {
        let u = ((local.x - self.origin.x) / self.spacing).max(0.0);
        let v = ((local.y - self.origin.y) / self.spacing).max(0.0);
        let i = (u.floor() as usize).min(self.nx - 2);
        let j = (v.floor() as usize).min(self.ny - 2);
        let (fu, fv) = (u - i as f64, v - j as f64);
        let at = |a: usize, b: usize| self.lattice[b * self.nx + a];
        let v0 = at(i, j) * (1.0 - fu) + at(i + 1, j) * fu;
        let v1 = at(i, j + 1) * (1.0 - fu) + at(i + 1, j + 1) * fu;
        v0 * (1.0 - fv) + v1 * fv
    }
}

fn emit_heightfield(mesh: &mut TriangleMesh, h: &HeightfieldPrimitive) {
    let noise = ValueNoise::new(h.size, h.correlation_length, h.seed);
    let g = h.samples;
    let base = mesh.vertices.len() as u32;
    for j in 0..g {
        for i in 0..g {
            let lx = -h.size[0] / 2.0 + h.size[0] * i as f64 / (g - 1) as f64;
            let ly = -h.size[1] / 2.0 + h.size[1] * j as f64 / (g - 1) as f64;
            let local = Vector2::new(lx, ly);
            let z = h.base_z + h.amplitude * noise.sample(local);
            mesh.vertices.push(place(h.center, h.yaw, local, z));
        }
    }
    let idx = |i: usize, j: usize| base + (j * g + i) as u32;
    for j in 0..g - 1 {
        for i in 0..g - 1 {
            mesh.triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            mesh.triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
}

pub fn compile_scene(desc: &SceneDescription) -> Result<TriangleMesh> {
    desc.validate()?;
    let mut mesh = TriangleMesh {
        vertices: Vec::new(),
        triangles: Vec::new(),
    };
    for p in &desc.primitives {
        match p {
            Primitive::Box(b) => emit_box(&mut mesh, b),
            Primitive::Wall(w) => emit_wall(&mut mesh, w),
            Primitive::GroundPlane(g) => emit_ground(&mut mesh, g),
            Primitive::Heightfield(h) => emit_heightfield(&mut mesh, h),
        }
    }
    Ok(mesh)
}

/// Prior map: points sampled on the mesh surface plus a k-d tree.
pub struct MapCloud {
    pub points: Vec<Vector3<f64>>,
    tree: KdTree<f64, 3>,
}

impl std::fmt::Debug for MapCloud {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MapCloud").field("points", &self.points.len()).finish()
    }
}

impl MapCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree: KdTree<f64, 3> = (&raw).into();
        Self { points, tree }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Up to `k` nearest points within `max_dist`, nearest first.
    pub fn knn(&self, query: &Vector3<f64>, k: usize, max_dist: f64) -> Vec<Vector3<f64>> {
        let Some(k) = std::num::NonZeroUsize::new(k) else {
            return Vec::new();
        };
        if self.points.is_empty() {
            return Vec::new();
        }
        let q = [query.x, query.y, query.z];
        let r2 = max_dist * max_dist;
        self.tree
            .nearest_n::<SquaredEuclidean>(&q, k.get())
            .into_iter()
            .take_while(|n| n.distance <= r2)
            .map(|n| self.points[n.item as usize])
            .collect()
    }
}

/// Area-weighted uniform surface sampling; `round(density * area)` points.
pub fn sample_map_cloud(mesh: &TriangleMesh, density: f64, seed_value: u64) -> Result<MapCloud> {
    if !(density > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sampling density must be positive, got {density}"
        )));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for i in 0..mesh.triangles.len() {
        total += mesh.triangle_area(i);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::ZeroArea);
    }
    let count = (density * total).round() as usize;
    let mut rng = seed::rng(seed_value, seed::stream::MAP);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let r = rng.gen::<f64>() * total;
        let tri = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(tri);
        let (u, v): (f64, f64) = (rng.gen(), rng.gen());
        let su = u.sqrt();
        points.push(a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v));
    }
    Ok(MapCloud::from_points(points))
}

/// Placement of a regular 2-D grid in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

impl GridFrame {
    /// Smallest resolution-aligned frame covering `[lo, hi]`.
    pub fn covering(lo: [f64; 2], hi: [f64; 2], resolution: f64) -> Self {
        let ox = (lo[0] / resolution).floor() * resolution;
        let oy = (lo[1] / resolution).floor() * resolution;
        let width = (((hi[0] - ox) / resolution) - 1e-9).ceil().max(1.0) as usize;
        let height = (((hi[1] - oy) / resolution) - 1e-9).ceil().max(1.0) as usize;
        Self {
            origin: [ox, oy],
            resolution,
            width,
            height,
        }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let u = ((x - self.origin[0]) / self.resolution).floor();
        let v = ((y - self.origin[1]) / self.resolution).floor();
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            None
        } else {
            Some((u as usize, v as usize))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid2D {
    pub frame: GridFrame,
    /// Row-major, x fastest.
    pub cells: Vec<bool>,
}

impl OccupancyGrid2D {
    pub fn new(frame: GridFrame) -> Self {
        Self {
            cells: vec![false; frame.width * frame.height],
            frame,
        }
    }

    pub fn width(&self) -> usize {
        self.frame.width
    }

    pub fn height(&self) -> usize {
        self.frame.height
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.frame.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[j * self.frame.width + i] = v;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Cells are tested shifted down in x and y by this much, so geometry on a
/// cell boundary marks the cell above it and not the one below (half-open
/// cells).
pub const CELL_BOUNDARY_EPS: f64 = 1e-9;

/// Separating-axis test between a triangle and an axis-aligned box.
pub fn triangle_intersects_aabb(tri: &[Vector3<f64>; 3], center: &Vector3<f64>, half: &Vector3<f64>) -> bool {
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];
    // box face normals
    for k in 0..3 {
        let lo = v[0][k].min(v[1][k]).min(v[2][k]);
        let hi = v[0][k].max(v[1][k]).max(v[2][k]);
        if lo > half[k] || hi < -half[k] {
            return false;
        }
    }
    let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    // triangle plane
    let n = e[0].cross(&e[1]);
    let r = half.x * n.x.abs() + half.y * n.y.abs() + half.z * n.z.abs();
    if n.dot(&v[0]).abs() > r {
        return false;
    }
    // edge cross products
    for edge in &e {
        for k in 0..3 {
            let mut axis = Vector3::zeros();
            axis[k] = 1.0;
            let a = axis.cross(edge);
            if a.norm_squared() == 0.0 {
                continue;
            }
            let p = [a.dot(&v[0]), a.dot(&v[1]), a.dot(&v[2])];
            let lo = p[0].min(p[1]).min(p[2]);
            let hi = p[0].max(p[1]).max(p[2]);
            let r = half.x * a.x.abs() + half.y * a.y.abs() + half.z * a.z.abs();
            if lo > r || hi < -r {
                return false;
            }
        }
    }
    true
}

/// Rasterizes into a caller-supplied frame.
pub fn rasterize_occupancy_in(mesh: &TriangleMesh, frame: GridFrame, z_band: [f64; 2]) -> Result<OccupancyGrid2D> {
    if !(frame.resolution > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "occupancy resolution must be positive, got {}",
            frame.resolution
        )));
    }
    if !(z_band[0] < z_band[1]) {
        return Err(Error::InvalidParameter(format!(
            "z band must satisfy lo < hi, got {z_band:?}"
        )));
    }
    let mut grid = OccupancyGrid2D::new(frame);
    let res = frame.resolution;
    let half = Vector3::new(res / 2.0, res / 2.0, (z_band[1] - z_band[0]) / 2.0);
    let shift = CELL_BOUNDARY_EPS;
    let zc = (z_band[0] + z_band[1]) / 2.0;
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangle(t);
        let zlo = tri[0].z.min(tri[1].z).min(tri[2].z);
        let zhi = tri[0].z.max(tri[1].z).max(tri[2].z);
        if zhi < z_band[0] || zlo > z_band[1] {
            continue;
        }
        let xlo = tri[0].x.min(tri[1].x).min(tri[2].x);
        let xhi = tri[0].x.max(tri[1].x).max(tri[2].x);
        let ylo = tri[0].y.min(tri[1].y).min(tri[2].y);
        let yhi = tri[0].y.max(tri[1].y).max(tri[2].y);
        let i0 = (((xlo - frame.origin[0]) / res).floor() - 1.0).max(0.0) as usize;
        let j0 = (((ylo - frame.origin[1]) / res).floor() - 1.0).max(0.0) as usize;
        let i1 = (((xhi - frame.origin[0]) / res).floor() + 1.0).min(frame.width as f64 - 1.0);
        let j1 = (((yhi - frame.origin[1]) / res).floor() + 1.0).min(frame.height as f64 - 1.0);
        if i1 < 0.0 || j1 < 0.0 {
            continue;
        }
        for j in j0..=j1 as usize {
            for i in i0..=i1 as usize {
                if grid.get(i, j) {
                    continue;
                }
                let c = frame.cell_center(i, j);
                let center = Vector3::new(c[0] - shift, c[1] - shift, zc);
                if triangle_intersects_aabb(&tri, &center, &half) {
                    grid.set(i, j, true);
                }
            }
        }
    }
    Ok(grid)
}

/// Rasterizes over the mesh's xy bounds.
pub fn rasterize_occupancy(mesh: &TriangleMesh, resolution: f64, z_band: [f64; 2]) -> Result<OccupancyGrid2D> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "occupancy resolution must be positive, got {resolution}"
        )));
    }
    let (lo, hi) = mesh.bounds();
    let frame = GridFrame::covering([lo.x, lo.y], [hi.x, hi.y], resolution);
    rasterize_occupancy_in(mesh, frame, z_band)
}

/// Marks cells whose center lies inside the footprint of a box that reaches
/// into the height band. The surface rasterization only marks the rim.
pub fn fill_box_footprints(grid: &mut OccupancyGrid2D, desc: &SceneDescription, z_band: [f64; 2]) {
    for prim in &desc.primitives {
        let Primitive::Box(b) = prim else { continue };
        if b.base_z > z_band[1] || b.base_z + b.size[2] < z_band[0] {
            continue;
        }
        let r = rot2(b.yaw).transpose();
        let c = Vector2::new(b.center[0], b.center[1]);
        for j in 0..grid.height() {
            for i in 0..grid.width() {
                let [x, y] = grid.frame.cell_center(i, j);
                let local = r * (Vector2::new(x, y) - c);
                if local.x.abs() <= b.size[0] / 2.0 && local.y.abs() <= b.size[1] / 2.0 {
                    grid.set(i, j, true);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    /// Map cloud sampling density, points per m².
    pub map_density: f64,
    /// Occupancy grid resolution (m).
    pub occupancy_resolution: f64,
    /// Height band (m) that counts as an obstacle for the robot.
    pub z_band: [f64; 2],
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            map_density: 400.0,
            occupancy_resolution: 0.1,
            z_band: [0.1, 1.0],
        }
    }
}

/// Everything derived from one scene description.
#[derive(Debug)]
pub struct SceneModel {
    pub description: SceneDescription,
    pub mesh: TriangleMesh,
    pub bvh: crate::bvh::Bvh,
    pub map: MapCloud,
    pub occupancy: OccupancyGrid2D,
}

impl SceneModel {
    pub fn build(desc: &SceneDescription, params: &SceneParams, seed_value: u64) -> Result<Self> {
        let mesh = compile_scene(desc)?;
        let bvh = crate::bvh::Bvh::build(&mesh);
        let map = sample_map_cloud(&mesh, params.map_density, seed_value)?;
        let mut occupancy = rasterize_occupancy(&mesh, params.occupancy_resolution, params.z_band)?;
        fill_box_footprints(&mut occupancy, desc, params.z_band);
        Ok(Self {
            description: desc.clone(),
            mesh,
            bvh,
            map,
            occupancy,
        })
    }

    /// xy bounds of the mesh.
    pub fn xy_bounds(&self) -> ([f64; 2], [f64; 2]) {
        let (lo, hi) = self.mesh.bounds();
        ([lo.x, lo.y], [hi.x, hi.y])
    }
}

/// Reference worlds used by the experiments and acceptance tests.
pub mod canonical {
    use super::*;

    pub const FLOOR_SIZE: f64 = 24.0;
    /// Mild roughness given to otherwise flat floors.
    pub const FLOOR_ROUGHNESS: f64 = 0.005;
    pub const MEADOW_AMPLITUDE: f64 = 0.08;
    pub const MEADOW_CORRELATION: f64 = 0.1;
    /// Vertex spacing of the meadow heightfield (m).
    pub const MEADOW_SPACING: f64 = 0.04;
    pub const HOUSE_SIZE: [f64; 3] = [3.0, 3.0, 2.5];

    fn floor(amplitude: f64, correlation_length: f64, spacing: f64, seed: u64) -> Primitive {
        Primitive::Heightfield(HeightfieldPrimitive {
            center: [0.0, 0.0],
            yaw: 0.0,
            base_z: 0.0,
            size: [FLOOR_SIZE, FLOOR_SIZE],
            samples: (FLOOR_SIZE / spacing).round() as usize + 1,
            amplitude,
            correlation_length,
            seed,
        })
    }

    fn meadow_floor() -> Primitive {
        floor(MEADOW_AMPLITUDE, MEADOW_CORRELATION, MEADOW_SPACING, 13)
    }

    fn block(center: [f64; 2], yaw: f64, size: [f64; 3]) -> Primitive {
        Primitive::Box(BoxPrimitive {
            center,
            yaw,
            base_z: 0.0,
            size,
        })
    }

    /// (a) Several box houses scattered in front of the robot.
    pub fn houses() -> SceneDescription {
        let layout = [
            ([6.0, 3.0], 0.3),
            ([7.0, -2.5], -0.4),
            ([10.0, 0.5], 0.0),
            ([4.0, -5.0], 0.8),
            ([3.5, 5.5], -0.2),
            ([5.0, 0.0], std::f64::consts::FRAC_PI_4),
        ];
        SceneDescription::new(
            "houses",
            layout.iter().map(|&(c, yaw)| block(c, yaw, HOUSE_SIZE)).collect(),
        )
    }

    /// (b) One house on a meadow.
    pub fn house_on_meadow() -> SceneDescription {
        SceneDescription::new(
            "house_on_meadow",
            vec![meadow_floor(), block([7.0, 0.0], 0.0, [2.5, 2.5, 2.5])],
        )
    }

    /// (c) Meadow only.
    pub fn meadow() -> SceneDescription {
        SceneDescription::new("meadow", vec![meadow_floor()])
    }

    /// (d) A single long wall facing the robot, raised slightly off the floor.
    pub fn wall() -> SceneDescription {
        SceneDescription::new(
            "wall",
            vec![
                floor(FLOOR_ROUGHNESS, 1.0, 0.25, 14),
                Primitive::Wall(WallPrimitive {
                    center: [5.0, 0.0],
                    yaw: std::f64::consts::FRAC_PI_2,
                    base_z: 0.3,
                    length: FLOOR_SIZE - 0.5,
                    height: 3.0,
                }),
            ],
        )
    }

    /// The four metric-comparison scenes, in order (a) to (d).
    pub fn comparison_scenes() -> [SceneDescription; 4] {
        [houses(), house_on_meadow(), meadow(), wall()]
    }

    /// Two routes between a west and an east hall: a short corridor with
    /// plain walls (south) and a longer corridor lined with pillars (north).
    pub fn two_corridor() -> SceneDescription {
        let mut prims = vec![Primitive::Heightfield(HeightfieldPrimitive {
            center: [0.0, 0.0],
            yaw: 0.0,
            base_z: 0.0,
            size: [34.0, 16.0],
            samples: 137,
            amplitude: FLOOR_ROUGHNESS,
            correlation_length: 1.0,
            seed: 21,
        })];
        let wall = |cx: f64, cy: f64, yaw: f64, length: f64| {
            Primitive::Wall(WallPrimitive {
                center: [cx, cy],
                yaw,
                base_z: 0.0,
                length,
                height: 2.5,
            })
        };
        let half_pi = std::f64::consts::FRAC_PI_2;
        prims.push(wall(0.0, 7.5, 0.0, 33.0));
        prims.push(wall(0.0, -7.5, 0.0, 33.0));
        prims.push(wall(-16.5, 0.0, half_pi, 15.0));
        prims.push(wall(16.5, 0.0, half_pi, 15.0));
        // central block: south corridor y in [-7.5, -3], north y in [3, 7.5]
        prims.push(block([0.0, 0.0], 0.0, [24.0, 6.0, 2.5]));
        for k in 0..9 {
            let x = -10.5 + 2.625 * k as f64;
            let y = if k % 2 == 0 { 6.9 } else { 3.6 };
            prims.push(block([x, y], 0.4 * k as f64, [0.5, 0.5, 2.0]));
        }
        SceneDescription::new("two_corridor", prims)
    }
}
