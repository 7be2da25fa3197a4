//! Bounding-volume hierarchy over a triangle mesh for ray casting and
//! nearest-surface queries.

use nalgebra::Vector3;

use crate::scene::TriangleMesh;

const LEAF_SIZE: usize = 4;
/// Hits closer than this along the ray are ignored.
pub const RAY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    /// Entry distance of the ray, if it enters before `t_max`.
    fn ray_entry(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            // NaN from 0 * inf means the ray lies in the slab plane; keep it
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if !lo.is_nan() {
                t0 = t0.max(lo);
            }
            if !hi.is_nan() {
                t1 = t1.min(hi);
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }

    fn distance_squared(&self, p: &Vector3<f64>) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: first index into `order`. Inner: index of the left child
    /// (right child is `left + 1`).
    start: usize,
    count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub triangle: usize,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    triangles: Vec<[Vector3<f64>; 3]>,
}

/// Möller–Trumbore intersection without back-face culling.
pub fn ray_triangle(origin: &Vector3<f64>, dir: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > RAY_EPS).then_some(t)
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Vector3<f64> {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let triangles: Vec<_> = (0..mesh.triangles.len()).map(|i| mesh.triangle(i)).collect();
        let centroids: Vec<Vector3<f64>> = triangles.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let mut nodes = vec![Node {
            bounds: Aabb::empty(),
            start: 0,
            count: order.len(),
        }];
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (start, count) = (nodes[ni].start, nodes[ni].count);
            let mut bounds = Aabb::empty();
            let mut cbounds = Aabb::empty();
            for &t in &order[start..start + count] {
                for v in &triangles[t] {
                    bounds.grow(v);
                }
                cbounds.grow(&centroids[t]);
            }
            nodes[ni].bounds = bounds;
            if count <= LEAF_SIZE {
                continue;
            }
            let extent = cbounds.max - cbounds.min;
            let axis = extent.imax();
            if extent[axis] <= 0.0 {
                continue;
            }
            let slice = &mut order[start..start + count];
            slice.sort_by(|&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b)));
            let half = count / 2;
            let left = nodes.len();
            nodes.push(Node {
                bounds: Aabb::empty(),
                start,
                count: half,
            });
            nodes.push(Node {
                bounds: Aabb::empty(),
                start: start + half,
                count: count - half,
            });
            nodes[ni].start = left;
            nodes[ni].count = 0;
            stack.push(left);
            stack.push(left + 1);
        }
        Self {
            nodes,
            order,
            triangles,
        }
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle(&self, i: usize) -> &[Vector3<f64>; 3] {
        &self.triangles[i]
    }

    /// Nearest hit along `dir` (need not be normalized; distances are in
    /// units of `|dir|`) within `max_range`. Ties go to the lower triangle id.
    pub fn cast_ray(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<RayHit> {
        if self.triangles.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best: Option<RayHit> = None;
        let mut limit = max_range;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds.ray_entry(origin, &inv, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    if let Some(d) = ray_triangle(origin, dir, &self.triangles[t]) {
                        if d > max_range {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some(b) => d < b.distance || (d == b.distance && t < b.triangle),
                        };
                        if better {
                            best = Some(RayHit {
                                distance: d,
                                triangle: t,
                            });
                            limit = d;
                        }
                    }
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let dl = self.nodes[l].bounds.ray_entry(origin, &inv, limit);
                let dr = self.nodes[r].bounds.ray_entry(origin, &inv, limit);
                // push the farther child first so the nearer one pops next
                match (dl, dr) {
                    (Some(a), Some(b)) if a <= b => {
                        stack.push(r);
                        stack.push(l);
                    }
                    (Some(_), Some(_)) => {
                        stack.push(l);
                        stack.push(r);
                    }
                    (Some(_), None) => stack.push(l),
                    (None, Some(_)) => stack.push(r),
                    (None, None) => {}
                }
            }
        }
        best
    }

    /// Closest surface point within `max_dist`: `(triangle, point, distance)`.
    pub fn nearest_triangle(&self, p: &Vector3<f64>, max_dist: f64) -> Option<(usize, Vector3<f64>, f64)> {
        let mut best: Option<(usize, Vector3<f64>, f64)> = None;
        let mut limit2 = max_dist * max_dist;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if self.triangles.is_empty() || node.bounds.distance_squared(p) > limit2 {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let c = closest_point_on_triangle(p, &self.triangles[t]);
                    let d2 = (c - p).norm_squared();
                    let better = match best {
                        None => d2 <= limit2,
                        Some((bt, _, bd)) => d2 < bd * bd || (d2 == bd * bd && t < bt),
                    };
                    if better {
                        best = Some((t, c, d2.sqrt()));
                        limit2 = d2;
                    }
                }
            } else {
                stack.push(node.start);
                stack.push(node.start + 1);
            }
        }
        best
    }
}
