//! Exact Euclidean signed distance field over a 2-D occupancy grid.
//!
//! Free cells hold the distance to the nearest occupied cell center, occupied
//! cells hold minus the distance to the nearest free cell center. Distances
//! are capped at the grid diagonal.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::scene::{GridFrame, OccupancyGrid2D};

/// Stand-in for "no source" in the squared transform; far above any squared
/// distance on a realistic grid but small enough to add without overflow.
const FAR: f64 = 1e30;

#[derive(Debug, Clone, PartialEq)]
pub struct SdfField {
    pub frame: GridFrame,
    /// Row-major, x fastest, meters.
    pub values: Vec<f64>,
    pub cap: f64,
}

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let mut s;
        loop {
            let p = v[k];
            s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so this never steps below the first parabola
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance, in cells, from every cell to the nearest source cell.
fn squared_edt(width: usize, height: usize, source: impl Fn(usize) -> bool + Sync) -> Vec<f64> {
    // columns first, stored transposed so each column is contiguous
    let mut cols = vec![0.0; width * height];
    cols.par_chunks_mut(height).enumerate().for_each(|(i, col)| {
        let f: Vec<f64> = (0..height)
            .map(|j| if source(j * width + i) { 0.0 } else { FAR })
            .collect();
        let mut v = vec![0usize; height];
        let mut z = vec![0.0; height + 1];
        edt_1d(&f, col, &mut v, &mut z);
    });
    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(j, row)| {
        let f: Vec<f64> = (0..width).map(|i| cols[i * height + j]).collect();
        let mut v = vec![0usize; width];
        let mut z = vec![0.0; width + 1];
        edt_1d(&f, row, &mut v, &mut z);
    });
    out
}

pub fn build_sdf(occ: &OccupancyGrid2D) -> SdfField {
    let (w, h) = (occ.width(), occ.height());
    let res = occ.frame.resolution;
    let cap = res * ((w * w + h * h) as f64).sqrt();
    let to_occ = squared_edt(w, h, |c| occ.cells[c]);
    let to_free = squared_edt(w, h, |c| !occ.cells[c]);
    let values = occ
        .cells
        .iter()
        .enumerate()
        .map(|(c, &occupied)| {
            let d2 = if occupied { to_free[c] } else { to_occ[c] };
            let d = if d2 >= FAR {
                cap
            } else {
                (res * res * d2).sqrt().min(cap)
            };
            if occupied {
                -d
            } else {
                d
            }
        })
        .collect();
    SdfField {
        frame: occ.frame,
        values,
        cap,
    }
}

/// Bracketing node indices, interpolation weight and whether the query was
/// clamped, along one axis with `n` nodes.
fn bracket(u: f64, n: usize) -> (usize, usize, f64, bool) {
    if n == 1 {
        return (0, 0, 0.0, true);
    }
    let hi = (n - 1) as f64;
    if u <= 0.0 {
        return (0, 1, 0.0, u < 0.0);
    }
    if u >= hi {
        return (n - 2, n - 1, 1.0, u > hi);
    }
    let i0 = (u.floor() as usize).min(n - 2);
    (i0, i0 + 1, u - i0 as f64, false)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub distance: f64,
    pub gradient: Vector2<f64>,
}

impl SdfField {
    pub fn width(&self) -> usize {
        self.frame.width
    }

    pub fn height(&self) -> usize {
        self.frame.height
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.frame.width + i]
    }

    /// Bilinear interpolation between cell centers. Queries outside the
    /// span of cell centers are clamped, with zero gradient along the
    /// clamped axis.
    pub fn sample(&self, xy: &Vector2<f64>) -> SdfSample {
        let res = self.frame.resolution;
        let u = (xy.x - self.frame.origin[0]) / res - 0.5;
        let v = (xy.y - self.frame.origin[1]) / res - 0.5;
        let (i0, i1, s, cx) = bracket(u, self.width());
        let (j0, j1, t, cy) = bracket(v, self.height());
        let (f00, f10, f01, f11) = (self.get(i0, j0), self.get(i1, j0), self.get(i0, j1), self.get(i1, j1));
        let distance = (1.0 - t) * ((1.0 - s) * f00 + s * f10) + t * ((1.0 - s) * f01 + s * f11);
        let gx = if cx {
            0.0
        } else {
            ((1.0 - t) * (f10 - f00) + t * (f11 - f01)) / res
        };
        let gy = if cy {
            0.0
        } else {
            ((1.0 - s) * (f01 - f00) + s * (f11 - f10)) / res
        };
        SdfSample {
            distance,
            gradient: Vector2::new(gx, gy),
        }
    }
}

pub fn sample_sdf(field: &SdfField, xy: &Vector2<f64>) -> SdfSample {
    field.sample(xy)
}
