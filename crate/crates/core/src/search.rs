//! Uniform-cost search over the loss-map grid.
//!
//! Edge cost is `len · (1 + ρ_q · (q_u + q_v) / 2)`, with
//! `len = √(Δx² + Δy² + (L_yaw · Δθ)²)` over the 8-neighborhood in xy times
//! {−1, 0, +1} yaw channels (wrapping).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PlanarPose;
use crate::sdf::SdfField;
use crate::solm::{GridSpec, SolmGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchWeights {
    pub rho_q: f64,
    /// Length per radian of yaw change (m/rad).
    pub l_yaw: f64,
    /// Supplied by the caller, not read from config files.
    #[serde(skip)]
    pub r_safe: f64,
}

impl Default for SearchWeights {
    fn default() -> Self {
        Self {
            rho_q: 5.0,
            l_yaw: 0.5,
            r_safe: 0.3,
        }
    }
}

impl SearchWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho_q", self.rho_q), ("l_yaw", self.l_yaw), ("r_safe", self.r_safe)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub type Cell = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub cells: Vec<Cell>,
    pub poses: Vec<PlanarPose>,
    pub cost: f64,
}

/// Traversability and per-cell loss, decoupled from how they were produced.
#[derive(Debug, Clone)]
pub struct CostGrid {
    pub spec: GridSpec,
    /// Loss per cell (finite).
    pub loss: Vec<f64>,
    pub blocked: Vec<bool>,
}

impl CostGrid {
    /// Loss from the SOLM with sentinels replaced by their surrogate; a cell
    /// is blocked when it is an obstacle or its center is closer than
    /// `r_safe` to one.
    pub fn from_solm(solm: &SolmGrid, sdf: &SdfField, r_safe: f64) -> Self {
        let spec = solm.spec;
        let plane = spec.dims[0] * spec.dims[1];
        let unsafe_xy: Vec<bool> = (0..plane)
            .map(|c| {
                let p = spec.cell_pose(c % spec.dims[0], c / spec.dims[0], 0);
                sdf.sample(&Vector2::new(p.x, p.y)).distance < r_safe
            })
            .collect();
        let blocked = (0..spec.len())
            .map(|idx| solm.obstacle[idx] || unsafe_xy[idx % plane])
            .collect();
        Self {
            spec,
            loss: solm.dense_values(),
            blocked,
        }
    }

    /// Neighbors of a cell with their step lengths, in lexicographic order.
    pub fn neighbors(&self, cell: Cell, l_yaw: f64) -> Vec<(Cell, f64)> {
        let [a, b, c] = self.spec.dims;
        let (i, j, k) = cell;
        let mut yaw_steps: Vec<i64> = match c {
            1 => vec![0],
            2 => vec![0, 1],
            _ => vec![-1, 0, 1],
        };
        yaw_steps.sort_by_key(|&dk| (k as i64 + dk).rem_euclid(c as i64));
        let rt = self.spec.yaw_resolution();
        let mut out = Vec::with_capacity(26);
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                for &dk in &yaw_steps {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= a as i64 || nj >= b as i64 {
                        continue;
                    }
                    let nk = (k as i64 + dk).rem_euclid(c as i64) as usize;
                    let dx = di as f64 * self.spec.resolution[0];
                    let dy = dj as f64 * self.spec.resolution[1];
                    // for c = 2 the single yaw neighbor is half a turn away
                    let dth = if c == 2 && dk != 0 {
                        std::f64::consts::PI
                    } else {
                        dk as f64 * rt
                    };
                    let len = (dx * dx + dy * dy + (l_yaw * dth).powi(2)).sqrt();
                    out.push(((ni as usize, nj as usize, nk), len));
                }
            }
        }
        out
    }

    pub fn edge_cost(&self, u: Cell, v: Cell, len: f64, rho_q: f64) -> f64 {
        let qu = self.loss[self.spec.index(u.0, u.1, u.2)];
        let qv = self.loss[self.spec.index(v.0, v.1, v.2)];
        len * (1.0 + rho_q * 0.5 * (qu + qv))
    }

    pub fn is_blocked(&self, cell: Cell) -> bool {
        self.blocked[self.spec.index(cell.0, cell.1, cell.2)]
    }

    /// Cell of a pose, or an error naming the endpoint when it is outside
    /// the grid or blocked.
    pub fn endpoint(&self, pose: &PlanarPose, what: &'static str) -> Result<Cell> {
        self.spec
            .cell_of(pose)
            .filter(|&c| !self.is_blocked(c))
            .ok_or(Error::BlockedEndpoint {
                what,
                x: pose.x,
                y: pose.y,
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    cell: Cell,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then on cell index
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn search_cells(grid: &CostGrid, start: Cell, goal: Cell, weights: &SearchWeights) -> Result<GridPath> {
    weights.validate()?;
    let spec = &grid.spec;
    let n = spec.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<Cell>> = vec![None; n];
    let mut done = vec![false; n];
    let idx = |c: Cell| spec.index(c.0, c.1, c.2);
    dist[idx(start)] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry { cost: 0.0, cell: start });
    while let Some(Entry { cost, cell }) = heap.pop() {
        let u = idx(cell);
        if done[u] {
            continue;
        }
        done[u] = true;
        if cell == goal {
            break;
        }
        for (next, len) in grid.neighbors(cell, weights.l_yaw) {
            let v = idx(next);
            if done[v] || grid.blocked[v] {
                continue;
            }
            let c = cost + grid.edge_cost(cell, next, len, weights.rho_q);
            let better = c < dist[v] || (c == dist[v] && pred[v].is_some_and(|p| cell < p));
            if better {
                dist[v] = c;
                pred[v] = Some(cell);
                heap.push(Entry { cost: c, cell: next });
            }
        }
    }
    if !done[idx(goal)] {
        return Err(Error::NoPath);
    }
    let mut cells = vec![goal];
    while let Some(p) = pred[idx(*cells.last().expect("non-empty"))] {
        cells.push(p);
    }
    cells.reverse();
    let poses = cells.iter().map(|&(i, j, k)| spec.cell_pose(i, j, k)).collect();
    Ok(GridPath {
        cells,
        poses,
        cost: dist[idx(goal)],
    })
}

pub fn search(
    solm: &SolmGrid,
    sdf: &SdfField,
    start: &PlanarPose,
    goal: &PlanarPose,
    weights: &SearchWeights,
) -> Result<GridPath> {
    let grid = CostGrid::from_solm(solm, sdf, weights.r_safe);
    let s = grid.endpoint(start, "start")?;
    let g = grid.endpoint(goal, "goal")?;
    search_cells(&grid, s, g, weights)
}
