//! Limited-memory BFGS with a monotone weak-Wolfe line search.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsParams {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the gradient's infinity norm falls below this.
    pub gradient_tolerance: f64,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iterations: 1000,
            gradient_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    /// Relative decrease became negligible.
    Stalled,
    MaxIterations,
    /// No step along the search direction decreased the objective.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
}

const ARMIJO: f64 = 1e-4;
const WOLFE: f64 = 0.9;
const MAX_TRIALS: usize = 40;

/// Minimizes `f`, which returns the value and gradient. Every accepted step
/// strictly decreases the objective.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, params: &LbfgsParams) -> LbfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut stall = 0;
    for it in 0..params.max_iterations {
        if g.amax() < params.gradient_tolerance {
            return LbfgsResult {
                x,
                f: fx,
                gradient: g,
                iterations: it,
                evaluations,
                status: Status::Converged,
            };
        }
        let mut d = -two_loop(&g, &history);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            history.clear();
            d = -g.clone();
            slope = g.dot(&d);
        }
        // first step of a fresh direction is scaled to a unit move
        let mut alpha = if history.is_empty() {
            1.0 / d.amax().max(1.0)
        } else {
            1.0
        };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut best: Option<(f64, DVector<f64>, f64, DVector<f64>)> = None;
        let mut accepted = None;
        for _ in 0..MAX_TRIALS {
            let xn = &x + alpha * &d;
            let (fn_, gn) = f(&xn);
            evaluations += 1;
            if !fn_.is_finite() || fn_ > fx + ARMIJO * alpha * slope {
                hi = alpha;
            } else {
                if best.as_ref().is_none_or(|b| fn_ < b.2) {
                    best = Some((alpha, xn.clone(), fn_, gn.clone()));
                }
                if gn.dot(&d) < WOLFE * slope {
                    lo = alpha;
                } else {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            alpha = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo };
        }
        let (xn, fn_, gn) = match accepted.or_else(|| best.map(|(_, xb, fb, gb)| (xb, fb, gb))) {
            Some(step) if step.1 < fx => step,
            _ => {
                return LbfgsResult {
                    x,
                    f: fx,
                    gradient: g,
                    iterations: it,
                    evaluations,
                    status: Status::LineSearchFailed,
                };
            }
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == params.memory.max(1) {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - fn_;
        stall = if decrease <= 1e-12 * fx.abs().max(1.0) {
            stall + 1
        } else {
            0
        };
        x = xn;
        fx = fn_;
        g = gn;
        if stall >= 5 {
            return LbfgsResult {
                x,
                f: fx,
                gradient: g,
                iterations: it + 1,
                evaluations,
                status: Status::Stalled,
            };
        }
    }
    LbfgsResult {
        x,
        f: fx,
        gradient: g,
        iterations: params.max_iterations,
        evaluations,
        status: Status::MaxIterations,
    }
}

fn two_loop(g: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q -= a * y;
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q += (a - b) * s;
    }
    q
}
