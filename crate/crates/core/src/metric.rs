//! Perturbation-induced observation loss.
//!
//! Given the linearized system `A dx ≈ b` (m x n), the loss measures how
//! sensitive the least-squares error bound is to perturbations of the
//! observations. With `sigma1` the smallest singular value of `A`,
//! `dx*` the least-squares step, `r = A dx* - b` and
//! `xi = |dx*| + |r| / sigma1`, the quadratic form
//! `Phi = xi² A Aᵀ + b bᵀ` (rank ≤ n + 1) gives three strategies:
//!
//! ```text
//! q_min = sqrt(w2) / sigma1
//! q_n   = sqrt(w1 * lambda_n   + w2) / sigma1   (n-th largest eigenvalue of Phi)
//! q_max = sqrt(w1 * lambda_max + w2) / sigma1
//! ```
//!
//! The nonzero eigenvalues of `Phi` are those of the small Gram matrix
//! `Mᵀ M` with `M = [xi A | b]`, so nothing m x m is ever formed.
//!
//! Note: expanding the bound term by term gives a first-order sensitivity
//! `(xi * sqrt(Σ δkᵀAAᵀδk) + sqrt(Σ δkᵀbbᵀδk)) / sigma1`, whose square differs
//! from the `Phi` quadratic form by a cross term. The combined `Phi` form is
//! what is implemented here.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::ObservationSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Min,
    N,
    Max,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Strategy::Min),
            "n" => Ok(Strategy::N),
            "max" => Ok(Strategy::Max),
            other => Err(Error::InvalidParameter(format!(
                "unknown strategy '{other}' (expected min, n or max)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Min => "min",
            Strategy::N => "n",
            Strategy::Max => "max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub w1: f64,
    pub w2: f64,
    pub strategy: Strategy,
    /// Singular values below this mark the system as degenerate.
    pub sigma_floor: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            w1: 0.5,
            w2: 0.5,
            strategy: Strategy::N,
            sigma_floor: 1e-6,
        }
    }
}

impl MetricConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w1 > 0.0 && self.w2 > 0.0 && (self.w1 + self.w2 - 1.0).abs() < 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "metric weights must be positive and sum to 1, got w1 = {}, w2 = {}",
                self.w1, self.w2
            )));
        }
        if !(self.sigma_floor >= 0.0) {
            return Err(Error::InvalidParameter("sigma_floor must be >= 0".into()));
        }
        Ok(())
    }
}

/// Least-squares quantities shared by every strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresCore {
    pub dx_star: DVector<f64>,
    pub residual: DVector<f64>,
    pub sigma1: f64,
    pub xi: f64,
    pub degenerate: bool,
}

/// Smallest singular value of `a` from the eigenvalues of `AᵀA`.
pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    let ata = a.transpose() * a;
    let eig = SymmetricEigen::new(ata);
    eig.eigenvalues.min().max(0.0).sqrt()
}

pub fn least_squares_core(a: &DMatrix<f64>, b: &DVector<f64>, sigma_floor: f64) -> Result<LeastSquaresCore> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::TooFewObservations { needed: n, got: m });
    }
    let ata = a.transpose() * a;
    let eig = SymmetricEigen::new(ata.clone());
    let sigma1 = eig.eigenvalues.min().max(0.0).sqrt();
    if !(sigma1 >= sigma_floor) || sigma1 == 0.0 {
        return Ok(LeastSquaresCore {
            dx_star: DVector::zeros(n),
            residual: -b.clone(),
            sigma1,
            xi: f64::INFINITY,
            degenerate: true,
        });
    }
    let atb = a.transpose() * b;
    // solve through the eigendecomposition already at hand
    let coeffs = eig.eigenvectors.transpose() * atb;
    let scaled = DVector::from_iterator(n, coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c / l));
    let dx_star = &eig.eigenvectors * scaled;
    let residual = a * &dx_star - b;
    let xi = dx_star.norm() + residual.norm() / sigma1;
    Ok(LeastSquaresCore {
        dx_star,
        residual,
        sigma1,
        xi,
        degenerate: false,
    })
}

/// The `n + 1` largest eigenvalues of `Phi = xi² A Aᵀ + b bᵀ`, descending,
/// via the Gram matrix of `[xi A | b]`.
pub fn phi_top_eigs(a: &DMatrix<f64>, b: &DVector<f64>, xi: f64) -> Result<Vec<f64>> {
    let (m, n) = a.shape();
    if m <= n {
        return Err(Error::TooFewObservations { needed: n + 1, got: m });
    }
    let mut gram = DMatrix::zeros(n + 1, n + 1);
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let xi2 = xi * xi;
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] = xi2 * ata[(i, j)];
        }
        gram[(i, n)] = xi * atb[i];
        gram[(n, i)] = xi * atb[i];
    }
    gram[(n, n)] = b.dot(b);
    let eig = SymmetricEigen::new(gram);
    let mut values: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricResult {
    pub strategy: Strategy,
    /// Observation loss; `+inf` when degenerate.
    pub q: f64,
    pub sigma1: f64,
    pub xi: f64,
    /// Top `n + 1` eigenvalues of `Phi`, descending.
    pub lambda_top: Vec<f64>,
    pub degenerate: bool,
    pub observations: usize,
}

impl MetricResult {
    /// Loss under another strategy, reusing the eigenvalues.
    pub fn q_for(&self, strategy: Strategy, cfg: &MetricConfig) -> f64 {
        if self.degenerate {
            return f64::INFINITY;
        }
        loss_from_parts(strategy, cfg, self.sigma1, &self.lambda_top, self.lambda_top.len() - 1)
    }
}

fn loss_from_parts(strategy: Strategy, cfg: &MetricConfig, sigma1: f64, lambdas: &[f64], n: usize) -> f64 {
    let lambda = match strategy {
        Strategy::Min => 0.0,
        Strategy::N => lambdas[n - 1],
        Strategy::Max => lambdas[0],
    };
    match strategy {
        Strategy::Min => cfg.w2.sqrt() / sigma1,
        _ => (cfg.w1 * lambda + cfg.w2).sqrt() / sigma1,
    }
}

pub fn evaluate_system(a: &DMatrix<f64>, b: &DVector<f64>, cfg: &MetricConfig) -> Result<MetricResult> {
    let n = a.ncols();
    let core = least_squares_core(a, b, cfg.sigma_floor)?;
    if core.degenerate {
        return Ok(MetricResult {
            strategy: cfg.strategy,
            q: f64::INFINITY,
            sigma1: core.sigma1,
            xi: core.xi,
            lambda_top: vec![f64::INFINITY; n + 1],
            degenerate: true,
            observations: a.nrows(),
        });
    }
    let lambda_top = phi_top_eigs(a, b, core.xi)?;
    let q = loss_from_parts(cfg.strategy, cfg, core.sigma1, &lambda_top, n);
    Ok(MetricResult {
        strategy: cfg.strategy,
        q,
        sigma1: core.sigma1,
        xi: core.xi,
        lambda_top,
        degenerate: false,
        observations: a.nrows(),
    })
}

pub fn evaluate(obs: &ObservationSet, cfg: &MetricConfig) -> Result<MetricResult> {
    evaluate_system(&obs.a, &obs.b, cfg)
}

/// Directional sensitivity `sqrt(βᵀ W β)` of the bound `sqrt(δtᵀ W δt)` at
/// zero, for diagonal `W`.
pub fn directional_bound_sensitivity(w_diag: [f64; 2], beta: [f64; 2]) -> f64 {
    (w_diag[0] * beta[0] * beta[0] + w_diag[1] * beta[1] * beta[1]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stacked_identity() -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(4, 3);
        for i in 0..3 {
            a[(i, i)] = 1.0;
        }
        (a, DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]))
    }

    #[test]
    fn hand_checkable_core() {
        let (a, b) = stacked_identity();
        let c = least_squares_core(&a, &b, 1e-6).unwrap();
        assert!(c.dx_star.norm() < 1e-15);
        assert!((c.residual.clone() + &b).norm() < 1e-15);
        assert!((c.sigma1 - 1.0).abs() < 1e-12);
        assert!((c.xi - 1.0).abs() < 1e-12);
        let l = phi_top_eigs(&a, &b, c.xi).unwrap();
        for v in l {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_gives_zero_xi() {
        let (a, _) = stacked_identity();
        let b = DVector::zeros(4);
        let c = least_squares_core(&a, &b, 1e-6).unwrap();
        assert_eq!(c.xi, 0.0);
        assert_eq!(c.dx_star.norm(), 0.0);
        assert_eq!(phi_top_eigs(&a, &b, 0.0).unwrap(), vec![0.0; 4]);
        let cfg = MetricConfig::default();
        let expect = cfg.w2.sqrt() / c.sigma1;
        for s in [Strategy::Min, Strategy::N, Strategy::Max] {
            let r = evaluate_system(&a, &b, &MetricConfig { strategy: s, ..cfg }).unwrap();
            assert!((r.q - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_column_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = DMatrix::from_fn(10, 3, |_, _| rng.gen_range(-1.0..1.0));
        a.column_mut(1).fill(0.0);
        let b = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let r = evaluate_system(&a, &b, &MetricConfig::default()).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.q, f64::INFINITY);
    }

    #[test]
    fn closed_form_min_strategy() {
        // diag(2, 3, 4) stacked on a zero row: sigma1 = 2
        let mut a = DMatrix::zeros(4, 3);
        a[(0, 0)] = 2.0;
        a[(1, 1)] = 3.0;
        a[(2, 2)] = 4.0;
        let b = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let r = evaluate_system(&a, &b, &MetricConfig::with_strategy(Strategy::Min)).unwrap();
        assert!((r.q - 0.5f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((r.q - 0.353553).abs() < 1e-6);
    }

    #[test]
    fn too_few_rows() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let b = DVector::zeros(3);
        assert!(phi_top_eigs(&a, &b, 1.0).is_err());
        let a2 = DMatrix::from_element(2, 3, 1.0);
        assert!(least_squares_core(&a2, &DVector::zeros(2), 1e-6).is_err());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("min".parse::<Strategy>().unwrap(), Strategy::Min);
        assert_eq!("n".parse::<Strategy>().unwrap(), Strategy::N);
        assert_eq!("max".parse::<Strategy>().unwrap(), Strategy::Max);
        assert!("mean".parse::<Strategy>().is_err());
        assert_eq!(Strategy::Max.to_string(), "max");
    }

    #[test]
    fn config_validation() {
        assert!(MetricConfig::default().validate().is_ok());
        let bad = MetricConfig {
            w1: 0.7,
            w2: 0.7,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MetricConfig {
            w1: 1.0,
            w2: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn strategies_are_ordered_and_bounded_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let m = rng.gen_range(5..60);
            let a = DMatrix::from_fn(m, 3, |_, _| rng.gen_range(-2.0..2.0));
            let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
            let cfg = MetricConfig::default();
            let r = evaluate_system(&a, &b, &cfg).unwrap();
            let (qmin, qn, qmax) = (
                r.q_for(Strategy::Min, &cfg),
                r.q_for(Strategy::N, &cfg),
                r.q_for(Strategy::Max, &cfg),
            );
            assert!(qmin <= qn && qn <= qmax);
            assert!(qmin >= cfg.w2.sqrt() / r.sigma1 - 1e-15);
            assert!(r.lambda_top.windows(2).all(|w| w[0] >= w[1]));
            assert!(r.lambda_top.iter().all(|&l| l >= 0.0));
        }
    }

    #[test]
    fn directional_sensitivity_of_an_anisotropic_weight() {
        let w = [1.0, 8.0];
        let at = |t: f64| directional_bound_sensitivity(w, [t.cos(), t.sin()]);
        assert!((at(0.0) - 1.0).abs() < 1e-12);
        assert!((at(std::f64::consts::FRAC_PI_2) - 8f64.sqrt()).abs() < 1e-12);
        assert!((at(std::f64::consts::FRAC_PI_4) - 4.5f64.sqrt()).abs() < 1e-12);
    }

    fn random_system(rng: &mut ChaCha8Rng, m: usize) -> (DMatrix<f64>, DVector<f64>) {
        let a = DMatrix::from_fn(m, 3, |_, _| rng.gen_range(-2.0..2.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        (a, b)
    }

    fn unit(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
        let v = DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        v / n
    }

    /// `dx` minimizing |A dx - b| via SVD, independent of the production path.
    fn svd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        a.clone().svd(true, true).solve(b, 1e-14).unwrap()
    }

    fn spectral_norm(m: &DMatrix<f64>) -> f64 {
        m.singular_values().max()
    }

    /// Lawson-Hanson bound on the change of the least-squares solution.
    fn bound(core: &LeastSquaresCore, da: &DMatrix<f64>, db: &DVector<f64>) -> f64 {
        let s = core.sigma1 - spectral_norm(da);
        core.xi / s * da.norm() + db.norm() / s
    }

    #[test]
    fn gram_eigenvalues_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [4usize, 7, 30, 200] {
            let (a, b) = random_system(&mut rng, m);
            let core = least_squares_core(&a, &b, 1e-6).unwrap();
            let fast = phi_top_eigs(&a, &b, core.xi).unwrap();
            let phi = core.xi * core.xi * &a * a.transpose() + &b * b.transpose();
            let mut dense: Vec<f64> = SymmetricEigen::new(phi).eigenvalues.iter().copied().collect();
            dense.sort_by(|x, y| y.total_cmp(x));
            let scale = dense[0];
            for (f, d) in fast.iter().zip(&dense) {
                assert!((f - d).abs() <= 1e-9 * scale, "m = {m}: {f} vs {d}");
            }
            for d in &dense[4..] {
                assert!(d.abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn core_matches_svd_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let m = rng.gen_range(3..40);
            let (a, b) = random_system(&mut rng, m);
            let core = least_squares_core(&a, &b, 1e-6).unwrap();
            let oracle = svd_solve(&a, &b);
            assert!((core.dx_star.clone() - &oracle).norm() <= 1e-9 * (1.0 + oracle.norm()));
            let sv = a.singular_values().min();
            assert!((core.sigma1 - sv).abs() <= 1e-9 * (1.0 + sv));
        }
    }

    #[test]
    fn perturbation_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let radius = 1e-3;
        let mut checked = 0;
        for trial in 0..1000 {
            let m = 6 + trial % 10;
            let (a, b) = random_system(&mut rng, m);
            let core = least_squares_core(&a, &b, 1e-6).unwrap();
            let dk = DMatrix::from_row_slice(m, m, unit(&mut rng, m * m).as_slice()) * radius;
            let dt = unit(&mut rng, m) * radius;
            let da = &dk * &a;
            let db = &dk * &b + dt;
            if spectral_norm(&da) >= core.sigma1 {
                continue;
            }
            let x_hat = svd_solve(&(&a + &da), &(&b - &db));
            let moved = (x_hat - &core.dx_star).norm();
            assert!(moved <= bound(&core, &da, &db) * (1.0 + 1e-9), "trial {trial}");
            checked += 1;
        }
        assert!(checked > 950);
    }

    #[test]
    fn bound_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let h = 1e-6;
        for _ in 0..20 {
            let m = rng.gen_range(4..12);
            let (a, b) = random_system(&mut rng, m);
            let alpha = DMatrix::from_row_slice(m, m, unit(&mut rng, m * m).as_slice());
            let beta = unit(&mut rng, m);
            let da_norm = |rk: f64| (&alpha * rk * &a).norm();
            let db_norm = |rk: f64, rt: f64| (&alpha * rk * &b + &beta * rt).norm();
            let aat = &a * a.transpose();
            let rows = |f: &dyn Fn(&DVector<f64>) -> f64| -> f64 {
                (0..m).map(|j| f(&alpha.row(j).transpose())).sum::<f64>().sqrt()
            };
            let d_a = rows(&|k| (k.transpose() * &aat * k)[0]);
            let d_b = rows(&|k| k.dot(&b).powi(2));
            // the norms are even in r, so difference around r = h
            let fd_a = (da_norm(2.0 * h) - da_norm(0.0)) / (2.0 * h);
            let fd_b = (db_norm(2.0 * h, 0.0) - db_norm(0.0, 0.0)) / (2.0 * h);
            let fd_t = (db_norm(0.0, 2.0 * h) - db_norm(0.0, 0.0)) / (2.0 * h);
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
            assert!(rel(fd_a, d_a) < 1e-5);
            assert!(rel(fd_b, d_b) < 1e-5);
            assert!(rel(fd_t, 1.0) < 1e-5);
        }
    }

    #[test]
    fn eigenvalue_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cfg = MetricConfig::default();
        for _ in 0..200 {
            let m = rng.gen_range(5..25);
            let (a, b) = random_system(&mut rng, m);
            let r = evaluate_system(&a, &b, &cfg).unwrap();
            let phi = r.xi * r.xi * &a * a.transpose() + &b * b.transpose();
            let alpha = DMatrix::from_row_slice(m, m, unit(&mut rng, m * m).as_slice());
            let quad: f64 = (0..m)
                .map(|j| {
                    let k = alpha.row(j).transpose();
                    (k.transpose() * &phi * &k)[0]
                })
                .sum();
            assert!(quad >= -1e-12 && quad <= r.lambda_top[0] * (1.0 + 1e-12));
            let q = (cfg.w1 * quad.max(0.0) + cfg.w2).sqrt() / r.sigma1;
            let (lo, hi) = (r.q_for(Strategy::Min, &cfg), r.q_for(Strategy::Max, &cfg));
            assert!(lo <= q * (1.0 + 1e-12) && q <= hi * (1.0 + 1e-12));
        }
    }

    #[test]
    fn min_strategy_is_scaled_inverse_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let cfg = MetricConfig::with_strategy(Strategy::Min);
        for _ in 0..50 {
            let (a, b) = random_system(&mut rng, 12);
            let r = evaluate_system(&a, &b, &cfg).unwrap();
            assert_eq!(r.q, cfg.w2.sqrt() / r.sigma1);
        }
    }

    #[test]
    fn solution_slope_never_exceeds_bound_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = 1e-6;
        for _ in 0..200 {
            let m = rng.gen_range(5..15);
            let (a, b) = random_system(&mut rng, m);
            let core = least_squares_core(&a, &b, 1e-6).unwrap();
            let alpha = DMatrix::from_row_slice(m, m, unit(&mut rng, m * m).as_slice());
            let beta = unit(&mut rng, m);
            let da = &alpha * s * &a;
            let db = &alpha * s * &b + &beta * s;
            let x_hat = svd_solve(&(&a + &da), &(&b - &db));
            let slope_x = (x_hat - &core.dx_star).norm() / s;
            let slope_e = bound(&core, &da, &db) / s;
            assert!(slope_x <= slope_e + 1e-4, "{slope_x} > {slope_e}");
        }
    }
}
