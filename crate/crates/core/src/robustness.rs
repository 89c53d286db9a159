//! Test of `H0: ||beta_1 - beta_2|| <= h` for two estimators of the same
//! parameter.
//!
//! The statistic is the Mahalanobis norm of the difference under a norm
//! matrix `N`. Under the null the difference is approximately `h v + xi`
//! with `v'N^{-1}v <= 1` and `xi ~ N(0, Sigma)`, and the critical value is
//! the smallest `c` with `sup_v P(||h v + xi||_N^2 > c) <= alpha`.
//!
//! The probability is computed by conditional Monte Carlo. Writing
//! `xi = r L u` with `u` uniform on the sphere and `r ~ chi_d`, the squared
//! norm is a quadratic `A r^2 + 2 B r + C` in `r`, so the exceedance
//! probability given `u` follows exactly from the chi distribution. Only the
//! direction `u` is simulated, with antithetic pairs `(u, -u)`; in one
//! dimension this is exact. The supremum over `v` is taken on a fixed grid
//! of boundary points `v'N^{-1}v = 1`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::numeric::{floor_eigenvalues, pairwise_sum, stream_rng};

const CIRCLE_POINTS: usize = 128;
const SPHERE_POINTS: usize = 256;

/// `[(diff)' sigma^{-1} (diff)]^{1/2}`.
pub fn mahalanobis(diff: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    let d = diff.len();
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::invalid(format!(
            "norm matrix is {}x{}, difference has {d} entries",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if diff.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let chol = cholesky(sigma)?;
    let y = chol.solve(&DVector::from_column_slice(diff));
    let q: f64 = diff.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
    Ok(q.max(0.0).sqrt())
}

fn cholesky(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "norm matrix has non-finite entries".into(),
        ));
    }
    m.clone().cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite(format!("{}x{} norm matrix", m.nrows(), m.ncols()))
    })
}

/// Symmetric square root `S` with `S S' = m` for a PSD matrix.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = floor_eigenvalues(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Distribution function and survival function of the chi law.
#[derive(Debug, Clone)]
enum Chi {
    One,
    Two,
    General(ChiSquared),
}

impl Chi {
    fn new(d: usize) -> Self {
        match d {
            1 => Chi::One,
            2 => Chi::Two,
            _ => Chi::General(ChiSquared::new(d as f64).expect("positive degrees of freedom")),
        }
    }

    fn cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match self {
            Chi::One => erf(r / std::f64::consts::SQRT_2),
            Chi::Two => -(-0.5 * r * r).exp_m1(),
            Chi::General(c) => c.cdf(r * r),
        }
    }

    fn sf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 1.0;
        }
        match self {
            Chi::One => erfc(r / std::f64::consts::SQRT_2),
            Chi::Two => (-0.5 * r * r).exp(),
            Chi::General(c) => c.sf(r * r),
        }
    }
}

/// `P(A r^2 + 2 B r + C > c)` for `r ~ chi_d`.
fn radial_exceedance(chi: &Chi, a: f64, b: f64, cc: f64, c: f64) -> f64 {
    let k = cc - c;
    if a <= 0.0 {
        if b == 0.0 {
            return if k > 0.0 { 1.0 } else { 0.0 };
        }
        let r0 = -k / (2.0 * b);
        return if b > 0.0 { chi.sf(r0) } else { chi.cdf(r0) };
    }
    let disc = b * b - a * k;
    if disc <= 0.0 {
        return 1.0;
    }
    let s = disc.sqrt();
    let (r1, r2) = if b >= 0.0 {
        let q = -(b + s);
        (q / a, k / q)
    } else {
        let q = -b + s;
        (k / q, q / a)
    };
    let (r1, r2) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    (chi.cdf(r1) + chi.sf(r2)).min(1.0)
}

/// Fixed Monte Carlo design shared by all evaluations of one test.
#[derive(Debug, Clone)]
pub struct NullDesign {
    h: f64,
    chi: Chi,
    /// `A` per direction.
    a: Vec<f64>,
    /// `L u` per direction.
    lu: Vec<DVector<f64>>,
    /// `h N^{-1} v` per grid point, and `C = h^2 v'N^{-1}v`.
    grid: Vec<(DVector<f64>, f64)>,
    boundary: Vec<DVector<f64>>,
}

impl NullDesign {
    /// `xi_cov` is the covariance of the estimator difference, `norm` the
    /// matrix defining the norm. `mc_draws` directions are used, in
    /// antithetic pairs; one dimension needs a single pair.
    pub fn new(
        h: f64,
        xi_cov: &DMatrix<f64>,
        norm: &DMatrix<f64>,
        mc_draws: usize,
        seed: u64,
    ) -> Result<Self> {
        let d = xi_cov.nrows();
        if d == 0 || xi_cov.ncols() != d || norm.nrows() != d || norm.ncols() != d {
            return Err(Error::invalid(
                "covariance and norm matrices must be square and of equal size",
            ));
        }
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!(
                "slack h = {h} must be finite and nonnegative"
            )));
        }
        if xi_cov.iter().chain(norm.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance or norm matrix".into()));
        }
        let norm_chol = cholesky(norm)?;
        let l = psd_sqrt(xi_cov);

        let directions: Vec<DVector<f64>> = if d == 1 {
            vec![DVector::from_element(1, 1.0)]
        } else {
            let pairs = (mc_draws / 2).max(1);
            (0..pairs as u64)
                .map(|i| {
                    let mut rng = stream_rng(seed, i);
                    loop {
                        let z = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                        let len = z.norm();
                        if len > 0.0 {
                            return z / len;
                        }
                    }
                })
                .collect()
        };
        let lu: Vec<DVector<f64>> = directions.iter().map(|u| &l * u).collect();
        let a = lu.iter().map(|x| x.dot(&norm_chol.solve(x))).collect();

        let lower = norm_chol.l();
        let boundary: Vec<DVector<f64>> = if h == 0.0 {
            vec![DVector::zeros(d)]
        } else {
            unit_grid(d, seed).into_iter().map(|e| &lower * e).collect()
        };
        let grid = boundary
            .iter()
            .map(|v| {
                let g = norm_chol.solve(v);
                let cc = h * h * v.dot(&g);
                (g * h, cc)
            })
            .collect();
        Ok(NullDesign {
            h,
            chi: Chi::new(d),
            a,
            lu,
            grid,
            boundary,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    fn terms(&self, v: usize, c: f64) -> Vec<f64> {
        let (g, cc) = &self.grid[v];
        self.lu
            .iter()
            .zip(&self.a)
            .map(|(x, &a)| {
                let b = g.dot(x);
                0.5 * (radial_exceedance(&self.chi, a, b, *cc, c)
                    + radial_exceedance(&self.chi, a, -b, *cc, c))
            })
            .collect()
    }

    /// `P(||h v + xi||^2 > c)` at grid point `v`.
    pub fn exceedance(&self, v: usize, c: f64) -> f64 {
        let t = self.terms(v, c);
        pairwise_sum(&t) / t.len() as f64
    }

    fn exceedance_se(&self, v: usize, c: f64) -> f64 {
        let t = self.terms(v, c);
        let k = t.len();
        if k < 2 {
            return 0.0;
        }
        let mean = pairwise_sum(&t) / k as f64;
        let dev: Vec<f64> = t.iter().map(|x| (x - mean).powi(2)).collect();
        (pairwise_sum(&dev) / (k - 1) as f64 / k as f64).sqrt()
    }

    /// Supremum of the exceedance probability over the grid.
    pub fn sup_exceedance(&self, c: f64) -> f64 {
        (0..self.grid.len())
            .into_par_iter()
            .map(|v| self.exceedance(v, c))
            .collect::<Vec<_>>()
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Root of `exceedance(v, c) = alpha` in `c`.
    fn root(&self, v: usize, alpha: f64) -> f64 {
        let mut lo = 0.0;
        if self.exceedance(v, lo) <= alpha {
            return lo;
        }
        let mut hi = 1.0f64.max(2.0 * self.grid[v].1);
        let mut guard = 0;
        while self.exceedance(v, hi) > alpha && guard < 2000 {
            lo = hi;
            hi *= 2.0;
            guard += 1;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= 1e-12 * hi || mid == lo || mid == hi {
                break;
            }
            if self.exceedance(v, mid) > alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Smallest `c` with `sup_v P_v(c) <= alpha`.
    pub fn critical_value(&self, alpha: f64) -> Result<CriticalValue> {
        check_alpha(alpha)?;
        let mut best = 0;
        let mut c = self.root(0, alpha);
        for v in 1..self.grid.len() {
            if self.exceedance(v, c) > alpha {
                c = self.root(v, alpha);
                best = v;
            }
        }
        let se_p = self.exceedance_se(best, c);
        let mc_se = if se_p == 0.0 || c == 0.0 {
            0.0
        } else {
            let step = 1e-4 * c;
            let slope =
                (self.exceedance(best, c - step) - self.exceedance(best, c + step)) / (2.0 * step);
            if slope > 0.0 {
                se_p / slope
            } else {
                f64::INFINITY
            }
        };
        Ok(CriticalValue {
            value: c,
            mc_se,
            worst_direction: self.boundary[best].iter().copied().collect(),
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha = {alpha} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Unit vectors covering half of the sphere (the exceedance probability is
/// symmetric in `v`), plus the coordinate axes.
fn unit_grid(d: usize, seed: u64) -> Vec<DVector<f64>> {
    match d {
        1 => vec![DVector::from_element(1, 1.0)],
        2 => (0..CIRCLE_POINTS)
            .map(|k| {
                let t = std::f64::consts::PI * k as f64 / CIRCLE_POINTS as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect(),
        _ => {
            let mut pts: Vec<DVector<f64>> = if d == 3 {
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                (0..SPHERE_POINTS)
                    .map(|k| {
                        let z = 1.0 - (k as f64 + 0.5) / SPHERE_POINTS as f64 * 2.0;
                        let r = (1.0 - z * z).sqrt();
                        let t = golden * k as f64;
                        DVector::from_vec(vec![r * t.cos(), r * t.sin(), z])
                    })
                    .collect()
            } else {
                (0..SPHERE_POINTS as u64)
                    .map(|k| {
                        let mut rng = stream_rng(seed ^ 0x5eed_9e37_79b9_7f4a, k);
                        let z = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                        let len = z.norm();
                        z / len
                    })
                    .collect()
            };
            pts.extend((0..d).map(|i| DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 })));
            pts
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub value: f64,
    /// Monte Carlo standard error (delta method), zero when exact.
    pub mc_se: f64,
    /// Least favourable `v` on the grid.
    pub worst_direction: Vec<f64>,
}

/// Critical value when the norm matrix equals the covariance of the
/// difference.
pub fn critical_value(
    h: f64,
    sigma: &DMatrix<f64>,
    alpha: f64,
    mc_draws: usize,
    seed: u64,
) -> Result<CriticalValue> {
    check_alpha(alpha)?;
    NullDesign::new(h, sigma, sigma, mc_draws, seed)?.critical_value(alpha)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormChoice {
    Identity,
    /// Covariance of the estimator difference (Mahalanobis distance).
    #[default]
    Difference,
    Matrix(Vec<Vec<f64>>),
}

impl NormChoice {
    fn resolve(&self, sigma_diff: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let d = sigma_diff.nrows();
        match self {
            NormChoice::Identity => Ok(DMatrix::identity(d, d)),
            NormChoice::Difference => Ok(sigma_diff.clone()),
            NormChoice::Matrix(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::invalid(format!("norm matrix must be {d}x{d}")));
                }
                Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_mc_draws() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    #[serde(default)]
    pub h: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub norm: NormChoice,
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TestSpec {
    fn default() -> Self {
        TestSpec {
            h: 0.0,
            alpha: default_alpha(),
            norm: NormChoice::Difference,
            mc_draws: default_mc_draws(),
            seed: 0,
        }
    }
}

impl TestSpec {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::invalid(format!(
                "slack h = {} must be finite and nonnegative",
                self.h
            )));
        }
        if self.mc_draws < 2 {
            return Err(Error::invalid("mc_draws must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    /// Compared with the squared statistic.
    pub critical_value: f64,
    pub critical_value_se: f64,
    pub p_value_formal: f64,
    pub p_value_heuristic: f64,
    pub reject: bool,
    pub h: f64,
    pub alpha: f64,
    pub norm_matrix: Vec<Vec<f64>>,
    pub sigma_diff: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Formal test with covariance `sigma_diff` of the difference, and the
/// heuristic p-value that uses the marginal covariance `var_beta1` of the
/// first estimator instead.
pub fn robustness_test(
    beta1: &[f64],
    beta2: &[f64],
    sigma_diff: &DMatrix<f64>,
    var_beta1: &DMatrix<f64>,
    spec: &TestSpec,
) -> Result<TestReport> {
    spec.validate()?;
    let d = beta1.len();
    if beta2.len() != d || sigma_diff.nrows() != d || var_beta1.nrows() != d {
        return Err(Error::invalid(
            "estimates and covariance matrices differ in dimension",
        ));
    }
    let diff: Vec<f64> = beta1.iter().zip(beta2).map(|(a, b)| a - b).collect();
    let sigma = floor_eigenvalues(sigma_diff);
    let norm = spec.norm.resolve(&sigma)?;

    if diff.iter().all(|&x| x == 0.0) && sigma.iter().all(|&x| x == 0.0) {
        return Ok(TestReport {
            statistic: 0.0,
            critical_value: 0.0,
            critical_value_se: 0.0,
            p_value_formal: 1.0,
            p_value_heuristic: 1.0,
            reject: false,
            h: spec.h,
            alpha: spec.alpha,
            norm_matrix: rows_of(&norm),
            sigma_diff: rows_of(&sigma),
        });
    }

    let statistic = mahalanobis(&diff, &norm)?;
    let design = NullDesign::new(spec.h, &sigma, &norm, spec.mc_draws, spec.seed)?;
    let cv = design.critical_value(spec.alpha)?;
    let p_formal = design.sup_exceedance(statistic * statistic).clamp(0.0, 1.0);

    let marginal = floor_eigenvalues(var_beta1);
    let heuristic_norm = match spec.norm {
        NormChoice::Difference => marginal.clone(),
        _ => norm.clone(),
    };
    let heuristic_stat = mahalanobis(&diff, &heuristic_norm)?;
    let heuristic = NullDesign::new(spec.h, &marginal, &heuristic_norm, spec.mc_draws, spec.seed)?;
    let p_heuristic = heuristic
        .sup_exceedance(heuristic_stat * heuristic_stat)
        .clamp(0.0, 1.0);

    Ok(TestReport {
        statistic,
        critical_value: cv.value,
        critical_value_se: cv.mc_se,
        p_value_formal: p_formal,
        p_value_heuristic: p_heuristic,
        reject: statistic * statistic > cv.value,
        h: spec.h,
        alpha: spec.alpha,
        norm_matrix: rows_of(&norm),
        sigma_diff: rows_of(&sigma),
    })
}

/// Scalar test from the joint covariance of `(beta1, beta2)`.
pub fn scalar_test(
    beta1: f64,
    beta2: f64,
    var1: f64,
    var2: f64,
    cov12: f64,
    spec: &TestSpec,
) -> Result<TestReport> {
    let diff_var = DMatrix::from_element(1, 1, var1 + var2 - 2.0 * cov12);
    robustness_test(
        &[beta1],
        &[beta2],
        &diff_var,
        &DMatrix::from_element(1, 1, var1),
        spec,
    )
}
