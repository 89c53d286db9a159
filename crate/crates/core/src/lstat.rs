//! L-statistics `(1/n) sum m(X_i) w_i` and the plug-in estimator of their
//! joint asymptotic covariance.
//!
//! The plug-in estimator is a double Riemann-Stieltjes sum over the order
//! statistics of the two target columns,
//!
//! ```text
//! sum_a sum_b I(x_(a), y_(b)) * [m_j(x_(a+1)) - m_j(x_(a))] * [m_k(y_(b+1)) - m_k(y_(b))]
//! I = [1 - K_j(x) - K_k(y)] [F_jk(x, y) - F_j(x) F_k(y)]
//!   + [K_jk(x, y) F_jk(x, y) - K_j(x) K_k(y) F_j(x) F_k(y)]
//! ```
//!
//! with empirical `F`s and conditional weight means `K` (see
//! [`crate::weights::k_f_hat`]). The increment after the largest order
//! statistic is zero. With all weights equal to one every term cancels and
//! the estimate is exactly zero, although the true variance is not; the
//! returned [`AnalyticCov`] lists those statistics so reports can flag them.
//! Inference defaults to the bootstrap.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::numeric::{pairwise_sum, symmetrize};
use crate::weights::{WeightFunction, WeightScheme};

/// Pointwise transformation `m` together with its derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    Power {
        exponent: f64,
    },
    /// Cubic Hermite interpolation through `(x, m(x), m'(x))` rows, sorted
    /// by `x`; undefined outside the table.
    Table {
        points: Vec<[f64; 3]>,
    },
}

impl Transform {
    pub fn eval(&self, x: f64) -> Option<f64> {
        let v = match self {
            Transform::Identity => x,
            Transform::Power { exponent } => x.powf(*exponent),
            Transform::Table { points } => hermite(points, x, false)?,
        };
        v.is_finite().then_some(v)
    }

    pub fn derivative(&self, x: f64) -> Option<f64> {
        let v = match self {
            Transform::Identity => 1.0,
            Transform::Power { exponent } => exponent * x.powf(exponent - 1.0),
            Transform::Table { points } => hermite(points, x, true)?,
        };
        v.is_finite().then_some(v)
    }

    pub fn validate(&self) -> Result<()> {
        if let Transform::Table { points } = self {
            if points.len() < 2 {
                return Err(Error::invalid("transform table needs at least two rows"));
            }
            if points.windows(2).any(|w| w[0][0] >= w[1][0]) {
                return Err(Error::invalid(
                    "transform table x values must be strictly ascending",
                ));
            }
            if points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid("transform table entries must be finite"));
            }
        }
        Ok(())
    }

    fn apply_all(&self, xs: &[f64]) -> Result<Vec<f64>> {
        xs.iter()
            .enumerate()
            .map(|(index, &value)| {
                self.eval(value)
                    .ok_or(Error::TransformUndefined { index, value })
            })
            .collect()
    }
}

fn hermite(points: &[[f64; 3]], x: f64, derivative: bool) -> Option<f64> {
    let first = points.first()?[0];
    let last = points.last()?[0];
    if !(first..=last).contains(&x) {
        return None;
    }
    let k = points
        .partition_point(|p| p[0] <= x)
        .clamp(1, points.len() - 1);
    let [x0, y0, d0] = points[k - 1];
    let [x1, y1, d1] = points[k];
    let h = x1 - x0;
    let t = (x - x0) / h;
    let (t2, t3) = (t * t, t * t * t);
    Some(if derivative {
        let h00 = 6.0 * t2 - 6.0 * t;
        let h10 = 3.0 * t2 - 4.0 * t + 1.0;
        let h01 = -6.0 * t2 + 6.0 * t;
        let h11 = 3.0 * t2 - 2.0 * t;
        (h00 * y0 + h01 * y1) / h + h10 * d0 + h11 * d1
    } else {
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
    })
}

/// One statistic: transformation, target column and weight scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LStatSpec {
    pub column: String,
    #[serde(default)]
    pub transform: Transform,
    pub scheme: WeightScheme,
}

impl LStatSpec {
    pub fn new(column: &str, transform: Transform, scheme: WeightScheme) -> Self {
        LStatSpec {
            column: column.into(),
            transform,
            scheme,
        }
    }

    pub fn mean(column: &str) -> Self {
        Self::new(column, Transform::Identity, WeightScheme::AllOnes)
    }
}

/// `(1/n) sum_i mass_i m(X_i) w_i` with weights computed on `data`.
pub fn lstat_eval(spec: &LStatSpec, data: &PanelDataset) -> Result<f64> {
    spec.transform.validate()?;
    let x = data.column(&spec.column)?;
    let w = spec.scheme.compute(data)?;
    let m = spec.transform.apply_all(x)?;
    let terms: Vec<f64> = m
        .iter()
        .zip(&w)
        .zip(data.mass())
        .map(|((mi, wi), mass)| mass * mi * wi)
        .collect();
    Ok(pairwise_sum(&terms) / x.len() as f64)
}

/// The same statistic as a Stieltjes integral `int_0^1 m(Q_n) dK_n`: the
/// quantile function is constant on each cell `((i-1)/n, i/n]`, so the
/// integral is `sum_i m(X_(i)) [K_n(i/n) - K_n((i-1)/n)]`.
pub fn stieltjes_integral(values: &[f64], weights: &[f64], transform: &Transform) -> Result<f64> {
    let (sorted, k) = WeightFunction::from_sample(values, weights)?;
    let m = transform.apply_all(&sorted)?;
    let terms: Vec<f64> = m
        .iter()
        .zip(k.grid_increments())
        .map(|(a, b)| a * b)
        .collect();
    Ok(pairwise_sum(&terms))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovSource {
    Analytic,
    Bootstrap,
    Oracle,
}

/// Statistic values with an estimate of their (sqrt(n)-scaled) covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate {
    pub values: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub source: CovSource,
    pub n: usize,
    pub flags: Vec<String>,
}

impl JointEstimate {
    pub fn d(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticCov {
    pub matrix: DMatrix<f64>,
    /// Statistics whose weights are all one, where the estimator is
    /// identically zero.
    pub degenerate: Vec<usize>,
}

struct Prepared {
    x: Vec<f64>,
    w: Vec<f64>,
    /// row indices sorted by x
    order: Vec<usize>,
    /// position of each row in `order`
    rank: Vec<usize>,
    /// `upper[p]`: one past the last sorted position tied with position p
    upper: Vec<usize>,
    /// m(x_(p+1)) - m(x_(p)); zero at the last position
    dm: Vec<f64>,
    /// prefix sums of w along `order`
    wprefix: Vec<f64>,
}

impl Prepared {
    fn new(spec: &LStatSpec, data: &PanelDataset) -> Result<Self> {
        spec.transform.validate()?;
        let x = data.column(&spec.column)?.to_vec();
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "column `{}` row {i}",
                spec.column
            )));
        }
        let w = spec.scheme.compute(data)?;
        let n = x.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let mut rank = vec![0; n];
        for (p, &i) in order.iter().enumerate() {
            rank[i] = p;
        }
        let mut upper = vec![n; n];
        for p in (0..n.saturating_sub(1)).rev() {
            upper[p] = if x[order[p]] == x[order[p + 1]] {
                upper[p + 1]
            } else {
                p + 1
            };
        }
        let sorted: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        let m = spec.transform.apply_all(&sorted).map_err(|e| match e {
            Error::TransformUndefined { index, value } => Error::TransformUndefined {
                index: order[index],
                value,
            },
            other => other,
        })?;
        let mut dm: Vec<f64> = m.windows(2).map(|p| p[1] - p[0]).collect();
        dm.push(0.0);
        let mut wprefix = Vec::with_capacity(n + 1);
        wprefix.push(0.0);
        for &i in &order {
            wprefix.push(wprefix.last().unwrap() + w[i]);
        }
        Ok(Prepared {
            x,
            w,
            order,
            rank,
            upper,
            dm,
            wprefix,
        })
    }

    /// (F_n(x_(p)), K_n^F(x_(p)))
    fn marginal(&self, p: usize) -> (f64, f64) {
        let u = self.upper[p];
        let n = self.x.len() as f64;
        (u as f64 / n, self.wprefix[u] / u as f64)
    }
}

fn pair_sum(a: &Prepared, b: &Prepared) -> Result<f64> {
    let n = a.x.len();
    let nf = n as f64;
    let marg_b: Vec<(f64, f64)> = (0..n).map(|q| b.marginal(q)).collect();
    let rows: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            if a.dm[p] == 0.0 {
                return Ok(0.0);
            }
            let (fj, kj) = a.marginal(p);
            // joint counts along b's sorted positions for rows with x_j <= x_(p)
            let mut cnt = vec![0u32; n];
            let mut sw = vec![0.0; n];
            for &i in &a.order[..a.upper[p]] {
                let pos = b.rank[i];
                cnt[pos] += 1;
                sw[pos] += a.w[i] * b.w[i];
            }
            let mut cum_cnt = Vec::with_capacity(n + 1);
            let mut cum_sw = Vec::with_capacity(n + 1);
            cum_cnt.push(0u32);
            cum_sw.push(0.0);
            for q in 0..n {
                cum_cnt.push(cum_cnt[q] + cnt[q]);
                cum_sw.push(cum_sw[q] + sw[q]);
            }
            let mut terms = Vec::with_capacity(n);
            for q in 0..n {
                if b.dm[q] == 0.0 {
                    continue;
                }
                let (fk, kk) = marg_b[q];
                let u = b.upper[q];
                let c = cum_cnt[u];
                let fjk = c as f64 / nf;
                let kjk = if c == 0 { 0.0 } else { cum_sw[u] / c as f64 };
                let integrand = (1.0 - kj - kk) * (fjk - fj * fk) + (kjk * fjk - kj * kk * fj * fk);
                let term = integrand * b.dm[q];
                if !term.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "covariance integrand at grid point ({}, {})",
                        a.x[a.order[p]], b.x[b.order[q]]
                    )));
                }
                terms.push(term);
            }
            Ok(a.dm[p] * pairwise_sum(&terms))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&rows))
}

/// Plug-in covariance of `sqrt(n) (beta_1, ..., beta_d)`. Requires unit
/// row masses.
pub fn analytic_cov(specs: &[LStatSpec], data: &PanelDataset) -> Result<AnalyticCov> {
    if specs.is_empty() {
        return Err(Error::invalid(
            "analytic covariance needs at least one statistic",
        ));
    }
    if !data.has_unit_mass() {
        return Err(Error::invalid(
            "analytic covariance is defined for unit row masses only",
        ));
    }
    let prepared = specs
        .iter()
        .map(|s| Prepared::new(s, data))
        .collect::<Result<Vec<_>>>()?;
    let d = specs.len();
    let mut cov = DMatrix::zeros(d, d);
    for j in 0..d {
        for k in j..d {
            let v = pair_sum(&prepared[j], &prepared[k])?;
            cov[(j, k)] = v;
            cov[(k, j)] = v;
        }
    }
    let degenerate = prepared
        .iter()
        .enumerate()
        .filter(|(_, p)| p.w.iter().all(|&w| w == 1.0))
        .map(|(i, _)| i)
        .collect();
    Ok(AnalyticCov {
        matrix: symmetrize(&cov),
        degenerate,
    })
}

pub fn analytic_joint_estimate(specs: &[LStatSpec], data: &PanelDataset) -> Result<JointEstimate> {
    let values = specs
        .iter()
        .map(|s| lstat_eval(s, data))
        .collect::<Result<Vec<_>>>()?;
    let cov = analytic_cov(specs, data)?;
    let flags = cov
        .degenerate
        .iter()
        .map(|i| {
            format!("statistic {i}: all weights are one; analytic estimate is identically zero")
        })
        .collect();
    Ok(JointEstimate {
        values,
        cov: cov.matrix,
        source: CovSource::Analytic,
        n: data.n_rows(),
        flags,
    })
}

/// Inputs of the quantile-domain covariance integrand at `(s, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileKernelInputs {
    /// `Q_j'(s)`
    pub q_prime_j: f64,
    /// `Q_k'(t)`
    pub q_prime_k: f64,
    /// `m_j'(Q_j(s))`
    pub m_prime_j: f64,
    /// `m_k'(Q_k(t))`
    pub m_prime_k: f64,
    /// `F^Q_jk(s, t) = P(X_j <= Q_j(s), X_k <= Q_k(t))`
    pub copula: f64,
    /// `K_j(s)`
    pub k_j: f64,
    /// `K_k(t)`
    pub k_k: f64,
    /// `K_jk(s, t)`
    pub k_jk: f64,
}

/// The quantile-domain covariance integrand, term for term:
/// `m_j' Q_j' m_k' Q_k' ([F - st] + [K_jk F - st K_j K_k] - K_j [F - st] - K_k [F - st])`.
pub fn quantile_domain_cov_kernel(s: f64, t: f64, inp: &QuantileKernelInputs) -> Result<f64> {
    if !(s > 0.0 && s < 1.0 && t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!(
            "kernel arguments ({s}, {t}) outside (0, 1)"
        )));
    }
    let fields = [
        inp.q_prime_j,
        inp.q_prime_k,
        inp.m_prime_j,
        inp.m_prime_k,
        inp.copula,
        inp.k_j,
        inp.k_k,
        inp.k_jk,
    ];
    if fields.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantile-domain kernel input".into()));
    }
    let bridge = inp.copula - s * t;
    let bracket = bridge + (inp.k_jk * inp.copula - s * t * inp.k_j * inp.k_k)
        - inp.k_j * bridge
        - inp.k_k * bridge;
    Ok(inp.m_prime_j * inp.q_prime_j * inp.m_prime_k * inp.q_prime_k * bracket)
}

/// Covariance kernel of `sqrt(n) [m(Q_n) - m(Q)]` for a smooth marginal:
/// `m'(Q(s)) Q'(s) m'(Q(t)) Q'(t) (min(s, t) - s t)`. Zero on the boundary.
pub fn pure_quantile_process_cov(
    m_prime: impl Fn(f64) -> f64,
    quantile: impl Fn(f64) -> f64,
    quantile_prime: impl Fn(f64) -> f64,
    s: f64,
    t: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!(
            "kernel arguments ({s}, {t}) outside [0, 1]"
        )));
    }
    let bridge = s.min(t) - s * t;
    if bridge == 0.0 {
        return Ok(0.0);
    }
    let v = m_prime(quantile(s))
        * quantile_prime(s)
        * m_prime(quantile(t))
        * quantile_prime(t)
        * bridge;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("quantile kernel at ({s}, {t})")));
    }
    Ok(v)
}

/// Midpoint rule on a `cells x cells` grid over `(0, 1)^2`.
pub fn integrate_unit_square(
    f: impl Fn(f64, f64) -> Result<f64> + Sync,
    cells: usize,
) -> Result<f64> {
    let h = 1.0 / cells as f64;
    let rows = (0..cells)
        .into_par_iter()
        .map(|i| {
            let s = (i as f64 + 0.5) * h;
            let row = (0..cells)
                .map(|j| f(s, (j as f64 + 0.5) * h))
                .collect::<Result<Vec<f64>>>()?;
            Ok(pairwise_sum(&row))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&rows) * h * h)
}
