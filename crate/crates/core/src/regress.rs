//! Weighted OLS and 2SLS on clustered data with fixed-effect dummies.
//!
//! Moments use the equal-cluster normalization `(1/n) sum_i (1/T_i) sum_t`
//! by default; [`Normalization::Pooled`] switches to `1 / sum_i T_i`. The
//! coefficients do not depend on the overall scale, but `sigma_hat` does.
//!
//! Row contributions are multiplied by the row mass of the dataset and by
//! the observation weight `w`, so trimming enters as `w_t = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};

const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    ClusterEqual,
    Pooled,
}

/// A linear model. With a nonempty `instruments` list it is estimated by
/// 2SLS, where `instruments` is the full list of instrument columns
/// (exogenous regressors included). Intercept and fixed-effect dummies are
/// appended to both the regressors and the instruments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome: String,
    pub regressors: Vec<String>,
    #[serde(default)]
    pub instruments: Vec<String>,
    #[serde(default)]
    pub fixed_effects: Vec<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub normalization: Normalization,
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn ols(outcome: &str, regressors: &[&str]) -> Self {
        ModelSpec {
            outcome: outcome.into(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            instruments: Vec::new(),
            fixed_effects: Vec::new(),
            intercept: true,
            normalization: Normalization::ClusterEqual,
        }
    }

    pub fn is_iv(&self) -> bool {
        !self.instruments.is_empty()
    }

    /// The regressor whose first-stage residual is used for IV trimming:
    /// the first regressor that is not its own instrument.
    pub fn endogenous_target(&self) -> &str {
        self.regressors
            .iter()
            .find(|r| !self.instruments.contains(r))
            .unwrap_or(&self.regressors[0])
    }
}

/// Which category of each factor is absorbed into the baseline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Baseline {
    #[default]
    First,
    Last,
}

/// Design rows stored as a dense block plus the active dummy column per
/// factor, so Gram accumulation costs O((k + factors)^2) per row.
struct Design {
    names: Vec<String>,
    dense_width: usize,
    dense: Vec<f64>,
    dummies: Vec<Vec<usize>>,
}

impl Design {
    fn width(&self) -> usize {
        self.names.len()
    }

    fn row_entries(&self, row: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let base = row * self.dense_width;
        out.extend((0..self.dense_width).map(|c| (c, self.dense[base + c])));
        out.extend(self.dummies[row].iter().map(|&c| (c, 1.0)));
    }

    fn column(&self, col: usize) -> Vec<f64> {
        (0..self.dummies.len())
            .map(|r| {
                if col < self.dense_width {
                    self.dense[r * self.dense_width + col]
                } else if self.dummies[r].contains(&col) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn predict(&self, beta: &DVector<f64>) -> Vec<f64> {
        let mut entries = Vec::new();
        (0..self.dummies.len())
            .map(|r| {
                self.row_entries(r, &mut entries);
                entries.iter().map(|&(c, v)| v * beta[c]).sum()
            })
            .collect()
    }
}

fn checked_column<'a>(data: &'a PanelDataset, name: &str) -> Result<&'a [f64]> {
    let col = data.column(name)?;
    if let Some(i) = col.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("column `{name}` row {i}")));
    }
    Ok(col)
}

fn build_design(
    data: &PanelDataset,
    numeric: &[String],
    intercept: bool,
    fixed_effects: &[String],
    baseline: Baseline,
) -> Result<Design> {
    let n = data.n_rows();
    let mut names = Vec::new();
    let mut cols: Vec<&[f64]> = Vec::new();
    if intercept {
        names.push("(intercept)".to_string());
    }
    for name in numeric {
        cols.push(checked_column(data, name)?);
        names.push(name.clone());
    }
    let dense_width = names.len();
    let mut dense = Vec::with_capacity(n * dense_width);
    for r in 0..n {
        if intercept {
            dense.push(1.0);
        }
        dense.extend(cols.iter().map(|c| c[r]));
    }

    let mut dummies = vec![Vec::with_capacity(fixed_effects.len()); n];
    let mut drop_one = intercept;
    for factor in fixed_effects {
        let values = data.factor(factor)?;
        let mut levels: Vec<f64> = values.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let dropped = match (drop_one, baseline) {
            (false, _) => None,
            (true, Baseline::First) => Some(0),
            (true, Baseline::Last) => Some(levels.len() - 1),
        };
        let first_col = names.len();
        let mut col_of_level = vec![None; levels.len()];
        for (k, level) in levels.iter().enumerate() {
            if Some(k) != dropped {
                col_of_level[k] = Some(names.len());
                names.push(format!("{factor}={level}"));
            }
        }
        debug_assert!(names.len() >= first_col);
        for (r, v) in values.iter().enumerate() {
            let k = levels.partition_point(|l| l.total_cmp(v).is_lt());
            if let Some(c) = col_of_level[k] {
                dummies[r].push(c);
            }
        }
        drop_one = true;
    }
    Ok(Design {
        names,
        dense_width,
        dense,
        dummies,
    })
}

/// Per-row factor `mass * w * normalization`.
fn row_factors(data: &PanelDataset, w: &[f64], normalization: Normalization) -> Result<Vec<f64>> {
    if w.len() != data.n_rows() {
        return Err(Error::invalid(format!(
            "weight vector has {} entries, dataset has {} rows",
            w.len(),
            data.n_rows()
        )));
    }
    let sizes = data.cluster_sizes();
    Ok(data
        .cluster_of_row()
        .iter()
        .zip(data.mass())
        .zip(w)
        .map(|((&c, &m), &wi)| {
            let norm = match normalization {
                Normalization::ClusterEqual => 1.0 / sizes[c] as f64,
                Normalization::Pooled => 1.0,
            };
            m * wi * norm
        })
        .collect())
}

fn cross(a: &Design, b: &Design, r: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.width(), b.width());
    let (mut ea, mut eb) = (Vec::new(), Vec::new());
    for (row, &f) in r.iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        a.row_entries(row, &mut ea);
        b.row_entries(row, &mut eb);
        for &(i, vi) in &ea {
            let s = f * vi;
            for &(j, vj) in &eb {
                out[(i, j)] += s * vj;
            }
        }
    }
    out
}

fn cross_vec(a: &Design, y: &[f64], r: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(a.width());
    let mut ea = Vec::new();
    for (row, &f) in r.iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        a.row_entries(row, &mut ea);
        for &(i, vi) in &ea {
            out[i] += f * vi * y[row];
        }
    }
    out
}

/// Solves `gram * x = rhs` (for several right-hand sides) by SVD, failing
/// when the relative rank tolerance detects a deficient matrix.
fn solve_checked(
    gram: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    stage: &'static str,
) -> Result<DMatrix<f64>> {
    let cols = gram.ncols();
    if cols == 0 {
        return Err(Error::Singular {
            stage,
            rank: 0,
            cols,
        });
    }
    if gram.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{stage}: Gram matrix")));
    }
    let svd = gram.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = RANK_TOLERANCE * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if smax <= 0.0 || rank < cols {
        return Err(Error::Singular { stage, rank, cols });
    }
    svd.solve(rhs, tol)
        .map_err(|e| Error::NonFinite(format!("{stage}: {e}")))
}

/// Result of a weighted fit. Residuals cover every row, including rows
/// with zero weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    /// First-stage residual of the endogenous target (IV only).
    pub first_stage_residuals: Option<Vec<f64>>,
}

impl Fit {
    pub fn coefficient(&self, name: &str) -> Result<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
            .ok_or_else(|| Error::MissingColumn(format!("coefficient {name}")))
    }
}

pub fn ols_weighted(model: &ModelSpec, data: &PanelDataset, w: &[f64]) -> Result<Fit> {
    ols_weighted_with_baseline(model, data, w, Baseline::First)
}

pub fn ols_weighted_with_baseline(
    model: &ModelSpec,
    data: &PanelDataset,
    w: &[f64],
    baseline: Baseline,
) -> Result<Fit> {
    let x = build_design(
        data,
        &model.regressors,
        model.intercept,
        &model.fixed_effects,
        baseline,
    )?;
    let y = checked_column(data, &model.outcome)?;
    let r = row_factors(data, w, model.normalization)?;
    let gram = cross(&x, &x, &r);
    let moment = cross_vec(&x, y, &r);
    let beta = solve_checked(
        &gram,
        &DMatrix::from_column_slice(moment.len(), 1, moment.as_slice()),
        "ols",
    )?;
    let beta = beta.column(0).into_owned();
    Ok(finish_fit(&x, y, beta, None))
}

fn finish_fit(x: &Design, y: &[f64], beta: DVector<f64>, first_stage: Option<Vec<f64>>) -> Fit {
    let fitted = x.predict(&beta);
    let residuals = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Fit {
        names: x.names.clone(),
        coefficients: beta.iter().copied().collect(),
        residuals,
        fitted,
        first_stage_residuals: first_stage,
    }
}

/// Two-stage least squares with the weights applied in both stages.
pub fn iv_2sls_weighted(model: &ModelSpec, data: &PanelDataset, w: &[f64]) -> Result<Fit> {
    if !model.is_iv() {
        return Err(Error::invalid(
            "2SLS requires at least one instrument column",
        ));
    }
    let x = build_design(
        data,
        &model.regressors,
        model.intercept,
        &model.fixed_effects,
        Baseline::First,
    )?;
    let z = build_design(
        data,
        &model.instruments,
        model.intercept,
        &model.fixed_effects,
        Baseline::First,
    )?;
    if z.width() < x.width() {
        return Err(Error::Singular {
            stage: "first stage",
            rank: z.width(),
            cols: x.width(),
        });
    }
    let y = checked_column(data, &model.outcome)?;
    let r = row_factors(data, w, model.normalization)?;

    let zz = cross(&z, &z, &r);
    let zx = cross(&z, &x, &r);
    let zy = cross_vec(&z, y, &r);
    // first stage: pi = (Z'RZ)^-1 Z'RX, all regressors at once
    let mut rhs = DMatrix::zeros(z.width(), x.width() + 1);
    rhs.columns_mut(0, x.width()).copy_from(&zx);
    rhs.set_column(x.width(), &zy);
    let pi = solve_checked(&zz, &rhs, "first stage")?;
    let pi_x = pi.columns(0, x.width()).into_owned();
    let pi_y = pi.column(x.width()).into_owned();

    // second stage: (X'RZ pi_x) beta = X'RZ pi_y
    let second = zx.transpose() * &pi_x;
    let moment = zx.transpose() * pi_y;
    let beta = solve_checked(
        &second,
        &DMatrix::from_column_slice(moment.len(), 1, moment.as_slice()),
        "second stage",
    )?
    .column(0)
    .into_owned();

    let target = model.endogenous_target();
    let col = x
        .names
        .iter()
        .position(|n| n == target)
        .ok_or_else(|| Error::MissingColumn(target.to_string()))?;
    let xz = z.predict(&pi_x.column(col).into_owned());
    let v: Vec<f64> = x.column(col).iter().zip(&xz).map(|(a, b)| a - b).collect();
    Ok(finish_fit(&x, y, beta, Some(v)))
}

/// Dispatches on the model type.
pub fn fit_weighted(model: &ModelSpec, data: &PanelDataset, w: &[f64]) -> Result<Fit> {
    if model.is_iv() {
        iv_2sls_weighted(model, data, w)
    } else {
        ols_weighted(model, data, w)
    }
}

/// `sqrt((1/n) sum_i (1/T_i) sum_t e_it^2)` over explicit cluster groups.
pub fn sigma_hat_grouped(groups: &[Vec<f64>]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut total = 0.0;
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::Data(format!("cluster {i} has no residuals")));
        }
        total += g.iter().map(|e| e * e).sum::<f64>() / g.len() as f64;
    }
    Ok((total / groups.len() as f64).sqrt())
}

/// Residual scale on a dataset, honoring row masses: with all masses 1 and
/// equal-cluster normalization this is exactly [`sigma_hat_grouped`].
pub fn sigma_hat(
    residuals: &[f64],
    data: &PanelDataset,
    normalization: Normalization,
) -> Result<f64> {
    if residuals.len() != data.n_rows() {
        return Err(Error::invalid(
            "residual vector does not match dataset rows",
        ));
    }
    if data.n_rows() == 0 {
        return Err(Error::EmptySample);
    }
    let ones = vec![1.0; data.n_rows()];
    let r = row_factors(data, &ones, normalization)?;
    let num: f64 = residuals.iter().zip(&r).map(|(e, f)| f * e * e).sum();
    let den: f64 = r.iter().sum();
    if den <= 0.0 {
        return Err(Error::NonFinite("total mass is not positive".into()));
    }
    Ok((num / den).max(0.0).sqrt())
}

/// Long-run effect, 25-year effect and persistence implied by the
/// coefficient on the treatment and the four lags of the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub long_run: f64,
    pub after_25: f64,
    pub persistence: f64,
    /// Set when persistence is exactly 1 and the long-run effect diverges.
    pub long_run_infinite: bool,
}

pub fn derived_params(beta: [f64; 5]) -> DerivedParams {
    let [b0, b1, b2, b3, b4] = beta;
    let persistence = b1 + b2 + b3 + b4;
    let long_run_infinite = persistence == 1.0;
    let long_run = if long_run_infinite {
        f64::INFINITY.copysign(b0)
    } else {
        b0 / (1.0 - persistence)
    };
    // e_j = b0 + b1 e_{j-1} + ... + b4 e_{j-4}, e_0 = e_-1 = e_-2 = e_-3 = 0
    let mut lags = [0.0f64; 4];
    for _ in 1..=25 {
        let e = b0 + b1 * lags[0] + b2 * lags[1] + b3 * lags[2] + b4 * lags[3];
        lags = [e, lags[0], lags[1], lags[2]];
    }
    DerivedParams {
        long_run,
        after_25: lags[0],
        persistence,
        long_run_infinite,
    }
}
