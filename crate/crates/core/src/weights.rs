//! Observation weights and the random weight function `K_n`.
//!
//! A [`WeightScheme`] turns a dataset into one weight per row. Sorting the
//! weights along a target column gives a [`WeightFunction`], whose `K_n` is
//! piecewise linear on `[0, 1]` with slope `w_(i)` on `((i - 1)/n, i/n]`, so
//! that `int m(Q_n) dK_n = (1/n) sum m(X_i) w_i`.
//!
//! Quantile thresholds are computed from the mass-weighted empirical
//! distribution of the dataset at hand. Evaluated on a bootstrap resample,
//! they are order statistics of the resample, not of the original data.

use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::empirical::rank_for_level;
use crate::error::{Error, Result};
use crate::regress::{self, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightScheme {
    AllOnes,
    /// Keep a row iff every listed column lies between its `ceil(lower_q n)`
    /// and `ceil(upper_q n)` order statistics.
    QuantileTrim {
        columns: Vec<String>,
        lower_q: f64,
        upper_q: f64,
    },
    /// Keep a row iff `|e| < c * sigma_hat` for the residual of `model`
    /// (and, for an IV model, also for the first-stage residual).
    ResidualTrim {
        #[serde(default)]
        model: Option<ModelSpec>,
        multiplier: f64,
    },
    /// Ratio weights `clamp(v, L, U) / v`.
    Winsorize {
        column: String,
        lower_q: f64,
        upper_q: f64,
    },
    Custom {
        weights: Vec<f64>,
    },
}

impl WeightScheme {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightScheme::QuantileTrim {
                lower_q, upper_q, ..
            }
            | WeightScheme::Winsorize {
                lower_q, upper_q, ..
            } => check_levels(*lower_q, *upper_q),
            WeightScheme::ResidualTrim { multiplier, .. } => {
                if multiplier.is_nan() || *multiplier <= 0.0 {
                    return Err(Error::invalid(format!(
                        "multiplier {multiplier} must be positive"
                    )));
                }
                Ok(())
            }
            WeightScheme::Custom { weights } => {
                if weights.iter().any(|w| !w.is_finite()) {
                    return Err(Error::invalid("custom weights must be finite"));
                }
                Ok(())
            }
            WeightScheme::AllOnes => Ok(()),
        }
    }

    /// Weights for every row of `data`.
    pub fn compute(&self, data: &PanelDataset) -> Result<Vec<f64>> {
        self.validate()?;
        let n = data.n_rows();
        match self {
            WeightScheme::AllOnes => Ok(vec![1.0; n]),
            WeightScheme::QuantileTrim {
                columns,
                lower_q,
                upper_q,
            } => weights_quantile_trim(data, columns, *lower_q, *upper_q),
            WeightScheme::ResidualTrim { model, multiplier } => {
                let model = model
                    .as_ref()
                    .ok_or_else(|| Error::Config("residual_trim scheme has no model".into()))?;
                residual_trim_for_model(model, data, *multiplier)
            }
            WeightScheme::Winsorize {
                column,
                lower_q,
                upper_q,
            } => winsorize_with_mass(data.column(column)?, data.mass(), *lower_q, *upper_q),
            WeightScheme::Custom { weights } => {
                if weights.len() != n {
                    return Err(Error::Data(format!(
                        "custom weights have {} entries, dataset has {n} rows",
                        weights.len()
                    )));
                }
                Ok(weights.clone())
            }
        }
    }

    /// Declared bound `M` on `|w|`: 1 for indicator schemes, otherwise the
    /// realized maximum.
    pub fn bound(&self, weights: &[f64]) -> f64 {
        match self {
            WeightScheme::AllOnes
            | WeightScheme::QuantileTrim { .. }
            | WeightScheme::ResidualTrim { .. } => 1.0,
            _ => weights.iter().fold(0.0, |m, w| m.max(w.abs())),
        }
    }

    /// True when the scheme keeps every row with weight 1 by construction.
    pub fn is_all_ones(&self) -> bool {
        matches!(self, WeightScheme::AllOnes)
    }
}

fn check_levels(lower_q: f64, upper_q: f64) -> Result<()> {
    if !(0.0 <= lower_q && lower_q < upper_q && upper_q <= 1.0) {
        return Err(Error::invalid(format!(
            "trim levels must satisfy 0 <= lower ({lower_q}) < upper ({upper_q}) <= 1"
        )));
    }
    Ok(())
}

/// Generalized inverse of the mass-weighted ECDF of `values` at `level`:
/// the smallest value whose cumulative mass share reaches `level`.
/// With unit masses this is the order statistic `X_(ceil(level n))`;
/// `level = 0` gives `-inf` (no bound).
pub fn weighted_quantile(values: &[f64], mass: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if level <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if mass.iter().all(|&m| m == 1.0) {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let k = rank_for_level(level, sorted.len()).min(sorted.len());
        return Ok(sorted[k - 1]);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = order.iter().map(|&i| mass[i]).sum();
    if total <= 0.0 {
        return Err(Error::NonFinite("total mass is not positive".into()));
    }
    let mut cum = 0.0;
    for &i in &order {
        cum += mass[i];
        if cum / total >= level {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().unwrap()])
}

pub fn weights_quantile_trim(
    data: &PanelDataset,
    columns: &[String],
    lower_q: f64,
    upper_q: f64,
) -> Result<Vec<f64>> {
    check_levels(lower_q, upper_q)?;
    let mut w = vec![1.0; data.n_rows()];
    for name in columns {
        let col = data.column(name)?;
        let lo = weighted_quantile(col, data.mass(), lower_q)?;
        let hi = weighted_quantile(col, data.mass(), upper_q)?;
        for (wi, &v) in w.iter_mut().zip(col) {
            if !(lo <= v && v <= hi) {
                *wi = 0.0;
            }
        }
    }
    Ok(w)
}

/// `w_i = 1{|e_i| < c * sigma}`.
pub fn weights_residual_trim(residuals: &[f64], sigma_hat: f64, c: f64) -> Result<Vec<f64>> {
    if sigma_hat.is_nan() || sigma_hat <= 0.0 {
        return Err(Error::invalid(format!(
            "sigma_hat {sigma_hat} must be positive"
        )));
    }
    if c.is_nan() || c <= 0.0 {
        return Err(Error::invalid(format!("multiplier {c} must be positive")));
    }
    let cut = c * sigma_hat;
    Ok(residuals
        .iter()
        .map(|e| if e.abs() < cut { 1.0 } else { 0.0 })
        .collect())
}

/// Fits `model` without weights, then trims on the residual scale. For an
/// IV model the first-stage residual indicator is conjoined.
pub fn residual_trim_for_model(model: &ModelSpec, data: &PanelDataset, c: f64) -> Result<Vec<f64>> {
    let ones = vec![1.0; data.n_rows()];
    let fit = regress::fit_weighted(model, data, &ones)?;
    let sigma_e = regress::sigma_hat(&fit.residuals, data, model.normalization)?;
    let mut w = weights_residual_trim(&fit.residuals, sigma_e, c)?;
    if let Some(v) = &fit.first_stage_residuals {
        let sigma_v = regress::sigma_hat(v, data, model.normalization)?;
        let wv = weights_residual_trim(v, sigma_v, c)?;
        for (a, b) in w.iter_mut().zip(wv) {
            *a *= b;
        }
    }
    Ok(w)
}

/// Ratio weights such that `(1/n) sum v_i w_i` is the Winsorized mean.
pub fn weights_winsorize(values: &[f64], lower_q: f64, upper_q: f64) -> Result<Vec<f64>> {
    winsorize_with_mass(values, &vec![1.0; values.len()], lower_q, upper_q)
}

fn winsorize_with_mass(
    values: &[f64],
    mass: &[f64],
    lower_q: f64,
    upper_q: f64,
) -> Result<Vec<f64>> {
    check_levels(lower_q, upper_q)?;
    let lo = weighted_quantile(values, mass, lower_q)?;
    let hi = weighted_quantile(values, mass, upper_q)?;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let clamped = v.max(lo).min(hi);
            if v == 0.0 {
                if clamped == 0.0 {
                    Ok(1.0)
                } else {
                    Err(Error::WinsorizeZero { index: i })
                }
            } else {
                Ok(clamped / v)
            }
        })
        .collect()
}

/// Weights in the order of the target variable, `w_(1), ..., w_(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunction {
    ordered: Vec<f64>,
    prefix: Vec<f64>,
}

impl WeightFunction {
    pub fn from_ordered(ordered: Vec<f64>) -> Result<Self> {
        if ordered.is_empty() {
            return Err(Error::EmptySample);
        }
        if ordered.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("weight".into()));
        }
        let mut prefix = Vec::with_capacity(ordered.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for w in &ordered {
            acc += w;
            prefix.push(acc);
        }
        Ok(WeightFunction { ordered, prefix })
    }

    /// Sorts `weights` along `values` (stable for ties). Returns the sorted
    /// values together with the weight function.
    pub fn from_sample(values: &[f64], weights: &[f64]) -> Result<(Vec<f64>, Self)> {
        if values.len() != weights.len() {
            return Err(Error::invalid("values and weights differ in length"));
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let sorted = order.iter().map(|&i| values[i]).collect();
        let ordered = order.iter().map(|&i| weights[i]).collect();
        Ok((sorted, Self::from_ordered(ordered)?))
    }

    pub fn n(&self) -> usize {
        self.ordered.len()
    }

    pub fn ordered_weights(&self) -> &[f64] {
        &self.ordered
    }

    pub fn bound(&self) -> f64 {
        self.ordered.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// `K_n(u)`, computed from prefix sums in O(log n).
    pub fn k_n(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid(format!(
                "K_n evaluated at {u} outside [0, 1]"
            )));
        }
        if u == 0.0 {
            return Ok(0.0);
        }
        let n = self.n();
        let nf = n as f64;
        let i = rank_for_level(u, n).min(n);
        let frac = (u * nf - (i - 1) as f64).clamp(0.0, 1.0);
        Ok((self.prefix[i - 1] + self.ordered[i - 1] * frac) / nf)
    }

    /// `K_n(u) = (1/n) sum_i w_(i) clamp(n u - i + 1, 0, 1)`, term by term.
    pub fn k_n_clamp_sum(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid(format!(
                "K_n evaluated at {u} outside [0, 1]"
            )));
        }
        let nf = self.n() as f64;
        let total: f64 = self
            .ordered
            .iter()
            .enumerate()
            .map(|(i, w)| w * (nf * u - i as f64).clamp(0.0, 1.0))
            .sum();
        Ok(total / nf)
    }

    /// Increments `K_n(i/n) - K_n((i-1)/n)` for `i = 1..=n`.
    pub fn grid_increments(&self) -> Vec<f64> {
        let nf = self.n() as f64;
        let mut prev = 0.0;
        (1..=self.n())
            .map(|i| {
                let k = self.k_n(i as f64 / nf).expect("grid point in [0, 1]");
                let d = k - prev;
                prev = k;
                d
            })
            .collect()
    }
}

/// `E_n[w | X <= x]`; 0 when no observation is at or below `x`.
pub fn k_f_hat(x_col: &[f64], w: &[f64], x: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0usize);
    for (&xi, &wi) in x_col.iter().zip(w) {
        if xi <= x {
            num += wi;
            den += 1;
        }
    }
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

/// `E_n[w_j w_k | X_j <= x, X_k <= y]`; 0 on an empty conditioning set.
pub fn k_f_hat_joint(xj: &[f64], xk: &[f64], wj: &[f64], wk: &[f64], x: f64, y: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0usize);
    for i in 0..xj.len() {
        if xj[i] <= x && xk[i] <= y {
            num += wj[i] * wk[i];
            den += 1;
        }
    }
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}
