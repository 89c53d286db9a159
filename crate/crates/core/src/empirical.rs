//! Empirical distribution functions, empirical quantiles and their
//! continuous piecewise-linear interpolations.
//!
//! Level-to-rank conversions all go through [`rank_for_level`], which picks
//! the smallest `k` with `k / n >= level`. That is `ceil(level * n)` in exact
//! arithmetic, and in floating point it agrees bit for bit with inverting the
//! step function returned by [`ecdf`], whose levels are stored as `k / n`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::stream_rng;

/// Observations in ascending order. Never empty, never NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedSample {
    values: Vec<f64>,
}

impl SortedSample {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::NonFinite(format!("NaN at observation {i}")));
        }
        values.sort_by(f64::total_cmp);
        Ok(SortedSample { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `X_(i)` with 1-based `i`.
    pub fn order_statistic(&self, i: usize) -> f64 {
        self.values[i - 1]
    }
}

/// Smallest `k` in `0..=n` with `k / n >= level`; `n + 1` if none.
pub fn rank_for_level(level: f64, n: usize) -> usize {
    if level <= 0.0 {
        return 0;
    }
    let nf = n as f64;
    let (mut lo, mut hi) = (1usize, n + 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if (mid as f64) / nf < level {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Functions that are nondecreasing on the real line and can be inverted in
/// the generalized sense `inf { x : f(x) >= y }`.
pub trait Nondecreasing {
    fn eval(&self, x: f64) -> f64;

    /// `inf { x : f(x) >= y }`. Returns `-inf` when every `x` qualifies.
    fn generalized_inverse(&self, y: f64) -> Result<f64>;
}

/// Right-continuous step function: `left` below the first breakpoint,
/// `levels[k]` on `[breakpoints[k], breakpoints[k + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
    left: f64,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>, left: f64) -> Result<Self> {
        if breakpoints.len() != levels.len() {
            return Err(Error::invalid("breakpoints and levels differ in length"));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("breakpoints must be strictly ascending"));
        }
        Ok(StepFunction {
            breakpoints,
            levels,
            left,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn left_limit(&self) -> f64 {
        self.left
    }

    pub fn sup(&self) -> f64 {
        self.levels.iter().copied().fold(self.left, f64::max)
    }
}

impl Nondecreasing for StepFunction {
    fn eval(&self, x: f64) -> f64 {
        match self.breakpoints.partition_point(|&b| b <= x) {
            0 => self.left,
            k => self.levels[k - 1],
        }
    }

    fn generalized_inverse(&self, y: f64) -> Result<f64> {
        if y <= self.left {
            return Ok(f64::NEG_INFINITY);
        }
        let k = self.levels.partition_point(|&l| l < y);
        self.breakpoints
            .get(k)
            .copied()
            .ok_or(Error::LevelUnattainable {
                level: y,
                sup: self.sup(),
            })
    }
}

/// Continuous function, linear between knots and constant beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::invalid(
                "knots and values must be nonempty and of equal length",
            ));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("knots must be strictly ascending"));
        }
        Ok(PiecewiseLinear { knots, values })
    }

    pub fn identity_on_unit_interval() -> Self {
        PiecewiseLinear {
            knots: vec![0.0, 1.0],
            values: vec![0.0, 1.0],
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Nondecreasing for PiecewiseLinear {
    fn eval(&self, x: f64) -> f64 {
        let last = self.knots.len() - 1;
        if x <= self.knots[0] {
            return self.values[0];
        }
        if x >= self.knots[last] {
            return self.values[last];
        }
        let k = self.knots.partition_point(|&t| t <= x);
        let (x0, x1) = (self.knots[k - 1], self.knots[k]);
        let (y0, y1) = (self.values[k - 1], self.values[k]);
        y0 + (x - x0) / (x1 - x0) * (y1 - y0)
    }

    fn generalized_inverse(&self, y: f64) -> Result<f64> {
        if y <= self.values[0] {
            return Ok(f64::NEG_INFINITY);
        }
        let k = self.values.partition_point(|&v| v < y);
        if k == self.values.len() {
            return Err(Error::LevelUnattainable {
                level: y,
                sup: self.values[k - 1],
            });
        }
        let (x0, x1) = (self.knots[k - 1], self.knots[k]);
        let (y0, y1) = (self.values[k - 1], self.values[k]);
        Ok(x0 + (y - y0) / (y1 - y0) * (x1 - x0))
    }
}

/// Empirical distribution function `x -> #{X_i <= x} / n`.
pub fn ecdf(sample: &[f64]) -> Result<StepFunction> {
    let sorted = SortedSample::new(sample.to_vec())?;
    Ok(ecdf_sorted(&sorted))
}

pub fn ecdf_sorted(sample: &SortedSample) -> StepFunction {
    let n = sample.len() as f64;
    let mut breakpoints = Vec::new();
    let mut levels = Vec::new();
    for (i, &v) in sample.values().iter().enumerate() {
        let level = (i + 1) as f64 / n;
        if breakpoints.last() == Some(&v) {
            *levels.last_mut().unwrap() = level;
        } else {
            breakpoints.push(v);
            levels.push(level);
        }
    }
    StepFunction {
        breakpoints,
        levels,
        left: 0.0,
    }
}

/// `Q_n(u) = X_(i)` for `u` in `((i - 1) / n, i / n]`.
pub fn empirical_quantile(sample: &SortedSample, u: f64) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::invalid(format!("quantile level {u} outside (0, 1]")));
    }
    Ok(sample.order_statistic(rank_for_level(u, sample.len())))
}

fn distinct_sorted(sample: &[f64]) -> Result<SortedSample> {
    let sorted = SortedSample::new(sample.to_vec())?;
    if let Some(w) = sorted.values().windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Ties { value: w[0] });
    }
    if sorted.values()[0] <= 0.0 {
        return Err(Error::invalid(
            "interpolation is anchored at 0; observations must be positive",
        ));
    }
    Ok(sorted)
}

/// Continuous interpolation of the ECDF of a sample on `(0, 1)`, anchored
/// at `U_(0) = 0`: linear from `((i - 1) / n)` at `U_(i-1)` to `i / n` at
/// `U_(i)`, and 1 from `U_(n)` on.
pub fn interpolated_ecdf(sample: &[f64]) -> Result<PiecewiseLinear> {
    let sorted = distinct_sorted(sample)?;
    let n = sorted.len() as f64;
    let mut knots = Vec::with_capacity(sorted.len() + 1);
    let mut values = Vec::with_capacity(sorted.len() + 1);
    knots.push(0.0);
    values.push(0.0);
    for (i, &v) in sorted.values().iter().enumerate() {
        knots.push(v);
        values.push((i + 1) as f64 / n);
    }
    PiecewiseLinear::new(knots, values)
}

/// Interpolation of the weighted ECDF `(1/n) sum w_i 1{U_i <= u}`: on the
/// cell `[U_(i-1), U_(i))` it rises linearly by `w_(i) / n`.
pub fn interpolated_weighted_ecdf(sample: &[f64], weights: &[f64]) -> Result<PiecewiseLinear> {
    if sample.len() != weights.len() {
        return Err(Error::invalid("sample and weights differ in length"));
    }
    distinct_sorted(sample)?;
    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.sort_by(|&a, &b| sample[a].total_cmp(&sample[b]));
    let n = sample.len() as f64;
    let mut knots = vec![0.0];
    let mut values = vec![0.0];
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        knots.push(sample[i]);
        values.push(cum / n);
    }
    PiecewiseLinear::new(knots, values)
}

/// Adds seeded noise of size `1e-9 * max|x|` until all values are distinct.
pub fn jitter_ties(sample: &[f64], seed: u64) -> Vec<f64> {
    let scale = sample.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let magnitude = 1e-9 * if scale > 0.0 { scale } else { 1.0 };
    let mut out = sample.to_vec();
    for attempt in 0..16u64 {
        let mut sorted = out.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).all(|w| w[0] != w[1]) {
            break;
        }
        let mut rng = stream_rng(seed, attempt);
        out = sample
            .iter()
            .map(|&v| v + magnitude * rng.random_range(-1.0..1.0))
            .collect();
    }
    out
}
