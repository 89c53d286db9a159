//! Multinomial and multiplier bootstrap of a vector of statistics.
//!
//! Every draw gets its own random stream derived from the master seed and
//! the draw index, and draws are collected by index, so the result does not
//! depend on the number of worker threads. The estimator is called on the
//! resampled dataset and recomputes all data-dependent quantities there
//! (quantile thresholds, residual scales, coefficients).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::lstat::{lstat_eval, LStatSpec};
use crate::numeric::{sample_covariance, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleUnit {
    Row,
    #[default]
    Cluster,
}

/// Mean-zero, variance-one multiplier laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierLaw {
    StandardNormal,
    /// `N - 1` with `N ~ Poisson(1)`.
    #[default]
    CenteredPoisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Multinomial,
    /// Keeps the rows and gives unit `i` the mass `1 + xi_i`.
    Multiplier {
        #[serde(default)]
        distribution: MultiplierLaw,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub iterations: usize,
    pub seed: u64,
    #[serde(default)]
    pub unit: ResampleUnit,
    #[serde(default)]
    pub engine: Engine,
}

impl BootstrapPlan {
    pub fn new(iterations: usize, seed: u64) -> Self {
        BootstrapPlan {
            iterations,
            seed,
            unit: ResampleUnit::Cluster,
            engine: Engine::Multinomial,
        }
    }

    pub fn with_unit(mut self, unit: ResampleUnit) -> Self {
        self.unit = unit;
        self
    }

    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("bootstrap needs at least one iteration"));
        }
        Ok(())
    }
}

/// How often each of `n` units is drawn when drawing `n` times with
/// replacement.
pub fn multinomial_counts<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut counts = vec![0; n];
    for pick in multinomial_picks(n, rng) {
        counts[pick] += 1;
    }
    counts
}

fn multinomial_picks<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn multiplier_weights<R: Rng + ?Sized>(n: usize, law: MultiplierLaw, rng: &mut R) -> Vec<f64> {
    match law {
        MultiplierLaw::StandardNormal => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        MultiplierLaw::CenteredPoisson => {
            let poisson = Poisson::new(1.0).expect("rate 1 is valid");
            (0..n).map(|_| poisson.sample(rng) - 1.0).collect()
        }
    }
}

/// The dataset seen by draw `draw` of `plan`.
pub fn resample(data: &PanelDataset, plan: &BootstrapPlan, draw: u64) -> PanelDataset {
    let mut rng = stream_rng(plan.seed, draw);
    match (plan.engine, plan.unit) {
        (Engine::Multinomial, ResampleUnit::Cluster) => {
            let picks = multinomial_picks(data.n_clusters(), &mut rng);
            data.resample_clusters(&picks)
        }
        (Engine::Multinomial, ResampleUnit::Row) => {
            let picks = multinomial_picks(data.n_rows(), &mut rng);
            data.resample_rows(&picks)
        }
        (Engine::Multiplier { distribution }, unit) => {
            let base = match unit {
                ResampleUnit::Cluster => data.clone(),
                ResampleUnit::Row => data.ungrouped(),
            };
            let xi = multiplier_weights(base.n_clusters(), distribution, &mut rng);
            let mass = base
                .cluster_of_row()
                .iter()
                .zip(base.mass())
                .map(|(&c, m)| m * (1.0 + xi[c]))
                .collect();
            base.with_mass(mass).expect("one mass per row")
        }
    }
}

/// Row-resampling draw expressed as multinomial counts on the original
/// rows instead of materialized copies. Gives the same statistic values as
/// [`resample`] with [`ResampleUnit::Row`].
pub fn resample_as_counts(data: &PanelDataset, seed: u64, draw: u64) -> PanelDataset {
    let mut rng = stream_rng(seed, draw);
    let counts = multinomial_counts(data.n_rows(), &mut rng);
    let base = data.ungrouped();
    let mass = counts
        .iter()
        .zip(base.mass())
        .map(|(&c, m)| c as f64 * m)
        .collect();
    base.with_mass(mass).expect("one mass per row")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// One entry per draw, `None` when the estimator failed on that draw.
    pub draws: Vec<Option<Vec<f64>>>,
    pub point: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub seed: u64,
    pub iterations: usize,
    pub failed: usize,
}

impl BootstrapResult {
    pub fn d(&self) -> usize {
        self.point.len()
    }

    pub fn successful(&self) -> Vec<&[f64]> {
        self.draws.iter().flatten().map(Vec::as_slice).collect()
    }

    /// Covariance of selected coordinates, in the given order.
    pub fn sub_cov(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.cov[(idx[a], idx[b])])
    }
}

/// Runs `estimator` on the original data and on `plan.iterations`
/// resampled datasets.
pub fn bootstrap_pipeline<F>(
    data: &PanelDataset,
    plan: &BootstrapPlan,
    estimator: F,
) -> Result<BootstrapResult>
where
    F: Fn(&PanelDataset) -> Result<Vec<f64>> + Sync,
{
    plan.validate()?;
    let point = estimator(data)?;
    let d = point.len();
    let draws: Vec<Option<Vec<f64>>> = (0..plan.iterations as u64)
        .into_par_iter()
        .map(|b| {
            let sample = resample(data, plan, b);
            estimator(&sample)
                .ok()
                .filter(|v| v.len() == d && v.iter().all(|x| x.is_finite()))
        })
        .collect();
    let failed = draws.iter().filter(|d| d.is_none()).count();
    if failed * 100 > plan.iterations {
        return Err(Error::TooManyFailures {
            failed,
            total: plan.iterations,
        });
    }
    let mut result = BootstrapResult {
        draws,
        point,
        cov: DMatrix::zeros(d, d),
        seed: plan.seed,
        iterations: plan.iterations,
        failed,
    };
    if plan.iterations - failed >= 2 {
        result.cov = bootstrap_cov(&result)?;
    }
    Ok(result)
}

/// Estimator evaluating several L-statistics on the same dataset.
pub fn lstat_estimator(
    specs: &[LStatSpec],
) -> impl Fn(&PanelDataset) -> Result<Vec<f64>> + Sync + '_ {
    move |data| specs.iter().map(|s| lstat_eval(s, data)).collect()
}

/// Unbiased covariance over the successful draws.
pub fn bootstrap_cov(result: &BootstrapResult) -> Result<DMatrix<f64>> {
    let rows = result.successful();
    if rows.len() < 2 {
        return Err(Error::invalid(format!(
            "covariance needs at least 2 successful draws, have {}",
            rows.len()
        )));
    }
    Ok(sample_covariance(&rows, result.d()))
}
