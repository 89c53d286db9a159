//! Simulation harness: data-generating processes, brute-force Monte Carlo
//! covariance of statistic vectors, and size studies of the robustness
//! test.
//!
//! Replication `r` of a study draws its dataset from stream `r` of the
//! master seed, so results are reproducible and independent of threading.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, StudentT, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::numeric::{sample_covariance, stream_rng};
use crate::robustness::TestReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Law {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    LogNormal { mu: f64, sigma: f64 },
    StudentT { df: f64 },
    PointMass { value: f64 },
}

impl Law {
    pub fn standard_normal() -> Self {
        Law::Normal { mean: 0.0, sd: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Law::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            Law::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            Law::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
            Law::StudentT { df } => {
                if !(df > 2.0) {
                    return Err(Error::invalid(format!(
                        "student-t with df = {df} lacks a finite (2+c)-th moment; trimmed columns need df > 2"
                    )));
                }
                df.is_finite()
            }
            Law::PointMass { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid law parameters {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Law::Normal { mean, .. } => mean,
            Law::Uniform { low, high } => 0.5 * (low + high),
            Law::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Law::StudentT { .. } => 0.0,
            Law::PointMass { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Law::Normal { sd, .. } => sd * sd,
            Law::Uniform { low, high } => (high - low).powi(2) / 12.0,
            Law::LogNormal { mu, sigma } => {
                let s2 = sigma * sigma;
                s2.exp_m1() * (2.0 * mu + s2).exp()
            }
            Law::StudentT { df } => df / (df - 2.0),
            Law::PointMass { .. } => 0.0,
        }
    }

    fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match *self {
            Law::Normal { mean, sd } => {
                Sampler::Normal(Normal::new(mean, sd).map_err(|e| Error::invalid(e.to_string()))?)
            }
            Law::Uniform { low, high } => Sampler::Uniform(
                Uniform::new(low, high).map_err(|e| Error::invalid(e.to_string()))?,
            ),
            Law::LogNormal { mu, sigma } => Sampler::LogNormal(
                LogNormal::new(mu, sigma).map_err(|e| Error::invalid(e.to_string()))?,
            ),
            Law::StudentT { df } => {
                Sampler::StudentT(StudentT::new(df).map_err(|e| Error::invalid(e.to_string()))?)
            }
            Law::PointMass { value } => Sampler::Point(value),
        })
    }
}

enum Sampler {
    Normal(Normal<f64>),
    Uniform(Uniform<f64>),
    LogNormal(LogNormal<f64>),
    StudentT(StudentT<f64>),
    Point(f64),
}

impl Sampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Uniform(d) => d.sample(rng),
            Sampler::LogNormal(d) => d.sample(rng),
            Sampler::StudentT(d) => d.sample(rng),
            Sampler::Point(v) => *v,
        }
    }

    fn column<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnLaw {
    pub name: String,
    #[serde(flatten)]
    pub law: Law,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpKind {
    /// Independent columns, one row per observation.
    Univariate { columns: Vec<ColumnLaw> },
    /// Columns `y`, `x`, `z` with `y = a + b x + u` and
    /// `x = strength z + v + endogeneity u`, `z ~ N(0, 1)`.
    LinearRegression {
        intercept: f64,
        slope: f64,
        regressor: Law,
        error: Law,
        #[serde(default)]
        instrument_strength: f64,
        #[serde(default)]
        endogeneity: f64,
    },
    /// `n` clusters of sizes uniform on `t_min..=t_max`; column
    /// `y = a_i + e_it` with cluster effects `a_i ~ N(0, effect_sd^2)`, and
    /// cluster column `id`.
    Panel {
        t_min: usize,
        t_max: usize,
        effect_sd: f64,
        error: Law,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    /// Rows, or clusters for a panel.
    pub n: usize,
}

impl DgpSpec {
    pub fn univariate(name: &str, law: Law, n: usize) -> Self {
        DgpSpec {
            kind: DgpKind::Univariate {
                columns: vec![ColumnLaw {
                    name: name.into(),
                    law,
                }],
            },
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("DGP needs n >= 1"));
        }
        match &self.kind {
            DgpKind::Univariate { columns } => {
                if columns.is_empty() {
                    return Err(Error::invalid("univariate DGP needs at least one column"));
                }
                columns.iter().try_for_each(|c| c.law.validate())
            }
            DgpKind::LinearRegression {
                regressor, error, ..
            } => {
                regressor.validate()?;
                error.validate()
            }
            DgpKind::Panel {
                t_min,
                t_max,
                effect_sd,
                error,
            } => {
                if *t_min == 0 || t_min > t_max {
                    return Err(Error::invalid("panel needs 1 <= t_min <= t_max"));
                }
                if !(*effect_sd >= 0.0) {
                    return Err(Error::invalid("effect_sd must be nonnegative"));
                }
                error.validate()
            }
        }
    }
}

/// Dataset number `stream` of the DGP under master `seed`.
pub fn simulate_stream(dgp: &DgpSpec, seed: u64, stream: u64) -> Result<PanelDataset> {
    dgp.validate()?;
    let mut rng = stream_rng(seed, stream);
    let n = dgp.n;
    match &dgp.kind {
        DgpKind::Univariate { columns } => {
            let cols = columns
                .iter()
                .map(|c| Ok((c.name.clone(), c.law.sampler()?.column(n, &mut rng))))
                .collect::<Result<Vec<_>>>()?;
            PanelDataset::from_columns(cols)
        }
        DgpKind::LinearRegression {
            intercept,
            slope,
            regressor,
            error,
            instrument_strength,
            endogeneity,
        } => {
            let z = Law::standard_normal().sampler()?.column(n, &mut rng);
            let v = regressor.sampler()?.column(n, &mut rng);
            let u = error.sampler()?.column(n, &mut rng);
            let x: Vec<f64> = (0..n)
                .map(|i| instrument_strength * z[i] + v[i] + endogeneity * u[i])
                .collect();
            let y = (0..n).map(|i| intercept + slope * x[i] + u[i]).collect();
            PanelDataset::from_columns(vec![("y".into(), y), ("x".into(), x), ("z".into(), z)])
        }
        DgpKind::Panel {
            t_min,
            t_max,
            effect_sd,
            error,
        } => {
            let err = error.sampler()?;
            let effect = Law::Normal {
                mean: 0.0,
                sd: *effect_sd,
            }
            .sampler()?;
            let mut y = Vec::new();
            let mut labels = Vec::new();
            for i in 0..n {
                let t = rng.random_range(*t_min..=*t_max);
                let a = effect.draw(&mut rng);
                for _ in 0..t {
                    y.push(a + err.draw(&mut rng));
                    labels.push(format!("c{i}"));
                }
            }
            PanelDataset::with_clusters(vec![("y".into(), y)], labels, Some("id".into()))
        }
    }
}

pub fn simulate(dgp: &DgpSpec, seed: u64) -> Result<PanelDataset> {
    simulate_stream(dgp, seed, 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McCovariance {
    /// `n` times the covariance of the statistic across replications.
    pub cov: DMatrix<f64>,
    pub mean: Vec<f64>,
    pub reps: usize,
    pub failed: usize,
    pub n: usize,
}

impl McCovariance {
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.cov[(i, j)] / (self.cov[(i, i)] * self.cov[(j, j)]).sqrt()
    }
}

fn check_failures(failed: usize, reps: usize) -> Result<()> {
    if failed * 100 > reps {
        return Err(Error::TooManyFailures {
            failed,
            total: reps,
        });
    }
    Ok(())
}

/// Covariance of `sqrt(n)` times the statistic vector over `reps`
/// independent datasets, around its Monte Carlo mean.
pub fn mc_covariance<F>(dgp: &DgpSpec, estimator: F, reps: usize, seed: u64) -> Result<McCovariance>
where
    F: Fn(&PanelDataset) -> Result<Vec<f64>> + Sync,
{
    if reps < 100 {
        return Err(Error::invalid(format!(
            "mc_covariance needs reps >= 100, got {reps}"
        )));
    }
    dgp.validate()?;
    let out: Vec<Option<Vec<f64>>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            simulate_stream(dgp, seed, r)
                .and_then(|d| estimator(&d))
                .ok()
                .filter(|v| v.iter().all(|x| x.is_finite()))
        })
        .collect();
    let ok: Vec<&[f64]> = out.iter().flatten().map(Vec::as_slice).collect();
    let failed = reps - ok.len();
    check_failures(failed, reps)?;
    let d = ok[0].len();
    if ok.iter().any(|v| v.len() != d) {
        return Err(Error::invalid(
            "estimator returned vectors of different lengths",
        ));
    }
    let mean = (0..d)
        .map(|j| {
            crate::numeric::pairwise_sum(&ok.iter().map(|v| v[j]).collect::<Vec<_>>())
                / ok.len() as f64
        })
        .collect();
    let cov = sample_covariance(&ok, d) * dgp.n as f64;
    Ok(McCovariance {
        cov,
        mean,
        reps,
        failed,
        n: dgp.n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub alpha: f64,
    pub rate: f64,
    pub reps: usize,
    pub rejections: usize,
    pub failed: usize,
    /// Binomial standard error `sqrt(rate (1 - rate) / reps)`.
    pub se: f64,
}

/// Share of replications in which `test` rejects at level `alpha`, that is
/// where its formal p-value is below `alpha`. `test` receives the dataset
/// and the replication index (for seeding inner resampling).
pub fn size_study<F>(
    dgp: &DgpSpec,
    alpha: f64,
    reps: usize,
    seed: u64,
    test: F,
) -> Result<CoverageReport>
where
    F: Fn(&PanelDataset, u64) -> Result<TestReport> + Sync,
{
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha = {alpha} must lie in [0, 1]"
        )));
    }
    if reps == 0 {
        return Err(Error::invalid("size study needs reps >= 1"));
    }
    dgp.validate()?;
    let out: Vec<Option<bool>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            simulate_stream(dgp, seed, r)
                .and_then(|d| test(&d, r))
                .ok()
                .map(|t| t.p_value_formal < alpha)
        })
        .collect();
    let done = out.iter().flatten().count();
    let failed = reps - done;
    check_failures(failed, reps)?;
    let rejections = out.iter().flatten().filter(|&&r| r).count();
    let rate = rejections as f64 / done as f64;
    Ok(CoverageReport {
        alpha,
        rate,
        reps: done,
        rejections,
        failed,
        se: (rate * (1.0 - rate) / done as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::lstat_estimator;
    use crate::lstat::LStatSpec;
    use crate::regress::{ols_weighted, ModelSpec};
    use crate::robustness::{scalar_test, TestSpec};
    use approx::assert_relative_eq;

    #[test]
    fn uniform_mean_within_three_se() {
        let n = 100_000;
        let data = simulate(
            &DgpSpec::univariate(
                "x",
                Law::Uniform {
                    low: 0.0,
                    high: 1.0,
                },
                n,
            ),
            1,
        )
        .unwrap();
        let x = data.column("x").unwrap();
        let mean = x.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * (1.0 / 12.0 / n as f64).sqrt());
    }

    #[test]
    fn point_mass_is_constant() {
        let data = simulate(
            &DgpSpec::univariate("x", Law::PointMass { value: 2.5 }, 10),
            2,
        )
        .unwrap();
        assert!(data.column("x").unwrap().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn heavy_tails_are_rejected() {
        let err =
            simulate(&DgpSpec::univariate("x", Law::StudentT { df: 2.0 }, 10), 0).unwrap_err();
        assert!(err.to_string().contains("(2+c)"));
        assert!(simulate(&DgpSpec::univariate("x", Law::StudentT { df: 3.0 }, 10), 0).is_ok());
    }

    #[test]
    fn zero_slope_is_estimated_near_zero() {
        let n = 5000;
        let dgp = DgpSpec {
            kind: DgpKind::LinearRegression {
                intercept: 1.0,
                slope: 0.0,
                regressor: Law::standard_normal(),
                error: Law::standard_normal(),
                instrument_strength: 0.0,
                endogeneity: 0.0,
            },
            n,
        };
        let data = simulate(&dgp, 3).unwrap();
        let fit = ols_weighted(&ModelSpec::ols("y", &["x"]), &data, &vec![1.0; n]).unwrap();
        let b = fit.coefficient("x").unwrap();
        assert!(b.abs() < 3.0 / (n as f64).sqrt(), "slope {b}");
    }

    #[test]
    fn panel_clusters_have_declared_sizes() {
        let dgp = DgpSpec {
            kind: DgpKind::Panel {
                t_min: 2,
                t_max: 4,
                effect_sd: 1.0,
                error: Law::standard_normal(),
            },
            n: 30,
        };
        let data = simulate(&dgp, 4).unwrap();
        assert_eq!(data.n_clusters(), 30);
        assert!(data.cluster_sizes().iter().all(|&t| (2..=4).contains(&t)));
    }

    #[test]
    fn mean_covariance_matches_closed_forms() {
        for (law, var) in [
            (Law::standard_normal(), 1.0),
            (
                Law::Uniform {
                    low: 0.0,
                    high: 1.0,
                },
                1.0 / 12.0,
            ),
        ] {
            let dgp = DgpSpec::univariate("x", law, 1000);
            let specs = [LStatSpec::mean("x")];
            let mc = mc_covariance(&dgp, lstat_estimator(&specs), 5000, 5).unwrap();
            assert_relative_eq!(mc.cov[(0, 0)], var, max_relative = 0.05);
        }
    }

    #[test]
    fn independent_columns_are_uncorrelated() {
        let dgp = DgpSpec {
            kind: DgpKind::Univariate {
                columns: vec![
                    ColumnLaw {
                        name: "a".into(),
                        law: Law::standard_normal(),
                    },
                    ColumnLaw {
                        name: "b".into(),
                        law: Law::standard_normal(),
                    },
                ],
            },
            n: 200,
        };
        let specs = [LStatSpec::mean("a"), LStatSpec::mean("b")];
        let reps = 2000;
        let mc = mc_covariance(&dgp, lstat_estimator(&specs), reps, 6).unwrap();
        assert!(mc.correlation(0, 1).abs() < 3.0 / (reps as f64).sqrt());
    }

    #[test]
    fn too_few_reps_is_an_error() {
        let dgp = DgpSpec::univariate("x", Law::standard_normal(), 10);
        let specs = [LStatSpec::mean("x")];
        assert!(mc_covariance(&dgp, lstat_estimator(&specs), 99, 0).is_err());
    }

    #[test]
    fn degenerate_levels_give_zero_rate() {
        let dgp = DgpSpec::univariate("x", Law::standard_normal(), 50);
        let test = |d: &PanelDataset, _r: u64| {
            let x = d.column("x")?;
            let m = x.iter().sum::<f64>() / x.len() as f64;
            scalar_test(m, 0.0, 1.0 / 50.0, 0.0, 0.0, &TestSpec::default())
        };
        let zero = size_study(&dgp, 0.0, 200, 7, test).unwrap();
        assert_eq!(zero.rate, 0.0);
        let nominal = size_study(&dgp, 0.05, 2000, 7, test).unwrap();
        assert!((nominal.rate - 0.05).abs() < 3.0 * (0.05f64 * 0.95 / 2000.0).sqrt());
        let wide = |d: &PanelDataset, r: u64| {
            let x = d.column("x")?;
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let spec = TestSpec {
                h: 100.0,
                seed: r,
                ..TestSpec::default()
            };
            scalar_test(m, 0.0, 1.0 / 50.0, 0.0, 0.0, &spec)
        };
        assert_eq!(size_study(&dgp, 0.05, 200, 7, wide).unwrap().rate, 0.0);
    }
}
