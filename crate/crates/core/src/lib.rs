//! L-statistics with data-dependent weights, their joint bootstrap
//! distribution, and a test of whether trimming outliers changes an
//! estimate by more than a given slack.
//!
//! An L-statistic here is `(1/n) sum_i m(X_i) w_i`, where the weights may
//! depend on the whole sample (quantile trimming, residual trimming,
//! winsorizing). Equivalently it is the Stieltjes integral of `m` applied to
//! the empirical quantile function against a random weight function `K_n`.
//!
//! ```
//! use robust_lstat::data::PanelDataset;
//! use robust_lstat::lstat::{lstat_eval, LStatSpec, Transform};
//! use robust_lstat::weights::WeightScheme;
//!
//! let x: Vec<f64> = (1..=100).map(f64::from).collect();
//! let data = PanelDataset::from_columns(vec![("x".into(), x)]).unwrap();
//! let trimmed = LStatSpec::new(
//!     "x",
//!     Transform::Identity,
//!     WeightScheme::QuantileTrim { columns: vec!["x".into()], lower_q: 0.05, upper_q: 0.95 },
//! );
//! // rows 5..=95 are kept, their sum divided by n = 100
//! assert_eq!(lstat_eval(&trimmed, &data).unwrap(), 45.5);
//! ```
//!
//! Modules, bottom up: [`empirical`] (distribution and quantile functions),
//! [`weights`] (weight schemes and `K_n`), [`lstat`] (statistics and the
//! plug-in covariance), [`regress`] (weighted OLS and 2SLS), [`bootstrap`],
//! [`robustness`] (the test), [`mc_oracle`] (simulation) and [`cli_io`]
//! (configuration and files).

pub mod bootstrap;
pub mod cli_io;
pub mod data;
pub mod empirical;
pub mod error;
pub mod lstat;
pub mod mc_oracle;
pub mod numeric;
pub mod regress;
pub mod robustness;
pub mod weights;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/lstatistics.md")]
    mod lstatistics {}
    #[doc = include_str!("../../../book/src/weights.md")]
    mod weights {}
    #[doc = include_str!("../../../book/src/regression.md")]
    mod regression {}
    #[doc = include_str!("../../../book/src/bootstrap.md")]
    mod bootstrap {}
    #[doc = include_str!("../../../book/src/robustness.md")]
    mod robustness {}
    #[doc = include_str!("../../../book/src/monte_carlo.md")]
    mod monte_carlo {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
