//! Configuration, CSV ingestion, analysis runs and output files.
//!
//! Output files are written atomically. `results.json` keeps a fixed key
//! order and prints floats in shortest round-trip form, so identical runs
//! produce identical bytes whatever the thread count.

mod analysis;
mod config;
mod load;
mod output;
mod plot;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use analysis::{
    bootstrap_comparison, comparison_estimator, estimate, format_number, regenerate, render_table,
    run_analysis, tests_from_draws, AnalyticDiagnostic, CoefficientRow, ComparisonReport,
    CovarianceBlock, EstimateReport, JointTest, ReportBundle, DERIVED_NAMES, TABLE_HEADER,
};
pub use config::{AnalysisConfig, BootstrapConfig, Comparison, McConfig};
pub use load::{load_csv, load_reader, Loaded};
pub use output::{
    draws_csv, parse_draws_csv, read_bundle, results_json, write_atomic, write_bundle, REPORT_FILE,
    RESULTS_FILE,
};
pub use plot::{emit_plot_grid, kde_grid, PlotGrid, PlotMeta, GRID_SIZE, MIN_DRAWS};

use crate::bootstrap::lstat_estimator;
use crate::error::{Error, Result};
use crate::mc_oracle::{mc_covariance, size_study, CoverageReport, DgpSpec};

/// Loads the input named by the config.
pub fn load_input(config: &AnalysisConfig) -> Result<Loaded> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("config has no `input` file".into()))?;
    load_csv(
        input,
        config.cluster.as_deref(),
        Some(&config.required_columns()),
    )
}

/// Writes one density grid per reported coefficient, pairing baseline
/// (x) with adjusted (y) draws.
pub fn plot_bundle(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (c, draws) in bundle.comparisons.iter().zip(&bundle.draws) {
        let ok: Vec<&Vec<f64>> = draws.iter().flatten().collect();
        let k = c.point.len() / 2;
        for j in 0..k {
            let xs: Vec<f64> = ok.iter().map(|v| v[j]).collect();
            let ys: Vec<f64> = ok.iter().map(|v| v[k + j]).collect();
            let stem = format!(
                "plot_{}_{}",
                c.name,
                sanitize(&c.statistics[j]["baseline:".len()..])
            );
            let labels = [c.statistics[j].as_str(), c.statistics[k + j].as_str()];
            let (a, b) =
                emit_plot_grid(dir, &stem, labels, &xs, &ys, [c.point[j], c.point[k + j]])?;
            written.push(a);
            written.push(b);
        }
    }
    Ok(written)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCovReport {
    pub statistics: Vec<String>,
    pub mean: Vec<f64>,
    /// `n` times the covariance across replications.
    pub scaled_cov: Vec<Vec<f64>>,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub dgp: DgpSpec,
    pub reps: usize,
    pub seed: u64,
    pub covariance: Option<McCovReport>,
    pub size: Option<CoverageReport>,
}

/// Runs the `[mc]` study: brute-force covariance of the listed statistics
/// and, if a comparison is given, the rejection rate of its test for the
/// first reported statistic. Replication `r` bootstraps with seed
/// `bootstrap.seed + r`.
pub fn run_mc(config: &AnalysisConfig) -> Result<McReport> {
    let mc = config
        .mc
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [mc] section".into()))?;
    let covariance = if mc.statistics.is_empty() {
        None
    } else {
        let est = lstat_estimator(&mc.statistics);
        let res =
            mc_covariance(&mc.dgp, est, mc.reps, mc.seed).map_err(|e| e.in_module("mc_oracle"))?;
        Some(McCovReport {
            statistics: mc
                .statistics
                .iter()
                .enumerate()
                .map(|(i, s)| format!("stat_{}:{}", i + 1, s.column))
                .collect(),
            mean: res.mean,
            scaled_cov: (0..res.cov.nrows())
                .map(|i| res.cov.row(i).iter().copied().collect())
                .collect(),
            failed: res.failed,
        })
    };
    let size = match &mc.size {
        None => None,
        Some(c) => {
            let test = |data: &crate::data::PanelDataset, r: u64| {
                let mut boot = config.bootstrap.clone();
                boot.seed = boot.seed.wrapping_add(r);
                let (names, res) = bootstrap_comparison(c, data, &boot)?;
                let (rows, _) = tests_from_draws(&names, &res.point, &res.cov, 0, &config.test)?;
                Ok(rows[0].test.clone())
            };
            Some(
                size_study(&mc.dgp, config.test.alpha, mc.reps, mc.seed, test)
                    .map_err(|e| e.in_module("mc_oracle"))?,
            )
        }
    };
    Ok(McReport {
        dgp: mc.dgp.clone(),
        reps: mc.reps,
        seed: mc.seed,
        covariance,
        size,
    })
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::invalid("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}
