use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{AnalysisConfig, BootstrapConfig, Comparison};
use crate::bootstrap::{bootstrap_pipeline, BootstrapResult};
use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::lstat::{analytic_cov, lstat_eval};
use crate::numeric::sample_covariance;
use crate::regress::{derived_params, fit_weighted};
use crate::robustness::{robustness_test, scalar_test, NormChoice, TestReport, TestSpec};

type Estimator<'a> = Box<dyn Fn(&PanelDataset) -> Result<Vec<f64>> + Sync + 'a>;

pub const DERIVED_NAMES: [&str; 3] = ["long_run", "after_25", "persistence"];

/// Names of the statistics of one estimator, and the estimator of the
/// stacked vector `[baseline..., adjusted...]`.
pub fn comparison_estimator(c: &Comparison) -> (Vec<String>, Estimator<'_>) {
    match c {
        Comparison::Regression {
            model,
            coefficients,
            derived,
            baseline,
            adjusted,
            ..
        } => {
            let mut names = coefficients.clone();
            if derived.is_some() {
                names.extend(DERIVED_NAMES.iter().map(|s| s.to_string()));
            }
            let est = move |data: &PanelDataset| {
                let mut out = Vec::new();
                for scheme in [baseline, adjusted] {
                    let w = scheme.compute(data)?;
                    let fit = fit_weighted(model, data, &w)?;
                    for name in coefficients {
                        out.push(fit.coefficient(name)?);
                    }
                    if let Some(lags) = derived {
                        let mut beta = [0.0; 5];
                        for (b, name) in beta.iter_mut().zip(lags) {
                            *b = fit.coefficient(name)?;
                        }
                        let p = derived_params(beta);
                        out.extend([p.long_run, p.after_25, p.persistence]);
                    }
                }
                Ok(out)
            };
            (names, Box::new(est))
        }
        Comparison::Lstat { column, .. } => {
            let specs = c.lstat_specs().expect("lstat comparison");
            let est = move |data: &PanelDataset| {
                Ok(vec![
                    lstat_eval(&specs[0], data)?,
                    lstat_eval(&specs[1], data)?,
                ])
            };
            (vec![column.clone()], Box::new(est))
        }
    }
}

/// Number of leading statistics entering the joint test.
fn joint_width(c: &Comparison, names: &[String]) -> usize {
    match c {
        Comparison::Regression { coefficients, .. } => coefficients.len(),
        Comparison::Lstat { .. } => names.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub coefficient: String,
    pub baseline: f64,
    pub adjusted: f64,
    pub se_baseline: f64,
    pub se_adjusted: f64,
    pub se_difference: f64,
    pub test: TestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTest {
    pub coefficients: Vec<String>,
    pub test: TestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBlock {
    pub source: String,
    /// Statistic names in matrix order.
    pub statistics: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticDiagnostic {
    /// Plug-in estimate of the asymptotic covariance of
    /// `sqrt(n) (baseline, adjusted)`, or `None` when unavailable.
    pub covariance: Option<CovarianceBlock>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub name: String,
    pub kind: String,
    pub statistics: Vec<String>,
    pub point: Vec<f64>,
    pub joint_width: usize,
    pub draws_file: String,
    pub failed_draws: usize,
    pub bootstrap_cov: CovarianceBlock,
    pub rows: Vec<CoefficientRow>,
    pub joint: Option<JointTest>,
    pub analytic: Option<AnalyticDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub n_rows: usize,
    pub n_clusters: usize,
    pub rows_dropped: usize,
    pub bootstrap: BootstrapConfig,
    pub test: TestSpec,
    pub comparisons: Vec<ComparisonReport>,
    /// The human-readable table, cell by cell.
    pub table: Vec<Vec<String>>,
    #[serde(skip)]
    pub draws: Vec<Vec<Option<Vec<f64>>>>,
}

fn stacked_names(names: &[String]) -> Vec<String> {
    ["baseline", "adjusted"]
        .iter()
        .flat_map(|side| names.iter().map(move |n| format!("{side}:{n}")))
        .collect()
}

/// Per-coefficient tests and the joint test for a stacked statistic
/// `[baseline (k), adjusted (k)]` with joint covariance `cov`, so that
/// `Sigma_diff = V11 + V22 - C12 - C21`.
pub fn tests_from_draws(
    names: &[String],
    point: &[f64],
    cov: &DMatrix<f64>,
    joint_width: usize,
    spec: &TestSpec,
) -> Result<(Vec<CoefficientRow>, Option<JointTest>)> {
    let k = names.len();
    if point.len() != 2 * k || cov.nrows() != 2 * k {
        return Err(Error::invalid("stacked statistic has the wrong length"));
    }
    let scalar_spec = match spec.norm {
        NormChoice::Matrix(_) => TestSpec {
            norm: NormChoice::Difference,
            ..spec.clone()
        },
        _ => spec.clone(),
    };
    let rows = (0..k)
        .map(|j| {
            let (v1, v2, c12) = (cov[(j, j)], cov[(k + j, k + j)], cov[(j, k + j)]);
            let test = scalar_test(point[j], point[k + j], v1, v2, c12, &scalar_spec)?;
            Ok(CoefficientRow {
                coefficient: names[j].clone(),
                baseline: point[j],
                adjusted: point[k + j],
                se_baseline: v1.max(0.0).sqrt(),
                se_adjusted: v2.max(0.0).sqrt(),
                se_difference: (v1 + v2 - 2.0 * c12).max(0.0).sqrt(),
                test,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let joint = if joint_width >= 2 {
        let q = joint_width;
        let sigma = DMatrix::from_fn(q, q, |a, b| {
            cov[(a, b)] + cov[(k + a, k + b)] - cov[(a, k + b)] - cov[(k + a, b)]
        });
        let v1 = DMatrix::from_fn(q, q, |a, b| cov[(a, b)]);
        let test = robustness_test(&point[..q], &point[k..k + q], &sigma, &v1, spec)?;
        Some(JointTest {
            coefficients: names[..q].to_vec(),
            test,
        })
    } else {
        None
    };
    Ok((rows, joint))
}

fn cov_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn analytic_diagnostic(c: &Comparison, data: &PanelDataset) -> Option<AnalyticDiagnostic> {
    let specs = c.lstat_specs()?;
    let names = stacked_names(&[c.name().to_string()]);
    Some(match analytic_cov(&specs, data) {
        Ok(a) => AnalyticDiagnostic {
            covariance: Some(CovarianceBlock {
                source: "analytic".into(),
                statistics: names.clone(),
                matrix: cov_rows(&a.matrix),
            }),
            flags: a
                .degenerate
                .iter()
                .map(|&i| {
                    format!(
                        "{}: all weights are one, the plug-in estimate is identically zero",
                        names[i]
                    )
                })
                .collect(),
        },
        Err(e) => AnalyticDiagnostic {
            covariance: None,
            flags: vec![format!("unavailable: {e}")],
        },
    })
}

/// Bootstrap draws of one comparison.
pub fn bootstrap_comparison(
    c: &Comparison,
    data: &PanelDataset,
    boot: &BootstrapConfig,
) -> Result<(Vec<String>, BootstrapResult)> {
    let (names, est) = comparison_estimator(c);
    let result =
        bootstrap_pipeline(data, &boot.plan(), est).map_err(|e| e.in_module("bootstrap"))?;
    Ok((names, result))
}

fn build_report(
    c: &Comparison,
    names: &[String],
    point: Vec<f64>,
    cov: &DMatrix<f64>,
    failed: usize,
    spec: &TestSpec,
) -> Result<ComparisonReport> {
    let width = joint_width(c, names);
    let (rows, joint) =
        tests_from_draws(names, &point, cov, width, spec).map_err(|e| e.in_module("robustness"))?;
    Ok(ComparisonReport {
        name: c.name().to_string(),
        kind: match c {
            Comparison::Regression { .. } => "regression".into(),
            Comparison::Lstat { .. } => "lstat".into(),
        },
        statistics: stacked_names(names),
        point,
        joint_width: width,
        draws_file: format!("draws_{}.csv", c.name()),
        failed_draws: failed,
        bootstrap_cov: CovarianceBlock {
            source: "bootstrap".into(),
            statistics: stacked_names(names),
            matrix: cov_rows(cov),
        },
        rows,
        joint,
        analytic: None,
    })
}

/// Fits both estimators of every comparison, bootstraps them jointly and
/// runs the robustness tests.
pub fn run_analysis(
    config: &AnalysisConfig,
    data: &PanelDataset,
    rows_dropped: usize,
) -> Result<ReportBundle> {
    if config.comparisons.is_empty() {
        return Err(Error::Config("no [[comparison]] entries".into()));
    }
    let mut comparisons = Vec::new();
    let mut draws = Vec::new();
    for c in &config.comparisons {
        let (names, res) = bootstrap_comparison(c, data, &config.bootstrap)?;
        let mut report = build_report(
            c,
            &names,
            res.point.clone(),
            &res.cov,
            res.failed,
            &config.test,
        )?;
        report.analytic = analytic_diagnostic(c, data);
        comparisons.push(report);
        draws.push(res.draws);
    }
    let mut bundle = ReportBundle {
        n_rows: data.n_rows(),
        n_clusters: data.n_clusters(),
        rows_dropped,
        bootstrap: config.bootstrap.clone(),
        test: config.test.clone(),
        comparisons,
        table: Vec::new(),
        draws,
    };
    bundle.table = table_cells(&bundle);
    Ok(bundle)
}

/// Recomputes covariances and tests from the stored draws and point
/// estimates.
pub fn regenerate(bundle: &ReportBundle, config: &AnalysisConfig) -> Result<ReportBundle> {
    let mut out = bundle.clone();
    for (k, report) in out.comparisons.iter_mut().enumerate() {
        let c = config
            .comparisons
            .iter()
            .find(|c| c.name() == report.name)
            .ok_or_else(|| Error::Config(format!("comparison `{}` not in config", report.name)))?;
        let draws = bundle
            .draws
            .get(k)
            .ok_or_else(|| Error::Data(format!("no draws for `{}`", report.name)))?;
        let ok: Vec<&[f64]> = draws.iter().flatten().map(Vec::as_slice).collect();
        let d = report.point.len();
        let cov = if ok.len() >= 2 {
            sample_covariance(&ok, d)
        } else {
            DMatrix::zeros(d, d)
        };
        let names: Vec<String> = report.statistics[..d / 2]
            .iter()
            .map(|s| s.trim_start_matches("baseline:").to_string())
            .collect();
        let analytic = report.analytic.take();
        *report = build_report(
            c,
            &names,
            report.point.clone(),
            &cov,
            draws.len() - ok.len(),
            &bundle.test,
        )?;
        report.analytic = analytic;
    }
    out.table = table_cells(&out);
    Ok(out)
}

/// Point estimates only, for the `estimate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub name: String,
    pub statistics: Vec<String>,
    pub point: Vec<f64>,
}

pub fn estimate(config: &AnalysisConfig, data: &PanelDataset) -> Result<Vec<EstimateReport>> {
    config
        .comparisons
        .iter()
        .map(|c| {
            let (names, est) = comparison_estimator(c);
            Ok(EstimateReport {
                name: c.name().to_string(),
                statistics: stacked_names(&names),
                point: est(data)?,
            })
        })
        .collect()
}

pub fn format_number(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-3 {
        format!("{x:.3e}")
    } else {
        format!("{x:.4}")
    }
}

pub const TABLE_HEADER: [&str; 9] = [
    "comparison",
    "coefficient",
    "baseline",
    "adjusted",
    "se_baseline",
    "se_adjusted",
    "p_formal",
    "p_heuristic",
    "reject",
];

fn table_cells(bundle: &ReportBundle) -> Vec<Vec<String>> {
    let mut cells = vec![TABLE_HEADER.iter().map(|s| s.to_string()).collect()];
    for c in &bundle.comparisons {
        for r in &c.rows {
            cells.push(vec![
                c.name.clone(),
                r.coefficient.clone(),
                format_number(r.baseline),
                format_number(r.adjusted),
                format_number(r.se_baseline),
                format_number(r.se_adjusted),
                format_number(r.test.p_value_formal),
                format_number(r.test.p_value_heuristic),
                r.test.reject.to_string(),
            ]);
        }
        if let Some(j) = &c.joint {
            cells.push(vec![
                c.name.clone(),
                format!("joint({})", j.coefficients.join("+")),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format_number(j.test.p_value_formal),
                format_number(j.test.p_value_heuristic),
                j.test.reject.to_string(),
            ]);
        }
    }
    cells
}

/// Aligned plain-text rendering of the table.
pub fn render_table(bundle: &ReportBundle) -> String {
    let cells = &bundle.table;
    let ncol = cells.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..ncol)
        .map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (cell, w))| {
                if j < 2 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    for c in &bundle.comparisons {
        for flag in c.analytic.iter().flat_map(|a| &a.flags) {
            out.push_str(&format!("note [{}]: {flag}\n", c.name));
        }
        if c.failed_draws > 0 {
            out.push_str(&format!(
                "note [{}]: {} failed bootstrap draws\n",
                c.name, c.failed_draws
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightScheme;

    fn config(baseline: WeightScheme, adjusted: WeightScheme) -> AnalysisConfig {
        let mut cfg =
            AnalysisConfig::from_toml("[bootstrap]\niterations = 200\nseed = 1\nunit = \"row\"")
                .unwrap();
        cfg.comparisons.push(
            Comparison::Lstat {
                name: "m".into(),
                column: "x".into(),
                transform: Default::default(),
                baseline,
                adjusted,
            }
            .resolved()
            .unwrap(),
        );
        cfg
    }

    fn data() -> PanelDataset {
        let x: Vec<f64> = (0..200)
            .map(|i| ((i * 37) % 101) as f64 / 10.0 + 0.1)
            .collect();
        PanelDataset::from_columns(vec![("x".into(), x)]).unwrap()
    }

    #[test]
    fn identical_schemes_give_unit_p_values() {
        let cfg = config(WeightScheme::AllOnes, WeightScheme::AllOnes);
        let b = run_analysis(&cfg, &data(), 0).unwrap();
        let row = &b.comparisons[0].rows[0];
        assert_eq!(row.baseline, row.adjusted);
        assert_eq!(row.test.p_value_formal, 1.0);
        assert_eq!(row.test.p_value_heuristic, 1.0);
        assert!(!b.comparisons[0].analytic.as_ref().unwrap().flags.is_empty());
    }

    #[test]
    fn regenerated_report_matches() {
        let trim = WeightScheme::QuantileTrim {
            columns: vec!["x".into()],
            lower_q: 0.05,
            upper_q: 0.95,
        };
        let cfg = config(WeightScheme::AllOnes, trim);
        let b = run_analysis(&cfg, &data(), 0).unwrap();
        let again = regenerate(&b, &cfg).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn table_numbers_are_in_the_rows() {
        let cfg = config(WeightScheme::AllOnes, WeightScheme::AllOnes);
        let b = run_analysis(&cfg, &data(), 0).unwrap();
        let text = render_table(&b);
        for row in &b.table {
            for cell in row {
                assert!(text.contains(cell.as_str()));
            }
        }
    }
}
