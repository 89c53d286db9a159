//! `rlstat`: command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robust_lstat::cli_io::{
    self, bootstrap_comparison, draws_csv, estimate, read_bundle, regenerate, render_table,
    run_analysis, run_mc, write_atomic, write_bundle, AnalysisConfig, REPORT_FILE,
};
use robust_lstat::{Error, ErrorKind, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "rlstat",
    version,
    about = "Outlier-robustness tests for L-statistics and weighted regressions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Point estimates of every comparison.
    Estimate(Common),
    /// Joint bootstrap draws of every comparison.
    Bootstrap(Common),
    /// Bootstrap plus formal and heuristic tests; writes the full report.
    Test(Common),
    /// Monte Carlo study from the `[mc]` config section.
    Mc(Common),
    /// Recomputes the tests from stored draws and prints the table.
    Report(Common),
    /// Density grids of the bootstrap draws, one per coefficient.
    PlotData(Common),
}

#[derive(Args)]
struct Common {
    /// Analysis configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the bootstrap seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of bootstrap iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<AnalysisConfig> {
        let mut cfg = AnalysisConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.bootstrap.seed = seed;
        }
        if let Some(b) = self.iterations {
            if b == 0 {
                return Err(Error::Config("--iterations must be at least 1".into()));
            }
            cfg.bootstrap.iterations = b;
        }
        if let Some(out) = &self.output {
            cfg.output = out.clone();
        }
        Ok(cfg)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[derive(Serialize)]
struct BootstrapSummary {
    name: String,
    statistics: Vec<String>,
    point: Vec<f64>,
    cov: Vec<Vec<f64>>,
    iterations: usize,
    seed: u64,
    failed: usize,
    draws_file: String,
}

fn run(command: Command) -> Result<()> {
    let (common, kind) = match &command {
        Command::Estimate(c) => (c, "estimate"),
        Command::Bootstrap(c) => (c, "bootstrap"),
        Command::Test(c) => (c, "test"),
        Command::Mc(c) => (c, "mc"),
        Command::Report(c) => (c, "report"),
        Command::PlotData(c) => (c, "plot-data"),
    };
    let cfg = common.config()?;
    let out = cfg.output.clone();
    cli_io::with_threads(common.threads, || -> Result<()> {
        match kind {
            "estimate" => {
                let loaded = cli_io::load_input(&cfg)?;
                let est = estimate(&cfg, &loaded.data)?;
                for e in &est {
                    for (name, v) in e.statistics.iter().zip(&e.point) {
                        println!("{}  {name}  {}", e.name, cli_io::format_number(*v));
                    }
                }
                write_json(&out.join("estimates.json"), &est)
            }
            "bootstrap" => {
                let loaded = cli_io::load_input(&cfg)?;
                let mut summary = Vec::new();
                for c in &cfg.comparisons {
                    let (names, res) = bootstrap_comparison(c, &loaded.data, &cfg.bootstrap)?;
                    let file = format!("draws_{}.csv", c.name());
                    write_atomic(&out.join(&file), draws_csv(&res.draws, res.d()).as_bytes())?;
                    summary.push(BootstrapSummary {
                        name: c.name().into(),
                        statistics: ["baseline", "adjusted"]
                            .iter()
                            .flat_map(|s| names.iter().map(move |n| format!("{s}:{n}")))
                            .collect(),
                        point: res.point.clone(),
                        cov: (0..res.cov.nrows())
                            .map(|i| res.cov.row(i).iter().copied().collect())
                            .collect(),
                        iterations: res.iterations,
                        seed: res.seed,
                        failed: res.failed,
                        draws_file: file,
                    });
                }
                write_json(&out.join("bootstrap.json"), &summary)?;
                eprintln!("wrote {} draws files to {}", summary.len(), out.display());
                Ok(())
            }
            "test" => {
                let loaded = cli_io::load_input(&cfg)?;
                if loaded.rows_dropped > 0 {
                    eprintln!(
                        "warning: {} rows with missing cells excluded",
                        loaded.rows_dropped
                    );
                }
                let bundle = run_analysis(&cfg, &loaded.data, loaded.rows_dropped)?;
                write_bundle(&bundle, &out)?;
                print!("{}", render_table(&bundle));
                Ok(())
            }
            "mc" => {
                let report = run_mc(&cfg)?;
                if let Some(s) = &report.size {
                    println!(
                        "rejection rate {} at alpha {} over {} reps (se {})",
                        cli_io::format_number(s.rate),
                        s.alpha,
                        s.reps,
                        cli_io::format_number(s.se)
                    );
                }
                if let Some(c) = &report.covariance {
                    for (name, row) in c.statistics.iter().zip(&c.scaled_cov) {
                        let cells: Vec<String> =
                            row.iter().map(|v| cli_io::format_number(*v)).collect();
                        println!("{name}  {}", cells.join("  "));
                    }
                }
                write_json(&out.join("mc.json"), &report)
            }
            "report" => {
                let stored = read_bundle(&out)?;
                let bundle = regenerate(&stored, &cfg)?;
                if bundle.comparisons != stored.comparisons {
                    eprintln!("warning: recomputed tests differ from results.json");
                }
                let text = render_table(&bundle);
                write_atomic(&out.join(REPORT_FILE), text.as_bytes())?;
                print!("{text}");
                Ok(())
            }
            _ => {
                let bundle = read_bundle(&out)?;
                let files = cli_io::plot_bundle(&bundle, &out)?;
                eprintln!("wrote {} plot files to {}", files.len(), out.display());
                Ok(())
            }
        }
    })?
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
