use std::path::Path;
use std::process::{Command, Output};

use robust_lstat::mc_oracle::{simulate, DgpKind, DgpSpec, Law};

fn rlstat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlstat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Panel regression data with a few planted outliers, 40 clusters.
fn write_panel(dir: &Path) {
    let dgp = DgpSpec {
        kind: DgpKind::LinearRegression {
            intercept: 1.0,
            slope: 0.5,
            regressor: Law::standard_normal(),
            error: Law::standard_normal(),
            instrument_strength: 0.0,
            endogeneity: 0.0,
        },
        n: 400,
    };
    let data = simulate(&dgp, 11).unwrap();
    let (y, x) = (data.column("y").unwrap(), data.column("x").unwrap());
    let mut csv = String::from("country,y,x\n");
    for i in 0..400 {
        let yi = if i % 97 == 0 { y[i] + 8.0 } else { y[i] };
        csv.push_str(&format!("c{},{yi},{}\n", i % 40, x[i]));
    }
    std::fs::write(dir.join("panel.csv"), csv).unwrap();
}

fn write_config(dir: &Path, extra: &str) -> String {
    let cfg = format!(
        r#"
input = "panel.csv"
cluster = "country"
output = "out"

[bootstrap]
iterations = 300
seed = 5

[test]
mc_draws = 2000
seed = 1

[[comparison]]
kind = "regression"
name = "ols"
model = {{ outcome = "y", regressors = ["x"] }}
baseline = {{ kind = "all_ones" }}
adjusted = {{ kind = "residual_trim", multiplier = 1.96 }}

[[comparison]]
kind = "lstat"
name = "mean_y"
column = "y"
baseline = {{ kind = "all_ones" }}
adjusted = {{ kind = "quantile_trim", columns = ["y"], lower_q = 0.02, upper_q = 0.98 }}
{extra}
"#
    );
    let path = dir.join("analysis.toml");
    std::fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&rlstat(&[])), 1);
    assert_eq!(code(&rlstat(&["frobnicate"])), 1);
    assert_eq!(code(&rlstat(&["test"])), 1);
    assert_eq!(
        code(&rlstat(&["test", "--config", "/nonexistent/x.toml"])),
        1
    );
    assert_eq!(code(&rlstat(&["--help"])), 0);
}

#[test]
fn bad_data_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    std::fs::write(dir.path().join("panel.csv"), "country,y,x\nc1,1,abc\n").unwrap();
    let out = rlstat(&["estimate", "--config", &cfg]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2, column `x`"));
    std::fs::write(dir.path().join("panel.csv"), "country,y,x\n").unwrap();
    let out = rlstat(&["estimate", "--config", &cfg]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no data rows"));
}

#[test]
fn singular_design_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("country,y,x,x2\n");
    for i in 0..50 {
        csv.push_str(&format!("c{},{},{},{}\n", i % 5, i, i % 7, 2 * (i % 7)));
    }
    std::fs::write(dir.path().join("panel.csv"), csv).unwrap();
    let cfg = r#"
input = "panel.csv"
[[comparison]]
kind = "regression"
name = "ols"
model = { outcome = "y", regressors = ["x", "x2"] }
baseline = { kind = "all_ones" }
adjusted = { kind = "all_ones" }
"#;
    let path = dir.path().join("a.toml");
    std::fs::write(&path, cfg).unwrap();
    let out = rlstat(&["estimate", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_pipeline_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_panel(dir.path());
    let cfg = write_config(dir.path(), "");
    let out_dir = dir.path().join("out");

    let run = rlstat(&["test", "--config", &cfg]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let table = String::from_utf8(run.stdout).unwrap();
    assert!(table.starts_with("comparison"));

    let draws = std::fs::read_to_string(out_dir.join("draws_ols.csv")).unwrap();
    assert!(draws.starts_with("draw_index,stat_1,stat_2\n"));
    assert_eq!(draws.lines().count(), 301);
    let results = std::fs::read_to_string(out_dir.join("results.json")).unwrap();
    for cell in table
        .split_whitespace()
        .filter(|c| c.parse::<f64>().is_ok())
    {
        assert!(results.contains(cell), "{cell} missing from results.json");
    }

    let report = rlstat(&["report", "--config", &cfg]);
    assert_eq!(code(&report), 0);
    assert_eq!(String::from_utf8(report.stdout).unwrap(), table);
    assert!(
        report.stderr.is_empty(),
        "{}",
        String::from_utf8_lossy(&report.stderr)
    );

    let plot = rlstat(&["plot-data", "--config", &cfg]);
    assert_eq!(code(&plot), 0, "{}", String::from_utf8_lossy(&plot.stderr));
    let grid = std::fs::read_to_string(out_dir.join("plot_ols_x.csv")).unwrap();
    assert!(grid.starts_with("x,y,density\n"));
    assert_eq!(grid.lines().count(), 1 + 101 * 101);
    assert!(out_dir.join("plot_mean_y_y.json").exists());
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    write_panel(dir.path());
    let cfg = write_config(dir.path(), "");
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("out{threads}"));
        let run = rlstat(&[
            "test",
            "--config",
            &cfg,
            "--threads",
            threads,
            "--output",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&run), 0);
        outputs.push(
            ["results.json", "draws_ols.csv", "draws_mean_y.csv"]
                .map(|f| std::fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn estimate_bootstrap_and_mc_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    write_panel(dir.path());
    let mc = r#"
[mc]
reps = 100
seed = 3
dgp = { n = 200, kind = { kind = "univariate", columns = [{ name = "x", law = "normal", mean = 0.0, sd = 1.0 }] } }
statistics = [{ column = "x", scheme = { kind = "all_ones" } }]
"#;
    let cfg = write_config(dir.path(), mc);
    let out_dir = dir.path().join("out");

    let est = rlstat(&["estimate", "--config", &cfg]);
    assert_eq!(code(&est), 0, "{}", String::from_utf8_lossy(&est.stderr));
    assert!(out_dir.join("estimates.json").exists());

    let boot = rlstat(&[
        "bootstrap",
        "--config",
        &cfg,
        "--iterations",
        "50",
        "--seed",
        "9",
    ]);
    assert_eq!(code(&boot), 0);
    let draws = std::fs::read_to_string(out_dir.join("draws_mean_y.csv")).unwrap();
    assert_eq!(draws.lines().count(), 51);

    let run = rlstat(&["mc", "--config", &cfg]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let json = std::fs::read_to_string(out_dir.join("mc.json")).unwrap();
    assert!(json.contains("scaled_cov"));
}
