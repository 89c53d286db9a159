use std::io::Write;
use std::path::{Path, PathBuf};

use super::analysis::ReportBundle;
use crate::error::{Error, Result};

pub const RESULTS_FILE: &str = "results.json";
pub const REPORT_FILE: &str = "report.txt";

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Draws as CSV with header `draw_index,stat_1,...,stat_d`. A failed draw
/// has empty statistic cells.
pub fn draws_csv(draws: &[Option<Vec<f64>>], d: usize) -> String {
    let mut out = String::from("draw_index");
    for j in 1..=d {
        out.push_str(&format!(",stat_{j}"));
    }
    out.push('\n');
    for (b, row) in draws.iter().enumerate() {
        out.push_str(&b.to_string());
        match row {
            Some(v) => v.iter().for_each(|x| out.push_str(&format!(",{x}"))),
            None => (0..d).for_each(|_| out.push(',')),
        }
        out.push('\n');
    }
    out
}

pub fn parse_draws_csv(text: &str) -> Result<Vec<Option<Vec<f64>>>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("draw_index") {
        return Err(Error::Data(
            "draws file must start with a draw_index column".into(),
        ));
    }
    let mut out = Vec::new();
    for (b, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let idx: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data(format!("draws row {}: bad draw_index", b + 2)))?;
        if idx != b {
            return Err(Error::Data(format!(
                "draws row {}: expected draw_index {b}, found {idx}",
                b + 2
            )));
        }
        let cells: Vec<&str> = rec.iter().skip(1).collect();
        if cells.iter().all(|c| c.is_empty()) {
            out.push(None);
            continue;
        }
        let v = cells
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Data(format!("draws row {}: non-numeric statistic", b + 2)))?;
        out.push(Some(v));
    }
    Ok(out)
}

pub fn results_json(bundle: &ReportBundle) -> Result<String> {
    let mut s = serde_json::to_string_pretty(bundle).map_err(|e| Error::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes `results.json`, one draws file per comparison and `report.txt`.
pub fn write_bundle(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (c, draws) in bundle.comparisons.iter().zip(&bundle.draws) {
        let path = dir.join(&c.draws_file);
        write_atomic(&path, draws_csv(draws, c.point.len()).as_bytes())?;
        written.push(path);
    }
    let path = dir.join(RESULTS_FILE);
    write_atomic(&path, results_json(bundle)?.as_bytes())?;
    written.push(path);
    let path = dir.join(REPORT_FILE);
    write_atomic(&path, super::analysis::render_table(bundle).as_bytes())?;
    written.push(path);
    Ok(written)
}

/// Reads `results.json` and the draws files it references.
pub fn read_bundle(dir: &Path) -> Result<ReportBundle> {
    let path = dir.join(RESULTS_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut bundle: ReportBundle =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    bundle.draws = bundle
        .comparisons
        .iter()
        .map(|c| {
            let p = dir.join(&c.draws_file);
            let text = std::fs::read_to_string(&p)
                .map_err(|e| Error::Data(format!("cannot read {}: {e}", p.display())))?;
            parse_draws_csv(&text)
        })
        .collect::<Result<_>>()?;
    Ok(bundle)
}
