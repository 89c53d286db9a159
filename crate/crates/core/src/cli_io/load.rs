use std::path::Path;

use crate::data::PanelDataset;
use crate::error::{Error, Result};

/// A loaded dataset and what was dropped on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub data: PanelDataset,
    pub rows_read: usize,
    /// Rows excluded because a needed cell was empty.
    pub rows_dropped: usize,
}

/// Reads a CSV file with a header row.
///
/// `columns` lists the columns that must be numeric; `None` means every
/// column other than the cluster column. Other columns are ignored. A row
/// with an empty cell in a needed column is dropped and counted.
pub fn load_csv(path: &Path, cluster: Option<&str>, columns: Option<&[String]>) -> Result<Loaded> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    load_reader(file, cluster, columns)
}

pub fn load_reader<R: std::io::Read>(
    reader: R,
    cluster: Option<&str>,
    columns: Option<&[String]>,
) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let position = |name: &str| headers.iter().position(|h| h == name);

    let cluster_idx = match cluster {
        Some(c) => {
            Some(position(c).ok_or_else(|| Error::Data(format!("unknown cluster column `{c}`")))?)
        }
        None => None,
    };
    let wanted: Vec<String> = match columns {
        Some(cols) => cols.to_vec(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != cluster_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let idx: Vec<usize> = wanted
        .iter()
        .map(|c| position(c).ok_or_else(|| Error::MissingColumn(c.clone())))
        .collect::<Result<_>>()?;

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    let mut labels = Vec::new();
    let mut rows_read = 0;
    let mut rows_dropped = 0;
    'rows: for (r, record) in rdr.records().enumerate() {
        let record = record?;
        rows_read += 1;
        // 1-based line numbers, counting the header
        let line = r + 2;
        let mut row = Vec::with_capacity(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            let cell = record.get(i).unwrap_or("").trim();
            if cell.is_empty() {
                rows_dropped += 1;
                continue 'rows;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "row {line}, column `{}`: `{cell}` is not a number",
                    wanted[k]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {line}, column `{}`: non-finite value",
                    wanted[k]
                )));
            }
            row.push(v);
        }
        let label = match cluster_idx {
            Some(i) => {
                let cell = record.get(i).unwrap_or("").trim();
                if cell.is_empty() {
                    rows_dropped += 1;
                    continue 'rows;
                }
                cell.to_string()
            }
            None => r.to_string(),
        };
        for (col, v) in values.iter_mut().zip(row) {
            col.push(v);
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    let data = PanelDataset::with_clusters(
        wanted.into_iter().zip(values).collect(),
        labels,
        cluster.map(str::to_string),
    )?;
    Ok(Loaded {
        data,
        rows_read,
        rows_dropped,
    })
}
