//! Clustered tabular data.
//!
//! Rows are stored grouped by cluster: every cluster occupies a contiguous
//! block of rows, in order of first appearance, and rows keep their original
//! order inside the block. The cluster is the resampling unit of the
//! bootstrap.
//!
//! Every row also carries a mass (frequency weight, 1 by default). The
//! multinomial bootstrap materializes resampled copies with unit mass, the
//! multiplier bootstrap keeps the rows and perturbs the masses instead.

use std::collections::HashMap;
use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub label: String,
    pub rows: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    clusters: Vec<Cluster>,
    cluster_of_row: Vec<usize>,
    mass: Vec<f64>,
    cluster_column: Option<String>,
}

impl PanelDataset {
    /// Builds a dataset where every row is its own cluster.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = columns.first().map_or(0, |(_, v)| v.len());
        let labels = (0..n).map(|i| i.to_string()).collect();
        Self::with_clusters(columns, labels, None)
    }

    /// Builds a dataset from columns and a per-row cluster label. Rows are
    /// regrouped so that each cluster is contiguous.
    pub fn with_clusters(
        columns: Vec<(String, Vec<f64>)>,
        row_labels: Vec<String>,
        cluster_column: Option<String>,
    ) -> Result<Self> {
        let n = row_labels.len();
        if n == 0 {
            return Err(Error::Data("no data rows".into()));
        }
        let mut seen = HashMap::new();
        for (name, values) in &columns {
            if values.len() != n {
                return Err(Error::Data(format!(
                    "column `{name}` has {} values, expected {n}",
                    values.len()
                )));
            }
            if seen.insert(name.clone(), ()).is_some() {
                return Err(Error::Data(format!("duplicate column `{name}`")));
            }
        }

        let mut order_of_label: HashMap<&str, usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        for (row, label) in row_labels.iter().enumerate() {
            let idx = *order_of_label.entry(label.as_str()).or_insert_with(|| {
                members.push(Vec::new());
                labels.push(label.clone());
                members.len() - 1
            });
            members[idx].push(row);
        }

        let permutation: Vec<usize> = members.iter().flatten().copied().collect();
        let mut clusters = Vec::with_capacity(members.len());
        let mut cluster_of_row = Vec::with_capacity(n);
        let mut start = 0;
        for (c, (rows, label)) in members.iter().zip(labels).enumerate() {
            clusters.push(Cluster {
                label,
                rows: start..start + rows.len(),
            });
            cluster_of_row.extend(std::iter::repeat_n(c, rows.len()));
            start += rows.len();
        }

        let (names, columns) = columns
            .into_iter()
            .map(|(name, values)| (name, permutation.iter().map(|&r| values[r]).collect()))
            .unzip();

        Ok(PanelDataset {
            names,
            columns,
            clusters,
            cluster_of_row,
            mass: vec![1.0; n],
            cluster_column,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.cluster_of_row.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster_of_row(&self) -> &[usize] {
        &self.cluster_of_row
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.rows.len()).collect()
    }

    pub fn cluster_column(&self) -> Option<&str> {
        self.cluster_column.as_deref()
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Values of a categorical factor. The cluster column resolves to the
    /// cluster index, so resampled copies of one cluster become distinct
    /// categories.
    pub fn factor(&self, name: &str) -> Result<Vec<f64>> {
        if self.cluster_column.as_deref() == Some(name) && !self.has_column(name) {
            return Ok(self.cluster_of_row.iter().map(|&c| c as f64).collect());
        }
        self.column(name).map(<[f64]>::to_vec)
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn has_unit_mass(&self) -> bool {
        self.mass.iter().all(|&m| m == 1.0)
    }

    /// Replaces per-row masses.
    pub fn with_mass(mut self, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != self.n_rows() {
            return Err(Error::invalid(format!(
                "mass vector has {} entries, dataset has {} rows",
                mass.len(),
                self.n_rows()
            )));
        }
        self.mass = mass;
        Ok(self)
    }

    pub fn add_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_rows() {
            return Err(Error::Data(format!(
                "column `{name}` has {} values, expected {}",
                values.len(),
                self.n_rows()
            )));
        }
        if self.has_column(&name) {
            return Err(Error::Data(format!("duplicate column `{name}`")));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    /// Concatenates copies of the picked clusters. The k-th block of the
    /// result is an exact copy of cluster `picks[k]` and is its own cluster.
    pub fn resample_clusters(&self, picks: &[usize]) -> PanelDataset {
        let total: usize = picks.iter().map(|&c| self.clusters[c].rows.len()).sum();
        let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(total); self.columns.len()];
        let mut clusters = Vec::with_capacity(picks.len());
        let mut cluster_of_row = Vec::with_capacity(total);
        let mut mass = Vec::with_capacity(total);
        let mut start = 0;
        for (k, &c) in picks.iter().enumerate() {
            let block = self.clusters[c].rows.clone();
            for (dst, src) in columns.iter_mut().zip(&self.columns) {
                dst.extend_from_slice(&src[block.clone()]);
            }
            mass.extend_from_slice(&self.mass[block.clone()]);
            cluster_of_row.extend(std::iter::repeat_n(k, block.len()));
            clusters.push(Cluster {
                label: self.clusters[c].label.clone(),
                rows: start..start + block.len(),
            });
            start += block.len();
        }
        PanelDataset {
            names: self.names.clone(),
            columns,
            clusters,
            cluster_of_row,
            mass,
            cluster_column: self.cluster_column.clone(),
        }
    }

    /// Copies the picked rows; every row of the result is its own cluster.
    pub fn resample_rows(&self, picks: &[usize]) -> PanelDataset {
        let columns = self
            .columns
            .iter()
            .map(|col| picks.iter().map(|&r| col[r]).collect())
            .collect();
        let clusters = picks
            .iter()
            .enumerate()
            .map(|(k, &r)| Cluster {
                label: self.clusters[self.cluster_of_row[r]].label.clone(),
                rows: k..k + 1,
            })
            .collect();
        PanelDataset {
            names: self.names.clone(),
            columns,
            clusters,
            cluster_of_row: (0..picks.len()).collect(),
            mass: picks.iter().map(|&r| self.mass[r]).collect(),
            cluster_column: self.cluster_column.clone(),
        }
    }

    /// Treats every row as its own cluster, keeping the row order.
    pub fn ungrouped(&self) -> PanelDataset {
        let picks: Vec<usize> = (0..self.n_rows()).collect();
        self.resample_rows(&picks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn groups_rows_by_first_appearance() {
        let data = PanelDataset::with_clusters(
            vec![("x".into(), vec![1.0, 2.0, 3.0, 4.0])],
            labels(&["b", "a", "b", "a"]),
            Some("id".into()),
        )
        .unwrap();
        assert_eq!(data.column("x").unwrap(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(data.cluster_sizes(), vec![2, 2]);
        assert_eq!(data.clusters()[0].label, "b");
        assert_eq!(data.factor("id").unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn cluster_resample_copies_blocks() {
        let data = PanelDataset::with_clusters(
            vec![("x".into(), vec![1.0, 2.0, 3.0])],
            labels(&["a", "a", "b"]),
            None,
        )
        .unwrap();
        let re = data.resample_clusters(&[1, 0, 1]);
        assert_eq!(re.column("x").unwrap(), &[3.0, 1.0, 2.0, 3.0]);
        assert_eq!(re.cluster_sizes(), vec![1, 2, 1]);
        assert_eq!(re.n_clusters(), 3);
    }

    #[test]
    fn rejects_ragged_columns() {
        let err =
            PanelDataset::with_clusters(vec![("x".into(), vec![1.0])], labels(&["a", "b"]), None)
                .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
