//! Bivariate kernel density grids for pairs of bootstrap draws.
//!
//! The estimator is a product Gaussian kernel with bandwidth
//! `h_j = sd_j * n^(-1/6)` per axis, Silverman's rule for two dimensions.
//! The grid spans `[min - 3h, max + 3h]` on each axis.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::output::write_atomic;
use crate::error::{Error, Result};

pub const GRID_SIZE: usize = 101;
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `density[i * y.len() + j]` is the density at `(x[i], y[j])`.
    pub density: Vec<f64>,
    pub bandwidth: [f64; 2],
}

impl PlotGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.density[i * self.y.len() + j]
    }

    /// Trapezoid-rule integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        let trap = |v: &[f64], k: usize| {
            let w = if k == 0 || k + 1 == v.len() { 0.5 } else { 1.0 };
            w * (v[1] - v[0])
        };
        let mut s = 0.0;
        for i in 0..self.x.len() {
            for j in 0..self.y.len() {
                s += trap(&self.x, i) * trap(&self.y, j) * self.at(i, j);
            }
        }
        s
    }

    pub fn argmax(&self) -> (usize, usize) {
        let k = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                if v > best.1 {
                    (k, v)
                } else {
                    best
                }
            })
            .0;
        (k / self.y.len(), k % self.y.len())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,density\n");
        for (i, x) in self.x.iter().enumerate() {
            for (j, y) in self.y.iter().enumerate() {
                out.push_str(&format!("{x},{y},{}\n", self.at(i, j)));
            }
        }
        out
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn axis(v: &[f64], h: f64, size: usize) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    (0..size)
        .map(|k| lo + (hi - lo) * k as f64 / (size - 1) as f64)
        .collect()
}

/// Kernel values `phi((g - x_i) / h) / h` for every grid point and draw.
fn kernel_matrix(grid: &[f64], v: &[f64], h: f64) -> DMatrix<f64> {
    let c = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    DMatrix::from_fn(grid.len(), v.len(), |g, i| {
        let z = (grid[g] - v[i]) / h;
        c * (-0.5 * z * z).exp()
    })
}

pub fn kde_grid(xs: &[f64], ys: &[f64], size: usize) -> Result<PlotGrid> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("x and y draws differ in length"));
    }
    if xs.len() < MIN_DRAWS {
        return Err(Error::invalid(format!(
            "density grid needs at least {MIN_DRAWS} draws, have {}",
            xs.len()
        )));
    }
    if size < 2 {
        return Err(Error::invalid("grid needs at least 2 points per axis"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("draws".into()));
    }
    let n = xs.len() as f64;
    let (_, sx) = mean_sd(xs);
    let (_, sy) = mean_sd(ys);
    if !(sx > 0.0 && sy > 0.0) {
        return Err(Error::NonFinite(
            "draws have zero variance; no density to estimate".into(),
        ));
    }
    let hx = sx * n.powf(-1.0 / 6.0);
    let hy = sy * n.powf(-1.0 / 6.0);
    let gx = axis(xs, hx, size);
    let gy = axis(ys, hy, size);
    let kx = kernel_matrix(&gx, xs, hx);
    let ky = kernel_matrix(&gy, ys, hy);
    let dens = (kx * ky.transpose()) / n;
    let density = (0..size)
        .flat_map(|i| (0..size).map(move |j| (i, j)))
        .map(|(i, j)| dens[(i, j)])
        .collect();
    Ok(PlotGrid {
        x: gx,
        y: gy,
        density,
        bandwidth: [hx, hy],
    })
}

/// Reference overlays stored next to a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotMeta {
    pub x_label: String,
    pub y_label: String,
    pub draws: usize,
    pub bandwidth: [f64; 2],
    pub point_estimate: [f64; 2],
    /// Endpoints of the 45-degree line across the grid.
    pub diagonal: [[f64; 2]; 2],
}

/// Writes `<stem>.csv` (`x,y,density`) and `<stem>.json` (overlays).
pub fn emit_plot_grid(
    dir: &Path,
    stem: &str,
    labels: [&str; 2],
    xs: &[f64],
    ys: &[f64],
    point: [f64; 2],
) -> Result<(PathBuf, PathBuf)> {
    let grid = kde_grid(xs, ys, GRID_SIZE)?;
    let lo = grid.x[0].min(grid.y[0]);
    let hi = grid.x[GRID_SIZE - 1].max(grid.y[GRID_SIZE - 1]);
    let meta = PlotMeta {
        x_label: labels[0].into(),
        y_label: labels[1].into(),
        draws: xs.len(),
        bandwidth: grid.bandwidth,
        point_estimate: point,
        diagonal: [[lo, lo], [hi, hi]],
    };
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_atomic(&csv_path, grid.to_csv().as_bytes())?;
    let mut json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Data(e.to_string()))?;
    json.push('\n');
    write_atomic(&json_path, json.as_bytes())?;
    Ok((csv_path, json_path))
}
