//! Small numerical helpers shared across modules.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sum with a fixed binary-tree order, so results do not depend on how the
/// input was produced (sequentially or by parallel workers).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Independent random stream `stream` of the master `seed`.
///
/// ChaCha keeps a 64-bit stream id next to the key, so draw `b` of a
/// bootstrap gets `stream = b` and never overlaps another draw.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetrizes and clamps negative eigenvalues to zero.
pub fn floor_eigenvalues(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if sym.is_empty() {
        return sym;
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&rebuilt)
}

/// Unbiased sample covariance of the rows of `rows` (each of length `d`).
/// Accumulates in row order.
pub fn sample_covariance(rows: &[&[f64]], d: usize) -> DMatrix<f64> {
    let b = rows.len();
    let mut cov = DMatrix::zeros(d, d);
    if b < 2 {
        return cov;
    }
    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= b as f64;
    }
    for row in rows {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (b - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}
