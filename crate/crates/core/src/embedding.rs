//! CLR-space PCA: the 2D scatter embedding and the PC1 ordering of spots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{clr, replace_zeros, ClrVector, Composition, CompositionError};
use crate::linalg::symmetric_eigen;

/// Row sums of a [`ClrMatrix`] must vanish within this absolute tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("matrix needs at least {min} rows, got {got}")]
    TooFewRows { min: usize, got: usize },
    #[error("matrix needs at least 2 columns, got {0}")]
    TooFewColumns(usize),
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row {row} sums to {sum}, not zero")]
    NotZeroSum { row: usize, sum: f64 },
    #[error("matrix contains a non-finite value at row {row}")]
    NonFinite { row: usize },
    #[error(transparent)]
    Composition(#[from] CompositionError),
}

/// Row-major `n x d` matrix of CLR coordinates, one spot per row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClrMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ClrMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, EmbeddingError> {
        if rows < 1 {
            return Err(EmbeddingError::TooFewRows { min: 1, got: rows });
        }
        if cols < 2 {
            return Err(EmbeddingError::TooFewColumns(cols));
        }
        if data.len() != rows * cols {
            return Err(EmbeddingError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        for (row, values) in data.chunks_exact(cols).enumerate() {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite { row });
            }
            let sum: f64 = values.iter().sum();
            if sum.abs() > ROW_SUM_TOLERANCE {
                return Err(EmbeddingError::NotZeroSum { row, sum });
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[ClrVector]) -> Result<Self, EmbeddingError> {
        let cols = rows.first().map_or(0, ClrVector::dim);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.dim() != cols {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: cols,
                    got: r.dim(),
                });
            }
            data.extend_from_slice(r.coords());
        }
        Self::new(rows.len(), cols, data)
    }

    /// Zero-replaces (multiplicatively, with `eps`) and CLR-transforms each
    /// composition.
    pub fn from_compositions(comps: &[Composition], eps: f64) -> Result<Self, EmbeddingError> {
        let rows = comps
            .iter()
            .map(|c| clr(&replace_zeros(c, eps)?))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_rows(&rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Top-two principal axes of a CLR matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Two unit-norm, mutually orthogonal axes. The largest-magnitude loading
    /// of each axis is positive.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

/// Projected spots plus their order along the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub coords: Vec<[f64; 2]>,
    /// Spot indices sorted by ascending PC1, ties by index.
    pub pc1_order: Vec<usize>,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Column mean, exact for constant columns and refined once otherwise.
fn column_mean(m: &ClrMatrix, j: usize) -> f64 {
    let first = m.row(0)[j];
    if m.iter_rows().all(|r| r[j] == first) {
        return first;
    }
    let n = m.rows() as f64;
    let mean = m.iter_rows().map(|r| r[j]).sum::<f64>() / n;
    mean + m.iter_rows().map(|r| r[j] - mean).sum::<f64>() / n
}

fn orient(axis: &mut [f64]) {
    let mut best = 0;
    for (i, v) in axis.iter().enumerate() {
        if v.abs() > axis[best].abs() {
            best = i;
        }
    }
    if axis[best] < 0.0 {
        axis.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Fits PCA on the sample covariance (divisor `n - 1`) of `m`.
pub fn pca_fit(m: &ClrMatrix) -> Result<PcaModel, EmbeddingError> {
    let (n, d) = (m.rows(), m.cols());
    if n < 2 {
        return Err(EmbeddingError::TooFewRows { min: 2, got: n });
    }
    let mean: Vec<f64> = (0..d).map(|j| column_mean(m, j)).collect();

    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for row in m.iter_rows() {
        for (c, (x, mu)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *c = x - mu;
        }
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += centered[i] * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }

    let (values, mut vectors) = symmetric_eigen(&cov, d);
    vectors.truncate(2);
    for v in vectors.iter_mut() {
        orient(v);
    }
    let second = vectors.pop().expect("d >= 2");
    let first = vectors.pop().expect("d >= 2");
    Ok(PcaModel {
        mean,
        components: [first, second],
        explained_variance: [values[0].max(0.0), values[1].max(0.0)],
    })
}

/// Projects rows of `m` onto the model's axes and derives the PC1 ordering.
pub fn pca_project(model: &PcaModel, m: &ClrMatrix) -> Result<Embedding, EmbeddingError> {
    if model.mean.len() != m.cols() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: model.mean.len(),
            got: m.cols(),
        });
    }
    let coords: Vec<[f64; 2]> = m
        .iter_rows()
        .map(|row| {
            let mut out = [0.0; 2];
            for (o, axis) in out.iter_mut().zip(&model.components) {
                *o = row
                    .iter()
                    .zip(&model.mean)
                    .zip(axis)
                    .map(|((x, mu), a)| (x - mu) * a)
                    .sum();
            }
            out
        })
        .collect();
    let mut pc1_order: Vec<usize> = (0..coords.len()).collect();
    pc1_order.sort_by(|&a, &b| {
        coords[a][0]
            .partial_cmp(&coords[b][0])
            .expect("finite projections")
            .then(a.cmp(&b))
    });
    Ok(Embedding { coords, pc1_order })
}

/// Fits on `m` and projects `m` itself.
pub fn embed(m: &ClrMatrix) -> Result<(PcaModel, Embedding), EmbeddingError> {
    let model = pca_fit(m)?;
    let embedding = pca_project(&model, m)?;
    Ok((model, embedding))
}
