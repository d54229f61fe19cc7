//! Zero-mean scaling and PCA reduction of embedding vectors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on column means accepted by [`PcaModel::fit`].
pub const CENTERING_TOLERANCE: f64 = 1e-6;

/// Dense row-major matrix of samples (rows) by features (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dims("data matrix values", rows * cols, values.len()));
        }
        if cols == 0 {
            return Err(Error::InvalidData("data matrix has no columns".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite entry at row {}, column {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::dims("data matrix row", cols, row.len()));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        let n = self.rows as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    fn require_fit_rows(&self, what: &str) -> Result<()> {
        if self.rows < 2 {
            return Err(Error::InvalidData(format!(
                "{what} needs at least 2 samples, got {}",
                self.rows
            )));
        }
        Ok(())
    }
}

/// Per-feature centering.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub means: Vec<f64>,
}

impl Scaler {
    pub fn fit(data: &DataMatrix) -> Result<Self> {
        data.require_fit_rows("scaler fit")?;
        Ok(Self {
            means: data.column_means(),
        })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.means.len() {
            return Err(Error::dims("scaler input", self.means.len(), x.len()));
        }
        Ok(x.iter().zip(&self.means).map(|(v, m)| v - m).collect())
    }

    pub fn apply_matrix(&self, data: &DataMatrix) -> Result<DataMatrix> {
        if data.cols() != self.means.len() {
            return Err(Error::dims("scaler input", self.means.len(), data.cols()));
        }
        let values = data
            .iter_rows()
            .flat_map(|row| row.iter().zip(&self.means).map(|(v, m)| v - m))
            .collect();
        DataMatrix::new(data.rows(), data.cols(), values)
    }
}

/// Principal directions retaining a target fraction of the total variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// q×d, rows are orthonormal principal directions.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub target_ratio: f64,
}

impl PcaModel {
    /// Fits on already-centered data via the SVD of the data matrix.
    ///
    /// Keeps the smallest number of directions whose explained variance
    /// reaches `target_ratio` of the total. Directions with numerically zero
    /// variance are never kept, so rank-deficient data at a target of 1.0
    /// yields q = rank. Each component is oriented so that its
    /// largest-magnitude coordinate is positive.
    pub fn fit(centered: &DataMatrix, target_ratio: f64) -> Result<Self> {
        centered.require_fit_rows("PCA fit")?;
        if !(target_ratio > 0.0 && target_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "PCA target ratio must lie in (0, 1], got {target_ratio}"
            )));
        }
        for (j, m) in centered.column_means().iter().enumerate() {
            if m.abs() > CENTERING_TOLERANCE {
                return Err(Error::InvalidData(format!(
                    "PCA input column {j} has mean {m:e}; center the data first"
                )));
            }
        }

        let n = centered.rows();
        let d = centered.cols();
        let svd = centered.to_dmatrix().svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Numerical("SVD did not produce right singular vectors".into()))?;
        let sigma = svd.singular_values;

        let mut order: Vec<usize> = (0..sigma.len()).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

        let denom = (n - 1) as f64;
        let variances: Vec<f64> = order.iter().map(|&i| sigma[i] * sigma[i] / denom).collect();
        let total_variance: f64 = variances.iter().sum();

        let sigma_max = order.first().map_or(0.0, |&i| sigma[i]);
        let rank_tol = sigma_max * n.max(d) as f64 * f64::EPSILON;
        let rank = order.iter().take_while(|&&i| sigma[i] > rank_tol).count();
        if rank == 0 || total_variance <= 0.0 {
            return Err(Error::InvalidData("PCA input has no variance".into()));
        }

        let mut q = rank;
        let mut cumulative = 0.0;
        for (k, v) in variances.iter().take(rank).enumerate() {
            cumulative += v;
            if cumulative / total_variance >= target_ratio {
                q = k + 1;
                break;
            }
        }

        let mut components = DMatrix::zeros(q, d);
        for (r, &i) in order.iter().take(q).enumerate() {
            let row = v_t.row(i);
            let mut pivot = 0;
            for j in 1..d {
                if row[j].abs() > row[pivot].abs() {
                    pivot = j;
                }
            }
            let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..d {
                components[(r, j)] = sign * row[j];
            }
        }

        Ok(Self {
            components,
            explained_variance: variances[..q].to_vec(),
            total_variance,
            target_ratio,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn retained_ratio(&self) -> f64 {
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim();
        if x.len() != d {
            return Err(Error::dims("PCA input", d, x.len()));
        }
        Ok((0..self.n_components())
            .map(|r| (0..d).map(|j| self.components[(r, j)] * x[j]).sum())
            .collect())
    }

    /// Maps reduced coordinates back to feature space (components^T · y).
    pub fn inverse_transform(&self, y: &[f64]) -> Result<Vec<f64>> {
        let q = self.n_components();
        if y.len() != q {
            return Err(Error::dims("PCA coordinates", q, y.len()));
        }
        Ok((0..self.input_dim())
            .map(|j| (0..q).map(|r| self.components[(r, j)] * y[r]).sum())
            .collect())
    }

    pub fn transform_matrix(&self, data: &DataMatrix) -> Result<DataMatrix> {
        let mut values = Vec::with_capacity(data.rows() * self.n_components());
        for row in data.iter_rows() {
            values.extend(self.transform(row)?);
        }
        DataMatrix::new(data.rows(), self.n_components(), values)
    }
}
