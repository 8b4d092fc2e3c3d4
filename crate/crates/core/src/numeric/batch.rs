use crate::error::{Error, Result};

/// Row-major `rows × dim` matrix of f64 points.
///
/// Holds particle sets, reference samples, latents and gradients alike. All
/// reductions over rows run in index order so results are reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
}

impl Batch {
    /// Validated constructor: at least one row, positive dim, finite entries.
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::Shape(format!("batch must be non-empty, got {rows}x{dim}")));
        }
        let batch = Self::from_vec(rows, dim, data)?;
        if let Some(i) = batch.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!(
                "non-finite entry at row {} col {}",
                i / dim,
                i % dim
            )));
        }
        Ok(batch)
    }

    /// Shape-checked constructor that allows empty batches and skips the finiteness scan.
    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "buffer of length {} cannot hold {rows}x{dim}",
                data.len()
            )));
        }
        Ok(Self { data, rows, dim })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            data: vec![0.0; rows * dim],
            rows,
            dim,
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if self.rows == 0 && self.dim == 0 {
            self.dim = row.len();
        }
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Rows `[start, end)` as a new batch.
    pub fn slice_rows(&self, start: usize, end: usize) -> Batch {
        Batch {
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            rows: end - start,
            dim: self.dim,
        }
    }

    /// Selected columns, in the given order.
    pub fn columns(&self, cols: &[usize]) -> Batch {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in self.iter_rows() {
            data.extend(cols.iter().map(|&c| r[c]));
        }
        Batch {
            data,
            rows: self.rows,
            dim: cols.len(),
        }
    }

    /// Row-wise concatenation `[self | other]`.
    pub fn hstack(&self, other: &Batch) -> Result<Batch> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot hstack {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let dim = self.dim + other.dim;
        let mut data = Vec::with_capacity(self.rows * dim);
        for (a, b) in self.iter_rows().zip(other.iter_rows()) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(Batch {
            data,
            rows: self.rows,
            dim,
        })
    }

    /// Stack rows of `other` below `self`.
    pub fn vstack(&self, other: &Batch) -> Result<Batch> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Batch {
            data,
            rows: self.rows + other.rows,
            dim: self.dim,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Batch {
        Batch {
            data: self.data.iter().map(|&v| f(v)).collect(),
            rows: self.rows,
            dim: self.dim,
        }
    }

    /// `self + scale * other`, elementwise.
    pub fn add_scaled(&self, other: &Batch, scale: f64) -> Result<Batch> {
        self.check_same_shape(other)?;
        Ok(Batch {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + scale * b)
                .collect(),
            rows: self.rows,
            dim: self.dim,
        })
    }

    pub fn check_same_shape(&self, other: &Batch) -> Result<()> {
        if self.rows != other.rows || self.dim != other.dim {
            return Err(Error::Shape(format!(
                "expected {}x{}, got {}x{}",
                self.rows, self.dim, other.rows, other.dim
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for r in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Per-column population standard deviation.
    pub fn column_std(&self) -> Vec<f64> {
        let mean = self.mean_row();
        let mut var = vec![0.0; self.dim];
        for r in self.iter_rows() {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let n = self.rows.max(1) as f64;
        var.iter().map(|v| (v / n).sqrt()).collect()
    }

    /// Mean Euclidean norm of the rows.
    pub fn mean_norm(&self) -> f64 {
        let total: f64 = self.iter_rows().map(norm).sum();
        total / self.rows.max(1) as f64
    }
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}
