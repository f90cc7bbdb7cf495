//! Dense row-major matrices and vectors.
//!
//! Everything is `f64`. Shapes are validated on construction and on every
//! binary operation; reductions run in a fixed left-to-right order so that
//! results are bit-reproducible across runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 2-D matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from row-major data. Rejects length mismatches and non-finite
    /// entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                op: "Matrix2D::from_vec",
                rows,
                cols,
                got: data.len(),
            });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("Matrix2D::from_vec"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("Matrix2D::from_rows"));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "Matrix2D::from_rows",
                    lhs_rows: rows.len(),
                    lhs_cols: cols,
                    rhs_rows: 1,
                    rhs_cols: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_vec(&self, r: usize) -> Vec1D {
        Vec1D::new(self.row(r).to_vec())
    }

    pub fn last_row(&self) -> &[f64] {
        self.row(self.rows - 1)
    }

    pub fn set_row(&mut self, r: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.cols {
            return Err(Error::ShapeMismatch {
                op: "Matrix2D::set_row",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: 1,
                rhs_cols: values.len(),
            });
        }
        self.row_mut(r).copy_from_slice(values);
        Ok(())
    }

    /// Copy of rows `lo..hi`.
    pub fn slice_rows(&self, lo: usize, hi: usize) -> Matrix2D {
        Matrix2D {
            rows: hi - lo,
            cols: self.cols,
            data: self.data[lo * self.cols..hi * self.cols].to_vec(),
        }
    }

    /// Vertical concatenation, `self` first.
    pub fn concat_rows(&self, other: &Matrix2D) -> Result<Matrix2D> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "Matrix2D::concat_rows",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        let mut data = Vec::with_capacity((self.rows + other.rows) * self.cols);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix2D {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn transpose(&self) -> Matrix2D {
        let mut out = Matrix2D::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Standard matrix product. Requires `self.cols == rhs.rows`.
    pub fn matmul(&self, rhs: &Matrix2D) -> Result<Matrix2D> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let mut out = Matrix2D::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
        Ok(out)
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    /// Every output row is nonnegative and sums to 1.
    pub fn softmax_rows(&self) -> Matrix2D {
        let mut out = self.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        out
    }

    pub fn scale(&self, factor: f64) -> Matrix2D {
        Matrix2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn add(&self, rhs: &Matrix2D) -> Result<Matrix2D> {
        self.zip_with(rhs, "Matrix2D::add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix2D) -> Result<Matrix2D> {
        self.zip_with(rhs, "Matrix2D::sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        rhs: &Matrix2D,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix2D> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::ShapeMismatch {
                op,
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        Ok(Matrix2D {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference. Shapes must match.
    pub fn max_abs_diff(&self, rhs: &Matrix2D) -> Result<f64> {
        let d = self.sub(rhs)?;
        Ok(d.data.iter().fold(0.0f64, |m, x| m.max(x.abs())))
    }
}

/// Dense 1-D vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vec1D {
    data: Vec<f64>,
}

impl Vec1D {
    pub fn new(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dot(&self, rhs: &Vec1D) -> Result<f64> {
        if self.dim() != rhs.dim() {
            return Err(Error::ShapeMismatch {
                op: "Vec1D::dot",
                lhs_rows: 1,
                lhs_cols: self.dim(),
                rhs_rows: 1,
                rhs_cols: rhs.dim(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .fold(0.0, |acc, (&a, &b)| acc + a * b))
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0, |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn scale(&self, factor: f64) -> Vec1D {
        Vec1D::new(self.data.iter().map(|x| x * factor).collect())
    }

    pub fn add(&self, rhs: &Vec1D) -> Result<Vec1D> {
        if self.dim() != rhs.dim() {
            return Err(Error::ShapeMismatch {
                op: "Vec1D::add",
                lhs_rows: 1,
                lhs_cols: self.dim(),
                rhs_rows: 1,
                rhs_cols: rhs.dim(),
            });
        }
        Ok(Vec1D::new(
            self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, rhs: &Vec1D) -> Result<Vec1D> {
        if self.dim() != rhs.dim() {
            return Err(Error::ShapeMismatch {
                op: "Vec1D::sub",
                lhs_rows: 1,
                lhs_cols: self.dim(),
                rhs_rows: 1,
                rhs_cols: rhs.dim(),
            });
        }
        Ok(Vec1D::new(
            self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        ))
    }

    /// Unit-norm copy. Vectors with norm below [`NORM_EPSILON`] are rejected;
    /// the caller decides how to handle the degenerate case.
    pub fn l2_normalized(&self) -> Result<Vec1D> {
        let n = self.norm();
        if n <= NORM_EPSILON {
            return Err(Error::DegenerateVector { norm: n });
        }
        Ok(self.scale(1.0 / n))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, rhs: &Vec1D) -> Result<f64> {
        let d = self.sub(rhs)?;
        Ok(d.data.iter().fold(0.0f64, |m, x| m.max(x.abs())))
    }
}

/// Norm threshold below which a vector counts as degenerate.
pub const NORM_EPSILON: f64 = 1e-12;

/// Elementwise arithmetic mean of equal-dimension vectors, summed in input
/// order.
pub fn mean_rows(vs: &[Vec1D]) -> Result<Vec1D> {
    let first = vs.first().ok_or(Error::EmptyInput("mean_rows"))?;
    let dim = first.dim();
    let mut acc = Vec1D::zeros(dim);
    for v in vs {
        if v.dim() != dim {
            return Err(Error::ShapeMismatch {
                op: "mean_rows",
                lhs_rows: 1,
                lhs_cols: dim,
                rhs_rows: 1,
                rhs_cols: v.dim(),
            });
        }
        for (a, &b) in acc.data.iter_mut().zip(&v.data) {
            *a += b;
        }
    }
    let inv = 1.0 / vs.len() as f64;
    for a in acc.data.iter_mut() {
        *a *= inv;
    }
    Ok(acc)
}
