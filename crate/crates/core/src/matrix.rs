//! Row-major dense matrices and the three roles they play in the loss:
//! predictions `P` (D×|labels|), goals `G` (D×|clauses|) and gradients.

use num_traits::Float;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tnorm::DomainMode;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Per-output label confidences, one row per anchor box.
pub type PredictionMatrix<T = f32> = Matrix<T>;
/// Relaxed satisfaction degree of every clause on every output row.
pub type GoalMatrix<T = f32> = Matrix<T>;
/// `∂L/∂P`, same shape as the prediction matrix.
pub type GradMatrix<T = f32> = Matrix<T>;

impl<T> Matrix<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

impl<T: Copy> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

impl<T: Float> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    /// Converts element type through `f64`.
    pub fn cast<U: Float>(&self) -> Matrix<U> {
        self.map(|&x| U::from(x).expect("float conversion"))
    }

    pub fn max_abs_diff(&self, other: &Matrix<T>) -> Option<T> {
        if self.shape() != other.shape() {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(T::zero(), T::max),
        )
    }

    /// Validates that every entry lies in `[0, 1]`; in clamp mode
    /// out-of-range finite entries are pulled back onto the interval.
    pub fn into_unit_interval(mut self, mode: DomainMode) -> Result<Self> {
        let cols = self.cols;
        for (k, x) in self.data.iter_mut().enumerate() {
            let inside = *x >= T::zero() && *x <= T::one();
            if inside {
                continue;
            }
            if mode == DomainMode::Clamp && x.is_finite() {
                *x = x.max(T::zero()).min(T::one());
                continue;
            }
            return Err(Error::Domain {
                value: x.to_f64().unwrap_or(f64::NAN),
                context: format!("row {}, column {}", k / cols.max(1), k % cols.max(1)),
            });
        }
        Ok(self)
    }

    pub fn scale(&mut self, factor: T) {
        for x in &mut self.data {
            *x = *x * factor;
        }
    }
}
