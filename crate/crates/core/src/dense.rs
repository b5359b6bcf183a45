//! The stacked-tensor formulation of the goal matrix.
//!
//! `P`, `C⁺` and `C⁻` are each broadcast to a `D × |Π| × |A|` tensor, the
//! literal tensor `P̂⊙Ĉ⁺ + (Ĉ⁻ − P̂⊙Ĉ⁻)` is formed, and the t-conorm is folded
//! along the label axis. Every tensor is materialized on purpose: this path
//! is both the correctness oracle for [`crate::sparse`] and the memory
//! baseline that the benchmarks compare against. It does not compute
//! gradients.

use num_traits::Float;
use serde::Serialize;

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::matrix::{GoalMatrix, Matrix, PredictionMatrix};
use crate::sparse::logic_loss;
use crate::tnorm::TNormKind;

/// Number of full-size tensors alive at the peak of the dense forward pass.
pub const DENSE_TENSORS: u128 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DenseFootprint {
    pub per_tensor_bytes: u128,
    pub total_bytes: u128,
}

/// Bytes for one `D × |Π| × |A|` tensor and for the five the dense pass holds.
pub fn dense_peak_bytes(
    rows: u64,
    n_constraints: u64,
    n_labels: u64,
    elem_bytes: u64,
) -> Result<DenseFootprint> {
    if rows == 0 || n_constraints == 0 || n_labels == 0 || elem_bytes == 0 {
        return Err(Error::InvalidArgument(
            "memory estimate needs positive dimensions".into(),
        ));
    }
    let per_tensor_bytes = (rows as u128)
        .checked_mul(n_constraints as u128)
        .and_then(|x| x.checked_mul(n_labels as u128))
        .and_then(|x| x.checked_mul(elem_bytes as u128))
        .ok_or(Error::Overflow("dense tensor size"))?;
    let total_bytes = per_tensor_bytes
        .checked_mul(DENSE_TENSORS)
        .ok_or(Error::Overflow("dense total size"))?;
    Ok(DenseFootprint {
        per_tensor_bytes,
        total_bytes,
    })
}

/// Stacked tensor of shape `D × |Π| × |A|`, row-major.
struct Tensor3<T> {
    clauses: usize,
    labels: usize,
    data: Vec<T>,
}

impl<T: Float> Tensor3<T> {
    fn build(
        rows: usize,
        clauses: usize,
        labels: usize,
        f: impl Fn(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let len = rows
            .checked_mul(clauses)
            .and_then(|x| x.checked_mul(labels))
            .ok_or(Error::Overflow("dense tensor length"))?;
        let mut data = Vec::new();
        data.try_reserve_exact(len).map_err(|_| Error::Allocation {
            bytes: len as u128 * std::mem::size_of::<T>() as u128,
        })?;
        for i in 0..rows {
            for j in 0..clauses {
                for a in 0..labels {
                    data.push(f(i, j, a));
                }
            }
        }
        Ok(Tensor3 {
            clauses,
            labels,
            data,
        })
    }

    fn zip_with(&self, other: &Tensor3<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        let rows = self.data.len() / (self.clauses * self.labels).max(1);
        Tensor3::build(rows, self.clauses, self.labels, |i, j, a| {
            let k = self.index(i, j, a);
            f(self.data[k], other.data[k])
        })
    }

    #[inline]
    fn index(&self, i: usize, j: usize, a: usize) -> usize {
        (i * self.clauses + j) * self.labels + a
    }
}

fn check_shape<T>(cs: &ConstraintSet, p: &Matrix<T>) -> Result<()> {
    if p.cols() != cs.n_labels() {
        return Err(Error::ShapeMismatch(format!(
            "prediction matrix has {} columns, constraint set has {} labels",
            p.cols(),
            cs.n_labels()
        )));
    }
    Ok(())
}

/// Dense goal matrix. Label positions that do not occur in a clause are
/// skipped by the fold; the first occurring literal seeds it.
pub fn dense_goal<T: Float>(
    cs: &ConstraintSet,
    p: &PredictionMatrix<T>,
    kind: TNormKind,
) -> Result<GoalMatrix<T>> {
    check_shape(cs, p)?;
    let (rows, clauses, labels) = (p.rows(), cs.n_clauses(), cs.n_labels());
    let bit = |x: u8| if x == 1 { T::one() } else { T::zero() };

    let p_hat = Tensor3::build(rows, clauses, labels, |i, _, a| p.get(i, a))?;
    let c_plus_hat = Tensor3::build(rows, clauses, labels, |_, j, a| bit(cs.c_plus().get(j, a)))?;
    let c_minus_hat =
        Tensor3::build(rows, clauses, labels, |_, j, a| bit(cs.c_minus().get(j, a)))?;
    let mut literal = p_hat.zip_with(&c_plus_hat, |p, c| p * c)?;
    let negative = c_minus_hat.zip_with(&p_hat, |c, p| c - p * c)?;
    for (l, &n) in literal.data.iter_mut().zip(&negative.data) {
        *l = *l + n;
    }

    let mut goal = Matrix::zeros(rows, clauses);
    for i in 0..rows {
        for j in 0..clauses {
            let mut acc: Option<T> = None;
            for a in 0..labels {
                let k = literal.index(i, j, a);
                if c_plus_hat.data[k] == T::zero() && c_minus_hat.data[k] == T::zero() {
                    continue;
                }
                let v = literal.data[k];
                acc = Some(match acc {
                    None => v,
                    Some(g) => kind.tconorm(g, v),
                });
            }
            // Compiled clauses are never empty.
            goal.set(i, j, acc.unwrap_or_else(T::zero));
        }
    }
    Ok(goal)
}

/// `1 − mean(G)` over the dense goal matrix.
pub fn dense_loss<T: Float>(cs: &ConstraintSet, p: &PredictionMatrix<T>, kind: TNormKind) -> Result<T> {
    Ok(logic_loss(&dense_goal(cs, p, kind)?))
}
