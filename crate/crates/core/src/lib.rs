//! Differentiable t-norm constraint losses over batched prediction matrices.
//!
//! A set of clauses over a label space is compiled once into a
//! [`ConstraintSet`]. For a prediction matrix `P` (one row per output, one
//! column per label) the goal matrix `G` holds the relaxed truth degree of
//! every clause on every row, and the loss is `1 − mean(G)`.
//!
//! Two routes compute `G`:
//!
//! * [`sparse`] folds each label's column into the clause columns where the
//!   label occurs. Memory is `O(D·|Π|)`.
//! * [`dense`] materializes the `D × |Π| × |A|` stacked tensors. It exists
//!   as an oracle and as the memory baseline.
//!
//! ```
//! use tnorm_loss::{sparse_loss, ConstraintSet, Matrix, TNormKind};
//!
//! let cs = ConstraintSet::from_texts("Car\nMoving\nStopped", "-2 1 0\n-2 -3 0")?;
//! let p = Matrix::from_rows(&[[0.1f32, 0.7, 0.3], [0.9, 0.9, 0.2], [0.4, 0.9, 0.9]])?;
//! let r = sparse_loss(&cs, &p, TNormKind::Godel, true)?;
//! assert!((r.loss - 0.466_667).abs() < 1e-5);
//! # Ok::<(), tnorm_loss::Error>(())
//! ```

pub mod constraints;
pub mod dense;
mod error;
pub mod grad;
pub mod io;
pub mod matrix;
pub mod memory;
pub mod sparse;
pub mod synth;
pub mod tnorm;
pub mod trainer;

pub use constraints::{parse_clauses, parse_labels, Clause, ConstraintSet, ConstraintStats, LabelSpace, Literal};
pub use dense::{dense_goal, dense_loss, dense_peak_bytes, DenseFootprint};
pub use error::{Error, Result};
pub use grad::{finite_diff_check, grad_matrix, loss_grad, FdReport};
pub use matrix::{GoalMatrix, GradMatrix, Matrix, PredictionMatrix};
pub use sparse::{logic_loss, sparse_goal, sparse_loss, sparse_loss_batch, BatchLoss, LossResult, SparsePlan};
pub use tnorm::{neg, DomainMode, TNormKind, UnitValue};

// The guide's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/constraints.md")]
    mod constraints {}
    #[doc = include_str!("../../../book/src/tnorms.md")]
    mod tnorms {}
    #[doc = include_str!("../../../book/src/dense.md")]
    mod dense {}
    #[doc = include_str!("../../../book/src/sparse.md")]
    mod sparse {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
