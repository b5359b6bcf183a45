//! Memory-efficient goal matrix.
//!
//! `G` starts as the disjunction identity (all zeros). Labels are visited in
//! ascending order and each label's prediction column is folded into only
//! the columns of `G` listed in its occurrence sequences `j⁺`/`j⁻`:
//!
//! | t-norm      | update on `j⁺` (value `p`)   | update on `j⁻`               |
//! |-------------|------------------------------|------------------------------|
//! | Gödel       | `max(g, p)`                  | `max(g, 1 − p)`              |
//! | Łukasiewicz | `min(g + p, 1)`              | `min(g + 1 − p, 1)`          |
//! | Product     | `1 − (1 − g)(1 − p)`         | `1 − (1 − g) p`              |
//!
//! Nothing larger than `D × |Π|` is ever allocated.

use num_traits::Float;
use rayon::prelude::*;

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::grad;
use crate::matrix::{GoalMatrix, GradMatrix, Matrix, PredictionMatrix};
use crate::tnorm::TNormKind;

/// Label visiting order over a constraint set's occurrence sequences.
#[derive(Clone, Debug)]
pub struct SparsePlan<'a> {
    cs: &'a ConstraintSet,
    order: Vec<usize>,
}

impl<'a> SparsePlan<'a> {
    pub fn new(cs: &'a ConstraintSet) -> Self {
        SparsePlan {
            cs,
            order: (0..cs.n_labels()).collect(),
        }
    }

    /// A plan visiting labels in a custom order; `order` must be a
    /// permutation of `0..n_labels`.
    pub fn with_label_order(cs: &'a ConstraintSet, order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; cs.n_labels()];
        for &a in &order {
            if a >= seen.len() || std::mem::replace(&mut seen[a], true) {
                return Err(Error::InvalidArgument(
                    "label order is not a permutation".into(),
                ));
            }
        }
        if order.len() != cs.n_labels() {
            return Err(Error::InvalidArgument(
                "label order is not a permutation".into(),
            ));
        }
        Ok(SparsePlan { cs, order })
    }

    pub fn constraints(&self) -> &ConstraintSet {
        self.cs
    }

    pub fn label_order(&self) -> &[usize] {
        &self.order
    }

    fn check<T>(&self, p: &Matrix<T>, goal: Option<&Matrix<T>>) -> Result<()> {
        if p.cols() != self.cs.n_labels() {
            return Err(Error::ShapeMismatch(format!(
                "prediction matrix has {} columns, constraint set has {} labels",
                p.cols(),
                self.cs.n_labels()
            )));
        }
        if let Some(g) = goal {
            if g.shape() != (p.rows(), self.cs.n_clauses()) {
                return Err(Error::ShapeMismatch(format!(
                    "goal matrix is {:?}, expected {:?}",
                    g.shape(),
                    (p.rows(), self.cs.n_clauses())
                )));
            }
        }
        Ok(())
    }

    /// Folds one label's column into the goal matrix in place.
    pub fn apply_label<T: Float>(
        &self,
        label: usize,
        p: &PredictionMatrix<T>,
        kind: TNormKind,
        goal: &mut GoalMatrix<T>,
    ) -> Result<()> {
        self.check(p, Some(goal))?;
        if label >= self.cs.n_labels() {
            return Err(Error::InvalidArgument(format!("label {label} out of range")));
        }
        let width = goal.cols();
        update_rows(self.cs, label, p, kind, goal.as_mut_slice(), 0, width);
        Ok(())
    }

    pub fn goal<T: Float>(&self, p: &PredictionMatrix<T>, kind: TNormKind) -> Result<GoalMatrix<T>> {
        self.check(p, None)?;
        let mut goal = Matrix::zeros(p.rows(), self.cs.n_clauses());
        self.fold_rows(p, kind, goal.as_mut_slice(), 0);
        Ok(goal)
    }

    /// Row-parallel variant. Each worker runs the same label sequence on its
    /// own block of rows, so the result is bit-identical to [`Self::goal`].
    pub fn goal_par<T: Float + Send + Sync>(
        &self,
        p: &PredictionMatrix<T>,
        kind: TNormKind,
        rows_per_task: usize,
    ) -> Result<GoalMatrix<T>> {
        self.check(p, None)?;
        let width = self.cs.n_clauses();
        let mut goal = Matrix::zeros(p.rows(), width);
        if width == 0 {
            return Ok(goal);
        }
        let rows_per_task = rows_per_task.max(1);
        goal.as_mut_slice()
            .par_chunks_mut(rows_per_task * width)
            .enumerate()
            .for_each(|(chunk, block)| self.fold_rows(p, kind, block, chunk * rows_per_task));
        Ok(goal)
    }

    fn fold_rows<T: Float>(&self, p: &Matrix<T>, kind: TNormKind, block: &mut [T], first_row: usize) {
        let width = self.cs.n_clauses();
        for &label in &self.order {
            update_rows(self.cs, label, p, kind, block, first_row, width);
        }
    }
}

/// Applies one label's Table-1 style update to the rows held in `block`,
/// which starts at prediction row `first_row`.
fn update_rows<T: Float>(
    cs: &ConstraintSet,
    label: usize,
    p: &Matrix<T>,
    kind: TNormKind,
    block: &mut [T],
    first_row: usize,
    width: usize,
) {
    let pos = cs.j_plus(label);
    let neg = cs.j_minus(label);
    if width == 0 || (pos.is_empty() && neg.is_empty()) {
        return;
    }
    let one = T::one();
    for (r, g_row) in block.chunks_exact_mut(width).enumerate() {
        let v = p.get(first_row + r, label);
        match kind {
            TNormKind::Godel => {
                let nv = one - v;
                for &j in pos {
                    g_row[j] = g_row[j].max(v);
                }
                for &j in neg {
                    g_row[j] = g_row[j].max(nv);
                }
            }
            TNormKind::Lukasiewicz => {
                let nv = one - v;
                for &j in pos {
                    g_row[j] = (g_row[j] + v).min(one);
                }
                for &j in neg {
                    g_row[j] = (g_row[j] + nv).min(one);
                }
            }
            TNormKind::Product => {
                let keep = one - v;
                for &j in pos {
                    g_row[j] = one - (one - g_row[j]) * keep;
                }
                for &j in neg {
                    g_row[j] = one - (one - g_row[j]) * v;
                }
            }
        }
    }
}

/// `1 − (1/D)(1/|Π|) Σ G`, accumulated in compensated double precision.
/// A goal matrix without cells has nothing to violate and yields 0.
pub fn logic_loss<T: Float>(goal: &GoalMatrix<T>) -> T {
    let cells = goal.as_slice().len();
    if cells == 0 {
        return T::zero();
    }
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &g in goal.as_slice() {
        let x = g.to_f64().unwrap_or(f64::NAN);
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    T::from(1.0 - (sum + comp) / cells as f64).unwrap()
}

pub fn sparse_goal<T: Float>(cs: &ConstraintSet, p: &PredictionMatrix<T>, kind: TNormKind) -> Result<GoalMatrix<T>> {
    SparsePlan::new(cs).goal(p, kind)
}

pub fn sparse_goal_par<T: Float + Send + Sync>(
    cs: &ConstraintSet,
    p: &PredictionMatrix<T>,
    kind: TNormKind,
    rows_per_task: usize,
) -> Result<GoalMatrix<T>> {
    SparsePlan::new(cs).goal_par(p, kind, rows_per_task)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossResult<T = f32> {
    pub loss: T,
    pub goal: Option<GoalMatrix<T>>,
    pub grad: Option<GradMatrix<T>>,
}

/// Loss through the sparse path; with `want_grad` the gradient with respect
/// to `P` is attached as well.
pub fn sparse_loss<T: Float>(
    cs: &ConstraintSet,
    p: &PredictionMatrix<T>,
    kind: TNormKind,
    want_grad: bool,
) -> Result<LossResult<T>> {
    let goal = sparse_goal(cs, p, kind)?;
    let loss = logic_loss(&goal);
    let grad = if want_grad {
        Some(grad::grad_matrix(cs, p, kind)?)
    } else {
        None
    };
    Ok(LossResult {
        loss,
        goal: Some(goal),
        grad,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss<T = f32> {
    /// Per-frame results. Losses are the frames' own; gradients are those of
    /// the batch mean, i.e. each frame's gradient divided by the batch size.
    pub frames: Vec<LossResult<T>>,
    pub mean_loss: T,
}

pub fn sparse_loss_batch<T: Float>(
    cs: &ConstraintSet,
    batch: &[PredictionMatrix<T>],
    kind: TNormKind,
    want_grad: bool,
) -> Result<BatchLoss<T>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some((k, m)) = batch.iter().enumerate().find(|(_, m)| m.cols() != cs.n_labels()) {
        return Err(Error::ShapeMismatch(format!(
            "frame {k} has {} columns, constraint set has {} labels",
            m.cols(),
            cs.n_labels()
        )));
    }
    let scale = T::one() / T::from(batch.len()).unwrap();
    let mut frames = Vec::with_capacity(batch.len());
    let mut total = 0.0f64;
    for p in batch {
        let mut r = sparse_loss(cs, p, kind, want_grad)?;
        total += r.loss.to_f64().unwrap();
        if let Some(g) = r.grad.as_mut() {
            g.scale(scale);
        }
        frames.push(r);
    }
    Ok(BatchLoss {
        frames,
        mean_loss: T::from(total / batch.len() as f64).unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> (ConstraintSet, Matrix<f32>) {
        let cs = ConstraintSet::from_texts("Car\nMoving\nStopped", "-2 1 0\n-2 -3 0").unwrap();
        let p = Matrix::from_rows(&[[0.1f32, 0.7, 0.3], [0.9, 0.9, 0.2], [0.4, 0.9, 0.9]]).unwrap();
        (cs, p)
    }

    fn assert_close(g: &Matrix<f32>, want: &[[f32; 2]; 3]) {
        for i in 0..3 {
            for j in 0..2 {
                assert!((g.get(i, j) - want[i][j]).abs() <= 1e-7, "({i},{j}) = {}", g.get(i, j));
            }
        }
    }

    #[test]
    fn example_steps_godel() {
        let (cs, p) = example();
        let plan = SparsePlan::new(&cs);
        let mut g = Matrix::zeros(3, 2);
        plan.apply_label(0, &p, TNormKind::Godel, &mut g).unwrap();
        assert_close(&g, &[[0.1, 0.0], [0.9, 0.0], [0.4, 0.0]]);
        plan.apply_label(1, &p, TNormKind::Godel, &mut g).unwrap();
        assert_close(&g, &[[0.3, 0.3], [0.9, 0.1], [0.4, 0.1]]);
        plan.apply_label(2, &p, TNormKind::Godel, &mut g).unwrap();
        assert_close(&g, &[[0.3, 0.7], [0.9, 0.8], [0.4, 0.1]]);
        assert_eq!(g, sparse_goal(&cs, &p, TNormKind::Godel).unwrap());
    }

    #[test]
    fn example_loss() {
        let (cs, p) = example();
        let r = sparse_loss(&cs, &p, TNormKind::Godel, false).unwrap();
        assert!((r.loss - 0.466_666_7).abs() < 1e-6);
        assert!(r.grad.is_none());
        assert_eq!(r.loss, logic_loss(r.goal.as_ref().unwrap()));
    }

    #[test]
    fn empty_constraint_set() {
        let cs = ConstraintSet::from_texts("A\nB", "").unwrap();
        let p = Matrix::filled(4, 2, 0.3f32);
        let r = sparse_loss(&cs, &p, TNormKind::Product, true).unwrap();
        assert_eq!(r.goal.as_ref().unwrap().shape(), (4, 0));
        assert_eq!(r.loss, 0.0);
        assert!(r.grad.unwrap().as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn satisfied_and_violated() {
        let cs = ConstraintSet::from_texts("A\nB\nC", "1 2 0\n3 0\n2 -1 0").unwrap();
        let sat = Matrix::filled(5, 3, 1.0f32);
        let zeros = Matrix::filled(5, 3, 0.0f32);
        for kind in TNormKind::ALL {
            assert_eq!(sparse_loss(&cs, &sat, kind, false).unwrap().loss, 0.0);
        }
        let pos_only = ConstraintSet::from_texts("A\nB\nC", "1 2 0\n3 0").unwrap();
        for kind in TNormKind::ALL {
            assert_eq!(sparse_loss(&pos_only, &zeros, kind, false).unwrap().loss, 1.0);
        }
    }

    #[test]
    fn unused_label_is_a_no_op() {
        let cs = ConstraintSet::from_texts("A\nB\nC", "1 -3 0").unwrap();
        let p = Matrix::from_rows(&[[0.2f32, 0.9, 0.6]]).unwrap();
        let plan = SparsePlan::new(&cs);
        let mut g = Matrix::from_rows(&[[0.35f32]]).unwrap();
        let before = g.clone();
        plan.apply_label(1, &p, TNormKind::Product, &mut g).unwrap();
        assert_eq!(g, before);
    }

    #[test]
    fn plan_validation() {
        let (cs, p) = example();
        assert!(SparsePlan::with_label_order(&cs, vec![0, 1]).is_err());
        assert!(SparsePlan::with_label_order(&cs, vec![0, 0, 1]).is_err());
        assert!(SparsePlan::with_label_order(&cs, vec![0, 1, 3]).is_err());
        let plan = SparsePlan::with_label_order(&cs, vec![2, 0, 1]).unwrap();
        assert_eq!(plan.goal(&p, TNormKind::Godel).unwrap(), sparse_goal(&cs, &p, TNormKind::Godel).unwrap());
        let mut bad = Matrix::zeros(2, 2);
        assert!(plan.apply_label(0, &p, TNormKind::Godel, &mut bad).is_err());
        let wide = Matrix::filled(3, 4, 0.5f32);
        assert!(sparse_goal(&cs, &wide, TNormKind::Godel).is_err());
    }

    #[test]
    fn parallel_is_bit_identical() {
        let (cs, _) = example();
        let p = Matrix::from_fn(37, 3, |i, j| ((i * 13 + j * 7) % 17) as f32 / 16.0);
        for kind in TNormKind::ALL {
            let seq = sparse_goal(&cs, &p, kind).unwrap();
            for rows in [1, 4, 10, 64] {
                assert_eq!(sparse_goal_par(&cs, &p, kind, rows).unwrap(), seq);
            }
        }
    }

    #[test]
    fn batch() {
        let (cs, p) = example();
        let q = Matrix::from_fn(3, 3, |i, j| ((i + 2 * j) % 5) as f32 / 4.0);
        for kind in TNormKind::ALL {
            let single = sparse_loss(&cs, &p, kind, true).unwrap();
            let one = sparse_loss_batch(&cs, std::slice::from_ref(&p), kind, true).unwrap();
            assert_eq!(one.frames[0], single);
            assert_eq!(one.mean_loss, single.loss);

            let copies = sparse_loss_batch(&cs, &[p.clone(), p.clone(), p.clone()], kind, false).unwrap();
            assert!((copies.mean_loss - single.loss).abs() < 1e-7);

            let two = sparse_loss_batch(&cs, &[p.clone(), q.clone()], kind, true).unwrap();
            let lq = sparse_loss(&cs, &q, kind, true).unwrap();
            assert!((two.mean_loss - (single.loss + lq.loss) / 2.0).abs() < 1e-7);
            let mut half = lq.grad.unwrap();
            half.scale(0.5);
            assert_eq!(two.frames[1].grad.as_ref().unwrap(), &half);
        }
        assert!(sparse_loss_batch::<f32>(&cs, &[], TNormKind::Godel, false).is_err());
        let bad = Matrix::filled(2, 5, 0.1f32);
        assert!(matches!(
            sparse_loss_batch(&cs, &[p, bad], TNormKind::Godel, false),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
