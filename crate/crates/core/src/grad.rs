//! Reverse-mode gradient of the logic loss with respect to `P`, plus a
//! central finite-difference checker.
//!
//! Every cell of `G` receives `∂L/∂G = −1/(D·|Π|)`. Within a clause with
//! literal values `v_l` and signs `s_l` (+1 positive, −1 negated):
//!
//! * Product: `∂G/∂P_A = s_A · Π_{l≠A} (1 − v_l)`, from prefix/suffix products.
//! * Łukasiewicz: `∂G/∂P_A = s_A` while `Σ v < 1`, else 0 (the clamp at the
//!   boundary counts as active).
//! * Gödel: `s_A` for the single argmax literal, ties going to the lowest
//!   label index, 0 elsewhere.
//!
//! Rows are processed independently with `O(|A| + max clause length)`
//! scratch, so no `D × |Π| × |A|` tensor is formed. Accumulation happens in
//! double precision whatever the element type.

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{Clause, ConstraintSet};
use crate::error::{Error, Result};
use crate::matrix::{GradMatrix, Matrix, PredictionMatrix};
use crate::sparse::{logic_loss, sparse_goal};
use crate::tnorm::TNormKind;

/// Default distance from a Gödel tie or Łukasiewicz boundary below which a
/// coordinate is excluded from finite-difference comparison.
pub const DEFAULT_NONSMOOTH_MARGIN: f64 = 1e-3;
pub const DEFAULT_STEP: f64 = 1e-4;
/// Magnitude floor in the relative error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

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

struct Scratch {
    acc: Vec<f64>,
    values: Vec<f64>,
    prefix: Vec<f64>,
}

impl Scratch {
    fn new(cs: &ConstraintSet) -> Self {
        let max_len = cs.clauses().iter().map(Clause::len).max().unwrap_or(0);
        Scratch {
            acc: vec![0.0; cs.n_labels()],
            values: Vec::with_capacity(max_len),
            prefix: Vec::with_capacity(max_len + 1),
        }
    }
}

fn literal_values<T: Float>(clause: &Clause, p_row: &[T], out: &mut Vec<f64>) {
    out.clear();
    out.extend(clause.literals().iter().map(|l| {
        let x = p_row[l.label].to_f64().unwrap_or(f64::NAN);
        if l.negated {
            1.0 - x
        } else {
            x
        }
    }));
}

/// Adds `scale · ∂G_j/∂P_A` for every literal of one clause into `acc`.
fn clause_backward(kind: TNormKind, clause: &Clause, scale: f64, s: &mut Scratch) {
    let lits = clause.literals();
    let sign = |k: usize| if lits[k].negated { -1.0 } else { 1.0 };
    match kind {
        TNormKind::Product => {
            s.prefix.clear();
            s.prefix.push(1.0);
            for &v in &s.values {
                let last = *s.prefix.last().unwrap();
                s.prefix.push(last * (1.0 - v));
            }
            let mut suffix = 1.0;
            for k in (0..lits.len()).rev() {
                s.acc[lits[k].label] += scale * sign(k) * s.prefix[k] * suffix;
                suffix *= 1.0 - s.values[k];
            }
        }
        TNormKind::Lukasiewicz => {
            let sum: f64 = s.values.iter().sum();
            if sum < 1.0 {
                for k in 0..lits.len() {
                    s.acc[lits[k].label] += scale * sign(k);
                }
            }
        }
        TNormKind::Godel => {
            let mut best = 0;
            for k in 1..lits.len() {
                let (v, b) = (s.values[k], s.values[best]);
                if v > b || (v == b && lits[k].label < lits[best].label) {
                    best = k;
                }
            }
            s.acc[lits[best].label] += scale * sign(best);
        }
    }
}

fn backward_rows<T: Float>(
    cs: &ConstraintSet,
    p: &Matrix<T>,
    kind: TNormKind,
    scale: f64,
    block: &mut [T],
    first_row: usize,
) {
    let width = cs.n_labels();
    if width == 0 {
        return;
    }
    let mut s = Scratch::new(cs);
    for (r, out) in block.chunks_exact_mut(width).enumerate() {
        let p_row = p.row(first_row + r);
        s.acc.iter_mut().for_each(|x| *x = 0.0);
        for clause in cs.clauses() {
            literal_values(clause, p_row, &mut s.values);
            clause_backward(kind, clause, scale, &mut s);
        }
        for (o, &a) in out.iter_mut().zip(&s.acc) {
            *o = T::from(a).unwrap();
        }
    }
}

fn upstream_scale(rows: usize, clauses: usize) -> f64 {
    if rows == 0 || clauses == 0 {
        0.0
    } else {
        -1.0 / (rows as f64 * clauses as f64)
    }
}

/// `∂L/∂P` without the forward loss.
pub fn grad_matrix<T: Float>(cs: &ConstraintSet, p: &PredictionMatrix<T>, kind: TNormKind) -> Result<GradMatrix<T>> {
    check_shape(cs, p)?;
    let mut grad = Matrix::zeros(p.rows(), cs.n_labels());
    let scale = upstream_scale(p.rows(), cs.n_clauses());
    backward_rows(cs, p, kind, scale, grad.as_mut_slice(), 0);
    Ok(grad)
}

/// Loss and `∂L/∂P`.
pub fn loss_grad<T: Float>(cs: &ConstraintSet, p: &PredictionMatrix<T>, kind: TNormKind) -> Result<(T, GradMatrix<T>)> {
    let loss = logic_loss(&sparse_goal(cs, p, kind)?);
    Ok((loss, grad_matrix(cs, p, kind)?))
}

/// Row-parallel gradient; bit-identical to [`grad_matrix`].
pub fn grad_matrix_par<T: Float + Send + Sync>(
    cs: &ConstraintSet,
    p: &PredictionMatrix<T>,
    kind: TNormKind,
    rows_per_task: usize,
) -> Result<GradMatrix<T>> {
    check_shape(cs, p)?;
    let width = cs.n_labels();
    let mut grad = Matrix::zeros(p.rows(), width);
    let scale = upstream_scale(p.rows(), cs.n_clauses());
    let rows_per_task = rows_per_task.max(1);
    grad.as_mut_slice()
        .par_chunks_mut(rows_per_task * width)
        .enumerate()
        .for_each(|(chunk, block)| backward_rows(cs, p, kind, scale, block, chunk * rows_per_task));
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub num_skipped_nonsmooth: usize,
    pub num_checked: usize,
    pub step_size: f64,
}

/// True when nudging `P[row][label]` can cross a kink: a Gödel argmax tie
/// or a Łukasiewicz `Σ v = 1` boundary within `margin`.
fn near_kink(cs: &ConstraintSet, kind: TNormKind, p_row: &[f64], label: usize, margin: f64) -> bool {
    let clauses = cs.j_plus(label).iter().chain(cs.j_minus(label));
    let mut values = Vec::new();
    for &j in clauses {
        let clause = &cs.clauses()[j];
        literal_values(clause, p_row, &mut values);
        match kind {
            TNormKind::Product => {}
            TNormKind::Lukasiewicz => {
                if (values.iter().sum::<f64>() - 1.0).abs() < margin {
                    return true;
                }
            }
            TNormKind::Godel => {
                let k = clause.literals().iter().position(|l| l.label == label).unwrap();
                let rival = values
                    .iter()
                    .enumerate()
                    .filter(|&(m, _)| m != k)
                    .map(|(_, &v)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                if (values[k] - rival).abs() < margin {
                    return true;
                }
            }
        }
    }
    false
}

/// Compares [`grad_matrix`] against `(L(p + h e) − L(p − h e)) / 2h` on every
/// coordinate of `p`, skipping coordinates near a non-smooth point.
pub fn finite_diff_check(
    cs: &ConstraintSet,
    p: &PredictionMatrix<f64>,
    kind: TNormKind,
    step: f64,
    nonsmooth_margin: f64,
) -> Result<FdReport> {
    check_shape(cs, p)?;
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::InvalidArgument(format!("step {step} outside (0, 1e-2]")));
    }
    if !(nonsmooth_margin >= 0.0) {
        return Err(Error::InvalidArgument("negative non-smooth margin".into()));
    }
    if let Some(&x) = p.as_slice().iter().find(|&&x| !(x >= step && x <= 1.0 - step)) {
        return Err(Error::Domain {
            value: x,
            context: format!("finite differences need entries in [{step}, {}]", 1.0 - step),
        });
    }
    let analytic = grad_matrix(cs, p, kind)?;
    let loss = |q: &Matrix<f64>| -> Result<f64> { Ok(logic_loss(&sparse_goal(cs, q, kind)?)) };

    let mut report = FdReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        num_skipped_nonsmooth: 0,
        num_checked: 0,
        step_size: step,
    };
    let mut probe = p.clone();
    for i in 0..p.rows() {
        for a in 0..p.cols() {
            if near_kink(cs, kind, p.row(i), a, nonsmooth_margin) {
                report.num_skipped_nonsmooth += 1;
                continue;
            }
            let x = p.get(i, a);
            probe.set(i, a, x + step);
            let up = loss(&probe)?;
            probe.set(i, a, x - step);
            let down = loss(&probe)?;
            probe.set(i, a, x);
            let numeric = (up - down) / (2.0 * step);
            let exact = analytic.get(i, a);
            let abs = (numeric - exact).abs();
            let rel = abs / exact.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.num_checked += 1;
        }
    }
    Ok(report)
}
