//! Seeded random constraint sets and prediction matrices.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::constraints::{Clause, ConstraintSet, LabelSpace, Literal};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// The longest constraint in the benchmark family spans this many labels.
pub const MAX_BENCH_CLAUSE_LEN: usize = 15;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One clause: `len` distinct labels, each negated with probability 1/2.
/// Sampling labels without replacement rules out tautologies.
pub fn random_clause<R: Rng>(rng: &mut R, n_labels: usize, len: usize) -> Clause {
    let lits = sample(rng, n_labels, len.min(n_labels))
        .into_iter()
        .map(|label| Literal {
            label,
            negated: rng.gen_bool(0.5),
        })
        .collect();
    Clause::new(lits).expect("distinct labels, non-empty")
}

/// `n_clauses` clauses with lengths uniform in `min_len..=max_len`
/// (clipped to the label count).
pub fn random_constraint_set<R: Rng>(
    rng: &mut R,
    n_labels: usize,
    n_clauses: usize,
    min_len: usize,
    max_len: usize,
) -> Result<ConstraintSet> {
    if n_labels == 0 || min_len == 0 || min_len > max_len {
        return Err(Error::InvalidArgument(format!(
            "cannot draw clauses of length {min_len}..={max_len} over {n_labels} labels"
        )));
    }
    let hi = max_len.min(n_labels);
    let lo = min_len.min(hi);
    let clauses = (0..n_clauses)
        .map(|_| {
            let len = rng.gen_range(lo..=hi);
            random_clause(rng, n_labels, len)
        })
        .collect();
    ConstraintSet::compile(LabelSpace::numbered(n_labels)?, clauses)
}

/// The benchmark family: clause lengths 2..=15, so smaller sets are
/// prefixes of larger ones (see [`ConstraintSet::truncated`]).
pub fn bench_family(seed: u64, n_labels: usize, max_constraints: usize) -> Result<ConstraintSet> {
    random_constraint_set(&mut rng(seed), n_labels, max_constraints, 2, MAX_BENCH_CLAUSE_LEN)
}

pub fn random_predictions<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.gen::<f64>())
}

/// A random oracle-check instance: `1..=max_rows` rows, `1..=max_labels`
/// labels, `1..=max_constraints` clauses with lengths `1..=|A|`.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    max_rows: usize,
    max_labels: usize,
    max_constraints: usize,
) -> Result<(ConstraintSet, Matrix<f64>)> {
    if max_rows == 0 || max_labels == 0 || max_constraints == 0 {
        return Err(Error::InvalidArgument("instance bounds must be positive".into()));
    }
    let rows = rng.gen_range(1..=max_rows);
    let labels = rng.gen_range(1..=max_labels);
    let clauses = rng.gen_range(1..=max_constraints);
    let cs = random_constraint_set(rng, labels, clauses, 1, labels)?;
    let p = random_predictions(rng, rows, labels);
    Ok((cs, p))
}
