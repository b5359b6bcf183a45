//! Clause sets over a label space.
//!
//! Labels come from a line-per-name map; clauses come from a DIMACS CNF body
//! where literal `k > 0` is label `k - 1` and `-k` its negation. A compiled
//! [`ConstraintSet`] keeps both the incidence matrices `C⁺`/`C⁻` (used by the
//! dense path) and the per-label occurrence lists `j⁺`/`j⁻` (used by the
//! sparse path).

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::EmptyLabels);
        }
        let mut seen = HashSet::new();
        for (line, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Parse {
                    line: line + 1,
                    msg: "empty label name".into(),
                });
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateLabel {
                    name: name.clone(),
                    line: line + 1,
                });
            }
        }
        Ok(LabelSpace { names })
    }

    /// Labels `L0, L1, ...`; handy for synthetic sets.
    pub fn numbered(count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| format!("L{i}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, label: usize) -> &str {
        &self.names[label]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Parses a label map: one name per line, or `index<TAB>name` with indices
/// running `0..n` in order. Blank lines are ignored.
pub fn parse_labels(text: &str) -> Result<LabelSpace> {
    let mut names = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let name = match line.split_once('\t') {
            Some((idx, name)) => {
                let found: usize = idx.trim().parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad label index `{idx}`"),
                })?;
                if found != names.len() {
                    return Err(Error::BadLabelIndex {
                        line: lineno + 1,
                        expected: names.len(),
                        found,
                    });
                }
                name.trim()
            }
            None => line.trim(),
        };
        if name.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "empty label name".into(),
            });
        }
        if !seen.insert(name.to_owned()) {
            return Err(Error::DuplicateLabel {
                name: name.to_owned(),
                line: lineno + 1,
            });
        }
        names.push(name.to_owned());
    }
    LabelSpace::new(names)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Literal {
    pub label: usize,
    pub negated: bool,
}

impl Literal {
    pub fn pos(label: usize) -> Self {
        Literal {
            label,
            negated: false,
        }
    }

    pub fn neg(label: usize) -> Self {
        Literal {
            label,
            negated: true,
        }
    }

    /// DIMACS encoding: `label + 1`, negative when negated.
    pub fn to_dimacs(self) -> i64 {
        let v = self.label as i64 + 1;
        if self.negated {
            -v
        } else {
            v
        }
    }
}

/// A disjunction of literals, each label occurring at most once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clause {
    literals: Vec<Literal>,
}

impl Clause {
    pub fn new(literals: Vec<Literal>) -> Result<Self> {
        Self::validated(literals, 0)
    }

    fn validated(literals: Vec<Literal>, line: usize) -> Result<Self> {
        if literals.is_empty() {
            return Err(Error::EmptyClause { line });
        }
        let mut seen = HashSet::with_capacity(literals.len());
        for lit in &literals {
            if !seen.insert(lit.label) {
                return Err(Error::DuplicateOccurrence {
                    line,
                    label: lit.label,
                });
            }
        }
        Ok(Clause { literals })
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn len(&self) -> usize {
        self.literals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    /// True when the Boolean assignment makes at least one literal true.
    pub fn is_satisfied_by(&self, assignment: &[bool]) -> bool {
        self.literals
            .iter()
            .any(|l| assignment[l.label] != l.negated)
    }

    fn check_range(&self, n_labels: usize, line: usize) -> Result<()> {
        match self.literals.iter().find(|l| l.label >= n_labels) {
            Some(l) => Err(Error::LabelOutOfRange {
                line,
                literal: l.to_dimacs(),
                n_labels,
            }),
            None => Ok(()),
        }
    }
}

/// Parses a DIMACS CNF body against `labels`.
///
/// Comment lines start with `c`; an optional `p cnf <labels> <clauses>`
/// header must agree with the label count and the number of clauses read.
/// Clauses are `0`-terminated and may span lines.
pub fn parse_clauses(text: &str, labels: &LabelSpace) -> Result<Vec<Clause>> {
    let n_labels = labels.len();
    let mut clauses = Vec::new();
    let mut header: Option<(usize, usize)> = None;
    let mut current = Vec::new();
    let mut clause_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        if line.starts_with('%') {
            break;
        }
        if let Some(rest) = line.strip_prefix('p') {
            if header.is_some() || !clauses.is_empty() || !current.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "header must precede all clauses and appear once".into(),
                });
            }
            let fields: Vec<&str> = rest.split_whitespace().collect();
            let parsed = match fields.as_slice() {
                ["cnf", v, c] => v.parse().ok().zip(c.parse().ok()),
                _ => None,
            };
            let (vars, count) = parsed.ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("malformed header `{line}`"),
            })?;
            if vars != n_labels {
                return Err(Error::HeaderMismatch {
                    what: "labels",
                    declared: vars,
                    found: n_labels,
                });
            }
            header = Some((vars, count));
            continue;
        }
        for tok in line.split_whitespace() {
            let lit: i64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("expected an integer literal, found `{tok}`"),
            })?;
            if current.is_empty() {
                clause_line = lineno;
            }
            if lit == 0 {
                let clause = Clause::validated(std::mem::take(&mut current), lineno)?;
                clauses.push(clause);
                continue;
            }
            let label = (lit.unsigned_abs() - 1) as usize;
            if label >= n_labels {
                return Err(Error::LabelOutOfRange {
                    line: lineno,
                    literal: lit,
                    n_labels,
                });
            }
            current.push(Literal {
                label,
                negated: lit < 0,
            });
        }
    }
    if !current.is_empty() {
        return Err(Error::Parse {
            line: clause_line,
            msg: "clause is not terminated by 0".into(),
        });
    }
    if let Some((_, count)) = header {
        if count != clauses.len() {
            return Err(Error::HeaderMismatch {
                what: "clauses",
                declared: count,
                found: clauses.len(),
            });
        }
    }
    Ok(clauses)
}

/// A compiled, immutable clause set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintSet {
    labels: LabelSpace,
    clauses: Vec<Clause>,
    c_plus: Matrix<u8>,
    c_minus: Matrix<u8>,
    j_plus: Vec<Vec<usize>>,
    j_minus: Vec<Vec<usize>>,
}

impl ConstraintSet {
    /// Builds the incidence matrices and occurrence lists. Clause order is
    /// preserved, so clause `i` of the input is constraint `i`.
    pub fn compile(labels: LabelSpace, clauses: Vec<Clause>) -> Result<Self> {
        let n_labels = labels.len();
        let n_clauses = clauses.len();
        let mut c_plus = Matrix::filled(n_clauses, n_labels, 0u8);
        let mut c_minus = Matrix::filled(n_clauses, n_labels, 0u8);
        let mut j_plus = vec![Vec::new(); n_labels];
        let mut j_minus = vec![Vec::new(); n_labels];
        for (i, clause) in clauses.iter().enumerate() {
            clause.check_range(n_labels, 0)?;
            for lit in clause.literals() {
                if lit.negated {
                    c_minus.set(i, lit.label, 1);
                    j_minus[lit.label].push(i);
                } else {
                    c_plus.set(i, lit.label, 1);
                    j_plus[lit.label].push(i);
                }
            }
        }
        Ok(ConstraintSet {
            labels,
            clauses,
            c_plus,
            c_minus,
            j_plus,
            j_minus,
        })
    }

    /// Parses a label map and a DIMACS body and compiles them.
    pub fn from_texts(labels: &str, cnf: &str) -> Result<Self> {
        let labels = parse_labels(labels)?;
        let clauses = parse_clauses(cnf, &labels)?;
        Self::compile(labels, clauses)
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn n_clauses(&self) -> usize {
        self.clauses.len()
    }

    pub fn c_plus(&self) -> &Matrix<u8> {
        &self.c_plus
    }

    pub fn c_minus(&self) -> &Matrix<u8> {
        &self.c_minus
    }

    /// Ascending indices of the clauses where `label` occurs positively.
    pub fn j_plus(&self, label: usize) -> &[usize] {
        &self.j_plus[label]
    }

    /// Ascending indices of the clauses where `label` occurs negatively.
    pub fn j_minus(&self, label: usize) -> &[usize] {
        &self.j_minus[label]
    }

    /// Keeps the first `n` clauses.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let n = n.min(self.n_clauses());
        Self::compile(self.labels.clone(), self.clauses[..n].to_vec())
    }

    /// True when the Boolean assignment satisfies every clause.
    pub fn is_satisfied_by(&self, assignment: &[bool]) -> bool {
        self.clauses.iter().all(|c| c.is_satisfied_by(assignment))
    }

    /// Writes the set back out as DIMACS CNF with a `p cnf` header.
    pub fn to_dimacs(&self) -> String {
        let mut out = format!("p cnf {} {}\n", self.n_labels(), self.n_clauses());
        for clause in &self.clauses {
            for lit in clause.literals() {
                let _ = write!(out, "{} ", lit.to_dimacs());
            }
            out.push_str("0\n");
        }
        out
    }

    pub fn labels_text(&self) -> String {
        let mut out = String::new();
        for name in self.labels.names() {
            out.push_str(name);
            out.push('\n');
        }
        out
    }

    pub fn stats(&self) -> ConstraintStats {
        let literals: usize = self.clauses.iter().map(Clause::len).sum();
        let cells = self.n_clauses() * self.n_labels();
        let fan_out = (0..self.n_labels())
            .map(|a| self.j_plus[a].len() + self.j_minus[a].len())
            .collect();
        let mut seen = HashSet::new();
        let duplicate_clauses = self
            .clauses
            .iter()
            .filter(|c| {
                let mut key: Vec<i64> = c.literals().iter().map(|l| l.to_dimacs()).collect();
                key.sort_unstable();
                !seen.insert(key)
            })
            .count();
        ConstraintStats {
            constraints: self.n_clauses(),
            labels: self.n_labels(),
            literals,
            max_len: self.clauses.iter().map(Clause::len).max().unwrap_or(0),
            fan_out,
            density: if cells == 0 {
                0.0
            } else {
                literals as f64 / cells as f64
            },
            duplicate_clauses,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintStats {
    pub constraints: usize,
    pub labels: usize,
    pub literals: usize,
    pub max_len: usize,
    /// `|j⁺_A| + |j⁻_A|` per label.
    pub fan_out: Vec<usize>,
    /// `literals / (constraints * labels)`, 0 for an empty set.
    pub density: f64,
    /// Clauses that repeat an earlier clause up to literal order.
    pub duplicate_clauses: usize,
}
