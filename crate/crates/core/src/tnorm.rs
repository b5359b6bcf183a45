//! T-norms, their dual t-conorms and strong negation.
//!
//! All operators are generic over [`Float`] so the batch kernels can run in
//! single precision while the property tests check the algebra in double.

use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TNormKind {
    /// `min(a, b)`, dual `max(a, b)`.
    Godel,
    /// `max(a + b - 1, 0)`, dual `min(a + b, 1)`.
    Lukasiewicz,
    /// `a * b`, dual `1 - (1 - a)(1 - b)`.
    Product,
}

impl TNormKind {
    pub const ALL: [TNormKind; 3] = [TNormKind::Godel, TNormKind::Lukasiewicz, TNormKind::Product];

    pub fn name(self) -> &'static str {
        match self {
            TNormKind::Godel => "godel",
            TNormKind::Lukasiewicz => "lukasiewicz",
            TNormKind::Product => "product",
        }
    }

    #[inline]
    pub fn tnorm<T: Float>(self, a: T, b: T) -> T {
        match self {
            TNormKind::Godel => a.min(b),
            TNormKind::Lukasiewicz => (a + b - T::one()).max(T::zero()),
            TNormKind::Product => a * b,
        }
    }

    #[inline]
    pub fn tconorm<T: Float>(self, a: T, b: T) -> T {
        match self {
            TNormKind::Godel => a.max(b),
            TNormKind::Lukasiewicz => (a + b).min(T::one()),
            // Algebraically 1 − (1 − a)(1 − b); this form keeps S(a, 0) = a exact.
            TNormKind::Product => (a + b * (T::one() - a)).min(T::one()),
        }
    }

    /// Left fold of the t-conorm in slice order. A disjunction over no
    /// literals has no value, so an empty slice is an error.
    pub fn tconorm_fold<T: Float>(self, values: &[T]) -> Result<T> {
        let (&first, rest) = values.split_first().ok_or(Error::EmptyFold)?;
        Ok(rest.iter().fold(first, |acc, &v| self.tconorm(acc, v)))
    }
}

/// Strong negation.
#[inline]
pub fn neg<T: Float>(a: T) -> T {
    T::one() - a
}

impl fmt::Display for TNormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TNormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "godel" | "gödel" | "min" => Ok(TNormKind::Godel),
            "lukasiewicz" | "łukasiewicz" => Ok(TNormKind::Lukasiewicz),
            "product" | "prod" => Ok(TNormKind::Product),
            other => Err(Error::InvalidArgument(format!(
                "unknown t-norm `{other}` (expected godel, lukasiewicz or product)"
            ))),
        }
    }
}

/// How values outside `[0, 1]` are treated on entry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DomainMode {
    #[default]
    Strict,
    /// Clamp finite values onto the interval; sigmoid outputs can drift a
    /// ulp outside it.
    Clamp,
}

/// A truth degree in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct UnitValue(f64);

impl UnitValue {
    pub const ZERO: UnitValue = UnitValue(0.0);
    pub const ONE: UnitValue = UnitValue(1.0);

    pub fn new(value: f64, mode: DomainMode) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            return Ok(UnitValue(value));
        }
        match mode {
            DomainMode::Clamp if value.is_finite() => Ok(UnitValue(value.clamp(0.0, 1.0))),
            _ => Err(Error::Domain {
                value,
                context: "scalar operand".into(),
            }),
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn and(self, other: UnitValue, kind: TNormKind) -> UnitValue {
        UnitValue(kind.tnorm(self.0, other.0))
    }

    pub fn or(self, other: UnitValue, kind: TNormKind) -> UnitValue {
        UnitValue(kind.tconorm(self.0, other.0))
    }

    pub fn not(self) -> UnitValue {
        UnitValue(neg(self.0))
    }
}

impl TryFrom<f64> for UnitValue {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        UnitValue::new(value, DomainMode::Strict)
    }
}
