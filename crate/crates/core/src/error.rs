use std::fmt;

use thiserror::Error;

/// A single violated configuration constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A count that must be strictly positive was zero.
    NonPositive(&'static str),
    /// `lhs <= rhs` (or `<` when `strict`) failed.
    Inequality {
        lhs: &'static str,
        lhs_value: usize,
        rhs: &'static str,
        rhs_value: usize,
        strict: bool,
    },
    /// Fixed block mapping needs `n_tx % n_rf_tx == 0`.
    Divisibility { n_tx: usize, n_rf_tx: usize },
    /// Noise variance must be finite and non-negative.
    NoiseVariance(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositive(name) => write!(f, "{name} must be strictly positive"),
            Violation::Inequality {
                lhs,
                lhs_value,
                rhs,
                rhs_value,
                strict,
            } => {
                let op = if *strict { "<" } else { "<=" };
                write!(f, "{lhs} {op} {rhs} violated ({lhs_value} vs {rhs_value})")
            }
            Violation::Divisibility { n_tx, n_rf_tx } => write!(
                f,
                "fixed mapping needs n_tx divisible by n_rf_tx ({n_tx} mod {n_rf_tx} = {})",
                n_tx % n_rf_tx
            ),
            Violation::NoiseVariance(v) => write!(f, "noise variance {v} is not finite and >= 0"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join_violations(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("{0} is rank deficient")]
    RankDeficient(&'static str),

    #[error("infeasible dimensions: {0}")]
    InfeasibleDimensions(String),

    #[error("array size {0} cannot be arranged as a square planar array")]
    NonSquareArray(usize),

    #[error("entry modulus {0} exceeds the double phase shifter bound 2")]
    ModulusTooLarge(f64),

    #[error("{0} is identically zero")]
    ZeroMatrix(&'static str),

    #[error("interference-plus-noise matrix of user {user} on subcarrier {subcarrier} is singular")]
    SingularInterference { user: usize, subcarrier: usize },

    #[error("null space of dimension {available} is smaller than the {required} streams required (user {user}, subcarrier {subcarrier})")]
    InsufficientNullSpace {
        user: usize,
        subcarrier: usize,
        available: usize,
        required: usize,
    },

    #[error("LASSO solver stopped after {iterations} iterations without converging (relative change {rel_change:e})")]
    NotConverged {
        iterations: usize,
        rel_change: f64,
        best: Vec<num_complex::Complex64>,
    },

    #[error("invalid mapping: {0}")]
    InvalidMapping(String),

    #[error("unknown algorithm tag `{0}`")]
    UnknownAlgorithm(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
