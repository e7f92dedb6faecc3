use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by the solver core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    InvalidMeasure(&'static str),
    InvalidMesh(&'static str),
    UnsupportedDegree(usize),
    /// Weighted Gram matrix of a set of modes is (numerically) singular.
    RankDegeneracy {
        context: &'static str,
        column: usize,
        condition: f64,
    },
    NotOrthonormal {
        defect: f64,
    },
    Factorization(&'static str),
    SingularSystem(&'static str),
    NotConverged {
        context: &'static str,
        iterations: usize,
    },
    ResidualTooLarge {
        context: &'static str,
        residual: f64,
    },
    Divergence {
        step: usize,
    },
    Configuration(String),
    /// Coercivity of the stabilised form failed on a sampled vector.
    Stabilization {
        collocation: usize,
        ratio: f64,
    },
    Validation(Vec<String>),
    Derivation {
        quantity: &'static str,
        t: f64,
        x: f64,
        omega: f64,
        relative: f64,
    },
    Stability {
        step: usize,
        lhs: f64,
        rhs: f64,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension {
                context,
                expected,
                found,
            } => write!(f, "{context}: expected dimension {expected}, found {found}"),
            Error::InvalidMeasure(msg) => write!(f, "invalid collocation measure: {msg}"),
            Error::InvalidMesh(msg) => write!(f, "invalid mesh: {msg}"),
            Error::UnsupportedDegree(k) => {
                write!(f, "unsupported polynomial degree {k} (expected 1 or 2)")
            }
            Error::RankDegeneracy {
                context,
                column,
                condition,
            } => write!(
                f,
                "{context}: rank degeneracy at column {column} (condition {condition:.3e})"
            ),
            Error::NotOrthonormal { defect } => {
                write!(f, "stochastic modes are not orthonormal (defect {defect:.3e})")
            }
            Error::Factorization(what) => write!(f, "factorization failed: {what}"),
            Error::SingularSystem(what) => write!(f, "singular linear system: {what}"),
            Error::NotConverged {
                context,
                iterations,
            } => write!(f, "{context}: no convergence after {iterations} iterations"),
            Error::ResidualTooLarge { context, residual } => {
                write!(f, "{context}: relative residual {residual:.3e} above tolerance")
            }
            Error::Divergence { step } => write!(f, "non-finite values at step {step}"),
            Error::Configuration(msg) => write!(f, "configuration error: {msg}"),
            Error::Stabilization { collocation, ratio } => write!(
                f,
                "stabilised form not coercive at collocation point {collocation} (ratio {ratio:.6})"
            ),
            Error::Validation(items) => {
                write!(f, "coefficient validation failed: ")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, "; ")?;
                    }
                    write!(f, "{item}")?;
                }
                Ok(())
            }
            Error::Derivation {
                quantity,
                t,
                x,
                omega,
                relative,
            } => write!(
                f,
                "closed-form {quantity} disagrees with finite differences at (t={t}, x={x}, omega={omega}): relative error {relative:.3e}"
            ),
            Error::Stability { step, lhs, rhs } => write!(
                f,
                "stability estimate violated at step {step}: lhs {lhs:.6e} > rhs {rhs:.6e}"
            ),
        }
    }
}

impl core::error::Error for Error {}
