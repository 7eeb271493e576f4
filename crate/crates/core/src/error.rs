use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform.
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    /// A pivot fell below the singularity threshold at elimination step `pivot`.
    SingularMatrix {
        pivot: usize,
    },
    /// An input contained NaN or infinity.
    NonFinite,
    /// Krylov start vector has zero norm.
    ZeroStartVector,
    /// Arnoldi hit the dimension cap before the residual test passed.
    NoConvergence {
        residual: f64,
        dim: usize,
    },
    /// The reduced Hessenberg matrix could not be inverted reliably.
    SingularReducedMatrix,
    /// A cached basis was asked for a step larger than the one it converged at.
    StepBeyondBasis {
        h_new: f64,
        h_sub: f64,
    },
    /// Nodes without any conductive path (G is structurally singular).
    FloatingNodes(Vec<String>),
    /// Malformed circuit description.
    InvalidCircuit(String),
    /// Newton iteration for the operating point failed, even with gmin stepping.
    NoDcConvergence,
    /// Step size dropped below the minimum.
    StepFailure {
        t: f64,
        h: f64,
    },
    InvalidArgument(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::SingularMatrix { pivot } => write!(f, "matrix is singular at pivot {pivot}"),
            Error::NonFinite => f.write_str("non-finite value encountered"),
            Error::ZeroStartVector => f.write_str("Krylov start vector is zero"),
            Error::NoConvergence { residual, dim } => write!(
                f,
                "Krylov iteration did not converge within {dim} vectors (residual {residual:e})"
            ),
            Error::SingularReducedMatrix => f.write_str("reduced Hessenberg matrix is singular"),
            Error::StepBeyondBasis { h_new, h_sub } => write!(
                f,
                "requested step {h_new:e} exceeds the step {h_sub:e} the basis converged at"
            ),
            Error::FloatingNodes(nodes) => {
                write!(
                    f,
                    "floating node(s) with no conductive path: {}",
                    nodes.join(", ")
                )
            }
            Error::InvalidCircuit(msg) => write!(f, "invalid circuit: {msg}"),
            Error::NoDcConvergence => f.write_str("DC operating point did not converge"),
            Error::StepFailure { t, h } => {
                write!(f, "time step {h:e} too small at t = {t:e}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
