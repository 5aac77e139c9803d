use thiserror::Error;

/// Errors produced by the spectral computations and the config loader.
#[derive(Debug, Error)]
pub enum Error {
    #[error("order parameter must satisfy nu ≥ 2, got {0}")]
    InvalidOrder(i64),
    #[error("matrix dimension must satisfy m ≥ 1, got {0}")]
    InvalidDimension(i64),
    #[error("coefficient index k = {k} outside [2, {max}]")]
    CoefficientIndex { k: i64, max: usize },
    #[error("coefficient entry ({i}, {j}) outside a {m}x{m} matrix")]
    EntryIndex { i: i64, j: i64, m: usize },
    #[error("coefficient matrix is {rows}x{cols}, expected {m}x{m}")]
    NonSquare { rows: usize, cols: usize, m: usize },
    #[error("malformed complex value: {0}")]
    MalformedComplex(String),
    #[error("duplicate coefficient entry k = {k}, (i, j) = ({i}, {j}), n = {n}")]
    DuplicateEntry { k: usize, i: usize, j: usize, n: i64 },
    #[error("coefficient k = {k} is flagged real-valued but its Fourier data is not conjugate-symmetric (deviation {deviation:.3e})")]
    NotRealValued { k: usize, deviation: f64 },
    #[error("config parse error: {0}")]
    Config(String),
    #[error("matrix is not Hermitian: anti-Hermitian part {deviation:.3e} exceeds {tolerance:.1e}")]
    NotHermitian { deviation: f64, tolerance: f64 },
    #[error("assembled operator is not self-adjoint: anti-Hermitian part {deviation:.3e} exceeds {tolerance:.1e}")]
    NotSelfAdjoint { deviation: f64, tolerance: f64 },
    #[error("eigenvalues did not converge after {doublings} truncation doublings (last K = {k})")]
    NoConvergence { doublings: usize, k: usize },
    #[error("monodromy growth estimate {growth:.3e} exceeds the conditioning limit {limit:.1e}")]
    ConditioningExceeded { growth: f64, limit: f64 },
    #[error("ODE integration failed: {0}")]
    Integration(String),
    #[error("eigenvalue {eigenvalue} lies on the projection contour |z - {center}| = {radius}")]
    EigenvalueOnContour {
        eigenvalue: f64,
        center: f64,
        radius: f64,
    },
    #[error("eigenvalue {index} is not simple (nearest neighbour distance {distance:.3e})")]
    DegenerateEigenvalue { index: usize, distance: f64 },
    #[error("anchor coefficient vanishes")]
    ZeroAnchorCoefficient,
    #[error("phase anchor lost at t = {t}: modulus {modulus:.3e} ≤ {threshold:.3e}")]
    AnchorLost {
        t: f64,
        modulus: f64,
        threshold: f64,
    },
    #[error("band {n_max} tops out at {top:.6e}, below the ceiling {ceiling:.6e}; raise n_max")]
    CeilingUnreachable { n_max: usize, top: f64, ceiling: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("at t = {t}: {source}")]
    AtQuasimomentum {
        t: f64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the quasimomentum at which it occurred.
    pub fn at(self, t: f64) -> Self {
        Error::AtQuasimomentum {
            t,
            source: Box::new(self),
        }
    }

    /// The innermost error, with quasimomentum annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtQuasimomentum { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
