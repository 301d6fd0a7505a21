//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("{context}: expected dimension {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("tensor shape must have no zero extents")]
    EmptyShape,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Cost(#[from] CostError),

    #[error("training diverged at step {step}: lagrangian = {value:.6e}")]
    Diverged {
        step: usize,
        value: f64,
        history: Box<crate::solver::TrainHistory>,
    },

    #[error("gap sum is negative: e1 = {e1:.6e}, e2 = {e2:.6e}")]
    NegativeGapSum { e1: f64, e2: f64 },

    #[error("instance size {n} exceeds exact-solver cap {max}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("input not sorted ascending at index {0}")]
    NotSorted(usize),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("polar angle {0} outside [0, pi]")]
    PhiOutOfRange(f64),

    #[error("malformed csv at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("decode error: {0}")]
    Decode(String),
}

/// Domain violations of the registered cost functions. Each violation gets
/// its own code so callers can distinguish a bad query from a bad state.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("cost expects dims ({n}, {m}), got ({got_x}, {got_y})")]
    Dims {
        n: usize,
        m: usize,
        got_x: usize,
        got_y: usize,
    },

    #[error("cosine cost undefined for a zero vector")]
    ZeroVector,

    #[error("inverse-square cost undefined at coincident points")]
    CoincidentPoints,

    #[error("spherical coordinates out of range: theta = {theta}, phi = {phi}")]
    SphereRange { theta: f64, phi: f64 },

    #[error("class-contrastive cost requires labels")]
    MissingLabels,

    #[error("geodesic gradient refused near |inner| = 1 (inner = {inner})")]
    GeodesicPole { inner: f64 },

    #[error("mask length {got} does not match target dimension {expected}")]
    MaskLength { expected: usize, got: usize },

    #[error("mask entries must be exactly 0 or 1")]
    MaskBinary,

    #[error("invalid cost parameter: {0}")]
    Param(&'static str),

    #[error("non-finite cost input")]
    NonFiniteInput,
}
