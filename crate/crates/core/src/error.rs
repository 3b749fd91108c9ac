use thiserror::Error;

/// Errors surfaced by the library. Operation contracts in the module docs
/// say which variants each entry point can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported q={q}: ring degree {degree} exceeds the configured limit {limit}")]
    UnsupportedRing { q: u32, degree: usize, limit: usize },

    #[error("ring mismatch: operands belong to different number rings")]
    RingMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("vector is zero or its direction is not fixed by a parabolic element")]
    NonParabolicDirection,

    #[error("iteration cap {0} exceeded (numeric breakdown or non-member input)")]
    IterationCap(usize),

    #[error("BFS frontier cap exceeded: {visited} states visited, {frontier} in frontier; prune factor too tight or radius too large")]
    FrontierCap { visited: usize, frontier: usize },

    #[error("orbit cache file rejected: {0}")]
    CacheFile(String),

    #[error("coefficient overflow in fast enumeration backend")]
    SmallBackendOverflow,

    #[error("the lattice does not contain -I, required by the double-coset pair count")]
    MinusIdentityRequired,

    #[error("truncation {requested} exceeds table range {available}")]
    TruncationExceedsTable { requested: f64, available: f64 },

    #[error("empty ball: no points of the set inside the requested radius")]
    EmptyBall,

    #[error("operation not supported for this lattice kind: {0}")]
    UnsupportedLattice(String),

    #[error("rejection sampler exceeded its loop cap")]
    SamplerCap,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
