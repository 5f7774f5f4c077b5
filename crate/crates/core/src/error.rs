use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate lattice: basis matrix is singular or not {0}x{0}")]
    DegenerateLattice(usize),
    #[error("unsupported dimension {0} (only 2 and 3 are supported)")]
    UnsupportedDimension(usize),
    #[error("bad stencil: {0}")]
    BadStencil(String),
    #[error("no interior cells: box of {n} cells needs n > 2r = {}", 2 * radius)]
    NoInteriorCells { n: usize, radius: usize },
    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("not a discrete gradient: corner block row sums {0:e} exceed tolerance")]
    NotDiscreteGradient(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty stencil: cutoff {0} is below the nearest-neighbour distance")]
    EmptyStencil(f64),
    #[error("bad decomposition: {0}")]
    BadDecomposition(String),
    #[error("inadmissible Q: {0}")]
    InadmissibleQ(String),
    #[error("unsupported internal count {0} (model requires m = 1)")]
    UnsupportedInternalCount(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("gradient undefined on boundary layer (cell {0})")]
    BoundaryCell(usize),
    #[error("ratio undefined: discrete gradient vanishes")]
    RatioUndefined,
    #[error("model and grid are incompatible: {0}")]
    Incompatible(String),
    #[error("diverged evaluation: energy or gradient became non-finite")]
    DivergedEvaluation,
    #[error("buckling start is 2D-only")]
    BucklingNot2d,
    #[error("all {0} starts failed")]
    AllStartsFailed(usize),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("empty shell set: no lattice vectors within cutoff {0}")]
    EmptyShellSet(f64),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
