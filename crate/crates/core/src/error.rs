use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("box too small: V({x}) = {value} is below the required level {required}")]
    BoxTooSmall { x: f64, value: f64, required: f64 },

    #[error("eigen-iteration did not converge: {0}")]
    EigenNotConverged(String),

    #[error("Fermi level {mu} is within {tol:e} of eigenvalue {eigenvalue}; move it to a gap midpoint")]
    AmbiguousFermiLevel { mu: f64, eigenvalue: f64, tol: f64 },

    #[error("the sublevel set {{V <= {level}}} has {components} components, expected one")]
    MultiCutDetected { level: f64, components: usize },

    #[error("the sublevel set {{V <= {level}}} is empty")]
    EmptyDroplet { level: f64 },

    #[error("degenerate turning point at x = {x}: |V'| = {slope:e}")]
    DegenerateEdge { x: f64, slope: f64 },

    #[error("x = {x} lies outside the droplet [{x_minus}, {x_plus}]")]
    OutOfDroplet { x: f64, x_minus: f64, x_plus: f64 },

    #[error("kernel evaluated on the diagonal (angle separation {separation:e})")]
    SingularDiagonal { separation: f64 },

    #[error("sup |e^(eta f) - 1| = {norm} on the grid is not below 1")]
    SymbolTooLarge { norm: f64 },

    #[error("operator norm estimate {norm} is not below 1")]
    NormTooLarge { norm: f64 },

    #[error("log-determinant branch undetermined: bound {bound} on the correction is not below pi")]
    BranchAmbiguous { bound: f64 },

    #[error("spectrum holds {available} eigenpairs but {required} are needed")]
    InsufficientSpectrum { available: usize, required: usize },

    #[error("sampler degeneracy: residual kernel diagonal {value:e} at step {step}")]
    NumericalDegeneracy { step: usize, value: f64 },

    #[error("expected {expected} wells, found {found}")]
    NotMultiCut { expected: usize, found: usize },

    #[error("eigenvalue separation conditions fail (cross gap {cross_gap:e}, distance to mu {mu_distance:e}, threshold {threshold:e})")]
    SeparationFailed {
        cross_gap: f64,
        mu_distance: f64,
        threshold: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the experiment driver: 1 for invalid input,
    /// 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidGrid(_) | Error::Config(_) | Error::BoxTooSmall { .. } => 1,
            _ => 2,
        }
    }
}
