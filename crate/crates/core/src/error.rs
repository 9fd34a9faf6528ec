use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integration diverged at t = {time} s")]
    IntegrationDiverged { time: f64 },

    #[error("matrix is not nilpotent (residual norm {residual:.3e})")]
    NotNilpotent { residual: f64 },

    #[error("CARE failed: residual norm {residual:.3e} after {iterations} iterations")]
    CareFailed { residual: f64, iterations: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("thrust singularity: thrust {thrust:.4} below floor {floor:.4}")]
    ThrustSingularity { thrust: f64, floor: f64 },

    #[error("decoupling singularity at x = {state:?} (condition number {condition:.3e})")]
    DecouplingSingularity { state: Vec<f64>, condition: f64 },

    #[error("problem is not strongly convex (min eig {min_eig:.3e}, max eig {max_eig:.3e})")]
    NotStronglyConvex { min_eig: f64, max_eig: f64 },

    #[error("parameterization not linear: certification requires linear parameterization")]
    NotLinear,

    #[error("degenerate policy: exploration noise must be strictly positive")]
    DegeneratePolicy,

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
