use thiserror::Error;

/// Errors raised by the laboratory. Numeric failures carry enough context
/// to be reported as structured JSON by the CLI.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MteError {
    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("probability {0} outside the open unit interval")]
    Domain(f64),

    #[error("quantile requested at boundary probability {0}")]
    Boundary(f64),

    #[error("index {index} out of range for {len} treatments")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("dependent errors require a joint sampler")]
    MissingJointSampler,

    #[error("exact utility tie between treatments {a} and {b} (latent value {value})")]
    Tie { a: usize, b: usize, value: f64 },

    #[error("representation mismatch on draw {draw}: argmax chose {argmax}, hurdle representation gave {hurdle:?}")]
    RepresentationMismatch {
        draw: usize,
        argmax: usize,
        hurdle: Option<usize>,
    },

    #[error("quadrature did not converge: estimate oscillation {oscillation:e} exceeds {tolerance:e}")]
    Quadrature { oscillation: f64, tolerance: f64 },

    #[error("extension consistency failed: interior approach differs from boundary value by {gap:e}")]
    ExtensionConsistency { gap: f64 },

    #[error("step-size error: Richardson estimates disagree by {gap:e}")]
    StepSize { gap: f64 },

    #[error("limit identification failed: {0}")]
    LimitIdentification(String),

    #[error("CDF inversion failed: {0}")]
    Inversion(String),

    #[error("root bracketing failed: {0}")]
    Bracket(String),

    #[error("sparse region: effective neighbour count {effective:.3} below {required}")]
    SparseRegion { effective: f64, required: f64 },

    #[error("boundary sparsity: effective sample {effective:.1} below {required}")]
    BoundarySparsity { effective: f64, required: f64 },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),
}

impl MteError {
    /// Short machine-readable tag used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            MteError::InvalidLaw(_) => "invalid_law",
            MteError::Domain(_) => "domain",
            MteError::Boundary(_) => "boundary",
            MteError::IndexOutOfRange { .. } => "index_out_of_range",
            MteError::Dimension { .. } => "dimension",
            MteError::MissingJointSampler => "missing_joint_sampler",
            MteError::Tie { .. } => "tie",
            MteError::RepresentationMismatch { .. } => "representation_mismatch",
            MteError::Quadrature { .. } => "quadrature",
            MteError::ExtensionConsistency { .. } => "extension_consistency",
            MteError::StepSize { .. } => "step_size",
            MteError::LimitIdentification(_) => "limit_identification",
            MteError::Inversion(_) => "inversion",
            MteError::Bracket(_) => "bracket",
            MteError::SparseRegion { .. } => "sparse_region",
            MteError::BoundarySparsity { .. } => "boundary_sparsity",
            MteError::Expression(_) => "expression",
            MteError::Config(_) => "config",
            MteError::InvalidArgument(_) => "invalid_argument",
            MteError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for MteError {
    fn from(e: std::io::Error) -> Self {
        MteError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MteError>;
