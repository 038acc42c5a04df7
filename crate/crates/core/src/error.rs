use thiserror::Error;

/// Errors raised anywhere in the inference engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (leading minor {minor} after {attempts} jitter attempts)")]
    NotPositiveDefinite { minor: usize, attempts: usize },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max deviation {deviation:e})")]
    AsymmetricInput { deviation: f64 },
    #[error("triangular factor has a zero on the diagonal at index {index}")]
    ZeroDiagonal { index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported evaluation mode: {0}")]
    UnsupportedMode(String),
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),
    #[error("no implementation registered for ({iv}, {kernel}) in {registry}")]
    NoImplementation { registry: &'static str, iv: String, kernel: String },
    #[error("({iv}, {kernel}) is already registered in {registry}")]
    DuplicateRegistration { registry: &'static str, iv: String, kernel: String },
    #[error("ambiguous dispatch for ({iv}, {kernel}) in {registry}: {candidates}")]
    AmbiguityDetected { registry: &'static str, iv: String, kernel: String, candidates: String },
    #[error("unknown type tag {0}")]
    UnknownTag(String),
    #[error("patch {patch_h}x{patch_w} does not fit in image {image_h}x{image_w}")]
    PatchLargerThanImage { patch_h: usize, patch_w: usize, image_h: usize, image_w: usize },
    #[error("output subset is empty")]
    EmptySubset,
    #[error("objective is not finite: {0}")]
    NonFiniteObjective(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    /// Stable variant name, used for scripting-facing messages.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::NonSquare { .. } => "NonSquare",
            Error::AsymmetricInput { .. } => "AsymmetricInput",
            Error::ZeroDiagonal { .. } => "ZeroDiagonal",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::UnsupportedMode(_) => "UnsupportedMode",
            Error::UnsupportedCombination(_) => "UnsupportedCombination",
            Error::NoImplementation { .. } => "NoImplementation",
            Error::DuplicateRegistration { .. } => "DuplicateRegistration",
            Error::AmbiguityDetected { .. } => "AmbiguityDetected",
            Error::UnknownTag(_) => "UnknownTag",
            Error::PatchLargerThanImage { .. } => "PatchLargerThanImage",
            Error::EmptySubset => "EmptySubset",
            Error::NonFiniteObjective(_) => "NonFiniteObjective",
            Error::InvalidParameter(_) => "InvalidParameter",
        }
    }

    /// True for failures originating in the linear algebra layer.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::ZeroDiagonal { .. }
                | Error::AsymmetricInput { .. }
                | Error::NonFiniteObjective(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
