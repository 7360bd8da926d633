use thiserror::Error;

/// Crate-wide error type.
///
/// Numerical routines reject inputs outside their domain instead of
/// propagating NaNs; IO and schema problems carry enough context to point
/// at the offending file.
#[derive(Debug, Error)]
pub enum Error {
    /// A quaternion that is supposed to encode a rotation is not unit length.
    #[error("quaternion norm {norm} is not unit")]
    InvalidRotation { norm: f64 },

    /// An operation that needs at least one point received none.
    #[error("point cloud is empty")]
    EmptyCloud,

    /// Two latent codes (or a code and a decoder) disagree on dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Two images that must share a resolution do not.
    #[error("resolution mismatch: {expected_w}x{expected_h} vs {got_w}x{got_h}")]
    ResolutionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// Input violates a documented precondition.
    #[error("{0}")]
    Domain(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A text or binary asset failed to parse.
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A configuration file or override is invalid.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
