//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("duplicate node id `{0}`")]
    DuplicateId(String),

    #[error("multiple roots: `{0}` and `{1}`")]
    MultipleRoots(String, String),

    #[error("no root node found")]
    NoRoot,

    #[error("node `{child}` references unknown parent `{parent}`")]
    Orphan { child: String, parent: String },

    #[error("node `{0}` is not reachable from the root (cycle or disconnected)")]
    Unreachable(String),

    #[error("node `{0}` is declared a leaf but has children")]
    LeafWithChildren(String),

    #[error("tree must contain a root and at least one leaf")]
    TooSmall,

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("node {0} is not a leaf")]
    NotALeaf(usize),

    #[error("the root has no ancestors")]
    RootHasNoAncestors,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("weighting is not balanced at leaf {leaf}: root-to-leaf sum {sum}")]
    Unbalanced { leaf: usize, sum: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("problem size {actual} exceeds cap {limit}")]
    SizeCap { limit: usize, actual: usize },

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for CLI use: 1 for verification/balance failures,
    /// 2 for usage, parse, and I/O errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::VerificationFailed(_) | Error::Unbalanced { .. } => 1,
            _ => 2,
        }
    }
}
