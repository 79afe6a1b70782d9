use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TflowError>;

#[derive(Debug, Error)]
pub enum TflowError {
    #[error("line {line}: expected {expected} columns, found {found}")]
    MalformedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: {detail}")]
    ParseValue {
        line: usize,
        column: usize,
        detail: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: usize },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("bad magic bytes {found:?}, expected \"TFMX\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported TFMX version {0}")]
    VersionUnsupported(u32),
    #[error("payload truncated: header declares {expected} bytes, {available} available")]
    TruncatedPayload { expected: u64, available: u64 },
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("row {row} is not on the probability simplex (sum {sum})")]
    NotASimplexRow { row: usize, sum: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("all rows are identical, mean pairwise distance is zero")]
    DegenerateData,
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("group of size {0} is too small for the unbiased estimator")]
    GroupTooSmall(usize),
    #[error("groups overlap at row {0}")]
    OverlappingGroups(usize),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("class {class} has {size} member(s), at least 2 required")]
    ClassTooSmall { class: usize, size: usize },
    #[error("pseudo-cluster {cluster} has {size} member(s), at least 2 required")]
    ClusterTooSmall { cluster: usize, size: usize },
    #[error("reports cover different sample counts ({0} vs {1})")]
    MismatchedSampleCount(usize, usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("k = {k} exceeds the number of samples {m}")]
    KTooLarge { k: usize, m: usize },
    #[error("covariance of component {0} is not positive definite")]
    CovarianceSingular(usize),
    #[error("row {0} underflowed to zero after exponentiation")]
    NumericalUnderflow(usize),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("superclass {name:?} has {found} subclasses, {required} required")]
    TooFewSubclasses {
        name: String,
        found: usize,
        required: usize,
    },
    #[error("superclass count {0} is odd")]
    OddSuperclassCount(usize),
    #[error("duplicate subclass name {0:?}")]
    DuplicateSubclass(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl TflowError {
    /// Stable machine-readable identifier, used in CLI error output.
    pub fn code(&self) -> &'static str {
        use TflowError::*;
        match self {
            MalformedRow { .. } => "MalformedRow",
            ParseValue { .. } => "ParseValue",
            NonFiniteValue { .. } => "NonFiniteValue",
            EmptyFile => "EmptyFile",
            BadMagic { .. } => "BadMagic",
            VersionUnsupported(_) => "VersionUnsupported",
            TruncatedPayload { .. } => "TruncatedPayload",
            Io(_) => "IoFailure",
            NotASimplexRow { .. } => "NotASimplexRow",
            DimensionMismatch { .. } => "DimensionMismatch",
            DegenerateData => "DegenerateData",
            TooFewRows(_) => "TooFewRows",
            GroupTooSmall(_) => "GroupTooSmall",
            OverlappingGroups(_) => "OverlappingGroups",
            IndexOutOfRange { .. } => "IndexOutOfRange",
            ClassTooSmall { .. } => "ClassTooSmall",
            ClusterTooSmall { .. } => "ClusterTooSmall",
            MismatchedSampleCount(..) => "MismatchedSampleCount",
            LengthMismatch(..) => "LengthMismatch",
            KTooLarge { .. } => "KTooLarge",
            CovarianceSingular(_) => "CovarianceSingular",
            NumericalUnderflow(_) => "NumericalUnderflow",
            ShapeMismatch { .. } => "ShapeMismatch",
            AlphaOutOfRange(_) => "AlphaOutOfRange",
            TooFewSubclasses { .. } => "TooFewSubclasses",
            OddSuperclassCount(_) => "OddSuperclassCount",
            DuplicateSubclass(_) => "DuplicateSubclass",
            InvalidConfig(_) => "InvalidConfig",
        }
    }
}
