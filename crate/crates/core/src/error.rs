use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("file truncated while reading {0}")]
    TruncatedFile(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unexpected trailing data ({0} bytes)")]
    TrailingData(u64),
    #[error("duplicate image id {0}")]
    DuplicateImageId(u32),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("descriptor must have 128 bytes, got {0}")]
    DescriptorLength(usize),
    #[error("parse error on line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("unknown image id {0}")]
    UnknownId(u32),
    #[error("point ({x}, {y}) outside {width}x{height}")]
    OutOfBounds { x: f64, y: f64, width: f64, height: f64 },
    #[error("block {block} invalid for {kind}")]
    InvalidBlock { kind: &'static str, block: usize },
    #[error("degenerate vector (all zeros or non-finite)")]
    DegenerateVector,
    #[error("need at least {needed} distinct points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("multiple assignment {ma} exceeds vocabulary size {k}")]
    MaTooLarge { ma: usize, k: usize },
    #[error("unknown visual word {0}")]
    UnknownWord(u32),
    #[error("no training data")]
    NoTrainingData,
    #[error("signature length mismatch: {0} vs {1} bits")]
    LengthMismatch(usize, usize),
    #[error("no samples")]
    NoSamples,
    #[error("degenerate fit: {0}")]
    DegenerateFit(&'static str),
    #[error("image {0} already indexed")]
    DuplicateImage(u32),
    #[error("index is finalized")]
    Finalized,
    #[error("index is empty")]
    EmptyIndex,
    #[error("index is not finalized")]
    NotFinalized,
    #[error("query is missing context vectors: {0}")]
    MissingContexts(String),
    #[error("no relevant items")]
    NoRelevant,
    #[error("N-S group must have 4 members, got {0}")]
    BadGroup(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

impl Error {
    /// Stable variant name, used for diagnostics by the command-line tool.
    pub fn name(&self) -> &'static str {
        match self {
            Error::BadMagic { .. } => "BadMagic",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::TruncatedFile(_) => "TruncatedFile",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::TrailingData(_) => "TrailingData",
            Error::DuplicateImageId(_) => "DuplicateImageId",
            Error::InvalidRecord(_) => "InvalidRecord",
            Error::DescriptorLength(_) => "DescriptorLength",
            Error::ParseError { .. } => "ParseError",
            Error::UnknownId(_) => "UnknownId",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::InvalidBlock { .. } => "InvalidBlock",
            Error::DegenerateVector => "DegenerateVector",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::MaTooLarge { .. } => "MaTooLarge",
            Error::UnknownWord(_) => "UnknownWord",
            Error::NoTrainingData => "NoTrainingData",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::NoSamples => "NoSamples",
            Error::DegenerateFit(_) => "DegenerateFit",
            Error::DuplicateImage(_) => "DuplicateImage",
            Error::Finalized => "Finalized",
            Error::EmptyIndex => "EmptyIndex",
            Error::NotFinalized => "NotFinalized",
            Error::MissingContexts(_) => "MissingContexts",
            Error::NoRelevant => "NoRelevant",
            Error::BadGroup(_) => "BadGroup",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::IoFailure(_) => "IoFailure",
        }
    }
}
