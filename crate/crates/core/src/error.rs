use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operation requires a non-empty sequence")]
    EmptySequence,
    #[error("invalid channel spec: {0}")]
    InvalidSpec(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("user {user} has a zero-energy channel bank")]
    ZeroEnergyUser { user: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("channel set has no per-tap variance profile; supply measured CIRs for each position instead")]
    MissingVarianceProfile,
    #[error("unknown constellation `{0}`")]
    UnknownConstellation(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Problems found while decoding a CIR or precoder file.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated while reading {section}")]
    Truncated { section: &'static str },
    #[error("header claims {expected} taps but file holds {found}")]
    TapCount { expected: usize, found: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
