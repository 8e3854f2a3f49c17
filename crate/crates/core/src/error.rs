use thiserror::Error;

/// Errors produced by the codecs, the wire format and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid rank k={k} for a {rows}x{cols} layer")]
    InvalidRank { k: usize, rows: usize, cols: usize },
    #[error("invalid fraction {0}: must lie in (0, 1]")]
    InvalidFraction(f64),
    #[error("invalid quantization bits {0}: must lie in [1, 8]")]
    InvalidBits(u8),
    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("truncated message: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unknown scheme tag {0}")]
    UnknownScheme(u8),
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("too few examples: {examples} for {clients} clients")]
    TooFewExamples { examples: usize, clients: usize },
    #[error("infeasible label partition: {0}")]
    InfeasiblePartition(String),
    #[error("local training diverged for client {client} in round {round}")]
    Divergence { round: u32, client: u32 },
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("dataset error: {0}")]
    Dataset(String),
}

pub type Result<T> = std::result::Result<T, Error>;
