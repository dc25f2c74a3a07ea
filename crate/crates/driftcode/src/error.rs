//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by encoding, decoding, and simulation routines.
#[derive(Error, Debug)]
pub enum Error {
    /// A parameter or input violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two sequences or matrices that must agree in length did not.
    #[error("length mismatch: {context} (expected {expected}, got {actual})")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The terminal drift of a received sequence falls outside the decoder's
    /// drift interval; the frame cannot be decoded and is treated as an erasure.
    #[error("undecodable frame: terminal drift {drift} outside [{d_min}, {d_max}]")]
    UndecodableDrift { drift: i64, d_min: i64, d_max: i64 },

    /// Every trellis path died during the forward recursion (all branch
    /// metrics zero at some step), so no posterior exists.
    #[error("undecodable frame: no surviving trellis path at step {step}")]
    NoSurvivingPath { step: usize },

    /// The joint decoder's product drift space exceeds the configured ceiling.
    #[error("joint state space too large: {states} states exceeds ceiling {ceiling}")]
    StateSpaceTooLarge { states: u128, ceiling: u128 },

    /// A parity-check matrix was rank deficient where full rank is required.
    #[error("parity-check matrix is rank deficient: rank {rank} < {rows} rows")]
    RankDeficient { rank: usize, rows: usize },

    /// A structured text file (alist, codebook, sequence, config) failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An exhaustive reference computation was requested on an instance too
    /// large to enumerate.
    #[error("instance too large for exhaustive enumeration: {0}")]
    InstanceTooLarge(String),

    /// Scheme configuration is inconsistent or unsupported.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
