use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("malformed distribution: {0}")]
    MalformedDistribution(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    /// A peer dropped its endpoint while this rank still expected traffic,
    /// usually because the peer failed first.
    #[error("protocol error: rank {rank} lost its channel from rank {peer}")]
    PeerExited { rank: usize, peer: usize },

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
