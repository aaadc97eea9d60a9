use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: invalid rank {got} (limit {limit})")]
    InvalidRank {
        op: &'static str,
        got: usize,
        limit: usize,
    },

    #[error("homogeneous aggregation needs equal ranks, got {ranks:?}; use a rank-heterogeneous strategy")]
    MixedRanks { ranks: Vec<usize> },

    #[error("{0}: no client updates to aggregate")]
    EmptyUpdates(&'static str),

    #[error("replication padding needs at least one update at rank {r_target}")]
    NoHighRankDonor { r_target: usize },

    #[error("replication supports two rank tiers, found low ranks {ranks:?}")]
    TooManyRankTiers { ranks: Vec<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {class} pool exhausted for client {client} after {retries} proportion draws")]
    InsufficientSamples {
        client: usize,
        class: usize,
        retries: usize,
    },

    #[error("malformed adapter blob: {0}")]
    Decode(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
