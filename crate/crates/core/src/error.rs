use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate location id {0}")]
    DuplicateId(u32),

    #[error("location {id} at ({col},{row}) lies outside the {side}x{side} grid")]
    OutOfGrid { id: u32, col: u32, row: u32, side: u64 },

    #[error("location {id} has non-positive prior weight {weight}")]
    NonPositiveWeight { id: u32, weight: f64 },

    #[error("prior weights must be given for every location or for none")]
    PartialWeights,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain is empty")]
    EmptyDomain,

    #[error("unknown location id {0}")]
    UnknownLocation(u32),

    #[error("prior has {prior} entries but the domain has {domain} locations")]
    PriorMismatch { prior: usize, domain: usize },

    #[error("no window within range {range} of location {id} satisfies E >= {threshold:.6}")]
    NoFeasibleSet { id: u32, range: usize, threshold: f64 },

    #[error("partition infeasible: E'(whole domain) = {whole:.6} < threshold {threshold:.6}")]
    Infeasible { whole: f64, threshold: f64 },

    #[error("location {0} is not covered by the partition")]
    Uncovered(u32),

    #[error("zero evidence for pseudo-location {0}")]
    ZeroEvidence(u32),

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
