use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset has no clusters")]
    EmptyDataset,
    #[error("cluster {cluster}: {what} has length {got}, expected {expected}")]
    RaggedCluster {
        cluster: String,
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("cluster {cluster}: treatment value {value} is not 0 or 1")]
    NonBinaryTreatment { cluster: String, value: f64 },
    #[error("cluster {cluster}: size {size} exceeds n_max = {n_max}")]
    ClusterTooLarge {
        cluster: String,
        size: usize,
        n_max: usize,
    },
    #[error("cluster {cluster}: covariate dimension {got} differs from dataset dimension {expected}")]
    CovariateDimension {
        cluster: String,
        got: usize,
        expected: usize,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    UnparsableCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate denominator: admissible-set mass {0:e} below tolerance")]
    DegenerateDenominator(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("too few clusters: {m} clusters cannot be split into {k} folds (need at least {need})")]
    TooFewClusters { m: usize, k: usize, need: usize },
    #[error("fit failed: {0}")]
    Fit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
