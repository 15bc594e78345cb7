//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result<T>`]. Variants are
//! deliberately coarse: each one corresponds to a distinct *caller decision*
//! (fix the schema, relax the design, enlarge the sample, ...) rather than to
//! an internal code path.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All errors produced by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A table, config, or file does not match the schema it claims to follow.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// A file could not be read, written, or parsed.
    #[error("failed to {action} {path}: {source}")]
    Io {
        /// What we were doing ("read", "write", "parse", ...).
        action: &'static str,
        /// The file involved.
        path: PathBuf,
        /// Underlying error.
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },

    /// Malformed value in a CSV / JSON / GeoJSON input.
    #[error("parse error: {0}")]
    ParseError(String),

    /// A polygon has fewer than three vertices or zero area.
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    /// A generation / study / composite spec is internally inconsistent.
    #[error("invalid spec: {0}")]
    SpecInvalid(String),

    /// A stratum has fewer eligible clusters than the design asks to draw.
    #[error("stratum {stratum}: {available} eligible clusters, design needs {needed}")]
    InsufficientPsus {
        /// Stratum label.
        stratum: String,
        /// Eligible clusters after the minimum-size filter.
        available: usize,
        /// Clusters the design wants to select.
        needed: usize,
    },

    /// A selected cluster has fewer households than the within-cluster take.
    #[error("cluster {cluster}: {available} households, design needs {needed}")]
    InsufficientHouseholds {
        /// Cluster label.
        cluster: String,
        /// Households present.
        available: usize,
        /// Households the design wants to draw.
        needed: usize,
    },

    /// Displacement resampling exhausted its rejection budget.
    #[error("geomasking gave up after {budget} rejected displacements for cluster {cluster}")]
    RejectionBudgetExceeded {
        /// Cluster that could not be displaced.
        cluster: String,
        /// Attempts allowed.
        budget: usize,
    },

    /// A record references a cluster id absent from the geographic context.
    #[error("unknown cluster id: {0}")]
    UnknownCluster(String),

    /// A column needed for fitting holds no observed values.
    #[error("column {0} has no observed values")]
    EmptyColumn(String),

    /// A categorical value is not among the declared classes of its attribute.
    #[error("attribute {attr}: unknown class {class:?}")]
    UnknownClass {
        /// Attribute name.
        attr: String,
        /// Offending label.
        class: String,
    },

    /// Too few rows to fit the requested model.
    #[error("too few rows: {0}")]
    SmallSample(String),

    /// An iterative numeric routine failed (non-finite values, no bracket...).
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The conditioning block of a covariance matrix is numerically singular.
    #[error("singular conditioning block: {0}")]
    SingularConditioner(String),

    /// A covariance matrix could not be factorized even after jittering.
    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    /// A stratum is degenerate for the requested operation.
    #[error("degenerate stratum: {0}")]
    DegenerateStratum(String),

    /// Area-level model requested with fewer areas than fixed effects + 1.
    #[error("too few areas: have {areas}, need at least {needed}")]
    TooFewAreas {
        /// Areas with direct estimates.
        areas: usize,
        /// Minimum required.
        needed: usize,
    },

    /// Not enough data to compute the requested quantity.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// An iterative fit did not converge within its iteration cap.
    #[error("no convergence after {iters} iterations: {what}")]
    NoConvergence {
        /// Iterations used.
        iters: usize,
        /// Which routine.
        what: String,
    },

    /// The fixed-effect design matrix is rank deficient.
    #[error("rank-deficient design matrix: {0}")]
    RankDeficientDesign(String),

    /// An area present in the direct estimates lacks covariates.
    #[error("missing covariates for area {0}")]
    MissingCovariates(String),

    /// A pipeline stage failed for one replicate (surfaced in fail-fast
    /// mode; otherwise recorded in the run manifest).
    #[error("replicate {replicate}, stage {stage}: {message}")]
    PipelineStage {
        /// Replicate index.
        replicate: usize,
        /// Stage name ("sample", "geomask", ...).
        stage: String,
        /// Underlying error message.
        message: String,
    },
}

impl Error {
    /// Wrap an I/O-ish error with the action and path that produced it.
    pub fn io<E>(action: &'static str, path: impl Into<PathBuf>, source: E) -> Self
    where
        E: std::error::Error + Send + Sync + 'static,
    {
        Error::Io {
            action,
            path: path.into(),
            source: Box::new(source),
        }
    }
}
