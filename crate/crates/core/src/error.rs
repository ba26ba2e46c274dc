use thiserror::Error;

use crate::schema::Feature;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature index {0} out of range (schema has 5 features)")]
    FeatureIndex(usize),

    #[error("code {code} is not a level of {feature}")]
    InvalidLevel { feature: Feature, code: i64 },

    #[error("sample count must be at least 1")]
    EmptySample,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("labeling needs an even number of profiles, got {0}")]
    OddCount(usize),

    #[error("feature `{0}` has zero range in the normalization statistics")]
    ZeroRange(&'static str),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("profile is not rejected by the classifier")]
    NotRejected,

    #[error("weight for {feature} must be positive and finite, got {value}")]
    NonPositiveWeight { feature: Feature, value: f64 },

    #[error("no comparisons to fit")]
    EmptyComparisons,

    #[error("candidate set is empty")]
    NoCandidates,

    #[error("survivor set is empty")]
    NoSurvivors,

    #[error("probing session already terminated")]
    SessionTerminated,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid artifact: {0}")]
    InvalidArtifact(String),

    #[error("expected `{expected}` artifact version {expected_version}, found `{found}` version {found_version}")]
    ArtifactVersion {
        expected: String,
        expected_version: u32,
        found: String,
        found_version: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by malformed or inconsistent input rather than I/O.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
