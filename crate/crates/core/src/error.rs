use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("line {line}: unknown goal {goal:?}")]
    UnknownGoal { line: usize, goal: String },

    #[error("goal {0:?} is not present in the corpus")]
    MissingGoal(String),

    #[error("goal {goal:?} has {found} labeled documents; at least {min} are required")]
    TooFewLabeled {
        goal: String,
        found: usize,
        min: usize,
    },

    #[error(
        "goal {0:?} has no positive documents in the cluster-training split; nothing to upsample"
    )]
    NoPositivesToUpsample(String),

    #[error("vocabulary is empty after applying min_count = {min_count}; try a lower min_count")]
    EmptyVocabulary { min_count: usize },

    #[error("non-finite value during {stage} (epoch {epoch}, step {step})")]
    NonFinite {
        stage: &'static str,
        epoch: usize,
        step: usize,
    },

    #[error("k-means needs at least {k} distinct points, found {distinct}")]
    TooFewDistinctPoints { distinct: usize, k: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("expected {expected} positive and negative examples each, found {positives} positive / {negatives} negative")]
    TooFewPerClass {
        expected: usize,
        positives: usize,
        negatives: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no embedding for document {0:?}")]
    MissingEmbedding(String),

    #[error("both samples have zero variance; the t statistic is undefined")]
    ZeroVariance,

    #[error("every grid combination is invalid for goal {goal:?}; widen the grid or lower min_coverage ({min_coverage})")]
    NoValidCombo { goal: String, min_coverage: f64 },

    #[error("bootstrap iteration {iteration}: no usable resample after {attempts} attempts")]
    ResampleExhausted { iteration: usize, attempts: usize },

    #[error("{0} split is empty")]
    EmptySplit(&'static str),

    #[error("evaluation set contains synthetic-labeled document {0:?}")]
    SyntheticInEvaluation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact {path} (produce it with `{producer}`)")]
    MissingArtifact {
        path: PathBuf,
        producer: &'static str,
    },

    #[error("artifact {path} is corrupt: {message}")]
    CorruptArtifact { path: PathBuf, message: String },

    #[error("stage {stage} failed for goal {goal:?}: {cause}")]
    Stage {
        stage: String,
        goal: String,
        cause: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration errors, 3 for data errors,
    /// 4 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::Stage { .. }
            | Error::NonFinite { .. }
            | Error::NoValidCombo { .. }
            | Error::ResampleExhausted { .. } => 4,
            _ => 3,
        }
    }
}
