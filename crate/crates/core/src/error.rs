use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("row {row}, column '{column}': cannot parse {value:?} as a finite number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("label column '{0}' not found in header")]
    MissingLabelColumn(String),

    #[error("dataset contains a single class; at least two are required")]
    SingleClass,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid learner spec '{spec}': {reason}")]
    LearnerSpec { spec: String, reason: String },

    #[error("cannot train on an empty training set")]
    EmptyTrainingSet,

    #[error("feature vector has {got} values, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("nothing to fit: {0}")]
    NothingToFit(String),

    #[error("missing cell {0}")]
    MissingCell(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of a numeric fit rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::DegenerateFit(_) | Error::NothingToFit(_))
    }
}
