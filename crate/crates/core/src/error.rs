use std::path::PathBuf;

/// Every failure the engine can report.
#[derive(Debug, thiserror::Error)]
pub enum GraftError {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("shape blendshapes are rank deficient (gram condition number {0:e})")]
    RankDeficientBlendshapes(f64),

    #[error("invalid body model: {0}")]
    InvalidModel(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("need at least {needed} points for normal estimation, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("weight shape mismatch: {0}")]
    WeightShapeMismatch(String),

    #[error("feature grid shape mismatch: {0}")]
    GridShapeMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("head joint does not project inside the image")]
    HeadNotVisible,

    #[error("no scene point found along the head ray")]
    NoScenePointOnRay,

    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("every displacement vector is degenerate")]
    AllDegenerate,

    #[error("degenerate joint configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("invalid value: {0}")]
    InvalidArgument(String),

    #[error("malformed container: {0}")]
    Container(String),

    #[error("malformed PLY: {0}")]
    Ply(String),

    #[error("malformed state document: {0}")]
    StateDocument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GraftError {
    /// Stable machine-readable identifier used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            GraftError::DegenerateRotation(_) => "DegenerateRotation",
            GraftError::DimensionMismatch(_) => "DimensionMismatch",
            GraftError::NonPositiveScale(_) => "NonPositiveScale",
            GraftError::RankDeficientBlendshapes(_) => "RankDeficientBlendshapes",
            GraftError::InvalidModel(_) => "InvalidModel",
            GraftError::EmptyCloud => "EmptyCloud",
            GraftError::TooFewPoints { .. } => "TooFewPoints",
            GraftError::WeightShapeMismatch(_) => "WeightShapeMismatch",
            GraftError::GridShapeMismatch(_) => "GridShapeMismatch",
            GraftError::ShapeMismatch(_) => "ShapeMismatch",
            GraftError::HeadNotVisible => "HeadNotVisible",
            GraftError::NoScenePointOnRay => "NoScenePointOnRay",
            GraftError::LengthMismatch(..) => "LengthMismatch",
            GraftError::AllDegenerate => "AllDegenerate",
            GraftError::DegenerateConfiguration(_) => "DegenerateConfiguration",
            GraftError::NonFiniteLoss { .. } => "NonFiniteLoss",
            GraftError::InvalidArgument(_) => "InvalidArgument",
            GraftError::Container(_) => "Container",
            GraftError::Ply(_) => "Ply",
            GraftError::StateDocument(_) => "StateDocument",
            GraftError::Io { .. } => "Io",
            GraftError::Json(_) => "Json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GraftError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, GraftError>;
