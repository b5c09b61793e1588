use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch at row {row}: {what}")]
    DimensionMismatch { row: usize, what: String },
    #[error("non-finite value in row {row}")]
    NonFiniteValue { row: usize },
    #[error("label {label} out of range at row {row} (num_classes = {num_classes})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("requested {requested} neighbors but cloud has only {available} points")]
    TooFewPoints { requested: usize, available: usize },
    #[error("voxel size must be positive, got {0}")]
    NonPositiveVoxelSize(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input is empty")]
    EmptyInput,
    #[error("backward called without a recorded forward tape")]
    NoTape,
    #[error("stochastic inference requested but no dropout layer is enabled")]
    NoDropoutLayers,
    #[error("labels are required")]
    MissingLabels,
    #[error("aleatoric uncertainty must be non-negative, got {value} at point {index}")]
    NegativeUncertainty { index: usize, value: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no voxels")]
    NoVoxels,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
