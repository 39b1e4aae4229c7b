use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("duplicate image_id {0:?}")]
    DuplicateImageId(String),
    #[error("unknown raw label {label:?} in column {column}")]
    UnknownLabel { column: &'static str, label: String },
    #[error("record {image_id:?} has no {column} label")]
    MissingLabel { image_id: String, column: &'static str },
    #[error("invalid label schema: {0}")]
    InvalidSchema(String),
    #[error("stratum {0:?} is empty")]
    EmptyStratum(String),
    #[error("split ratios must be non-negative and sum to 1, got ({0}, {1}, {2})")]
    InvalidRatios(f64, f64, f64),
    #[error("class {0} has zero count; its weight is undefined")]
    ZeroCount(usize),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("unknown backbone family {0:?}")]
    UnknownFamily(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid fusion head: {0}")]
    InvalidFusion(String),
    #[error("model role is {actual}, operation needs {expected}")]
    WrongRole { expected: &'static str, actual: &'static str },
    #[error("aux must be one-hot")]
    AuxNotOneHot,
    #[error("aux entries must lie in [0, 1]")]
    AuxOutOfRange,
    #[error("aux vector given to a model without fusion")]
    AuxUnexpected,
    #[error("aux vector required by fusion mode {0}")]
    AuxMissing(&'static str),
    #[error("class index {index} out of range for {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("no checkpoints recorded")]
    NoCheckpoints,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("targets contain a single class; AUROC is undefined")]
    SingleClassTargets,
    #[error("no discordant pairs")]
    NoDiscordantPairs,
    #[error("pooled variance is zero; effect size is undefined")]
    DegenerateVariance,
    #[error("modality mismatch: model trained on {model} images, data is {data}")]
    ModalityMismatch { model: &'static str, data: &'static str },
    #[error("zero-size image")]
    ZeroSizeImage,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("probabilities must be non-negative and sum to 1 (sum = {0})")]
    NotAProbability(f64),
    #[error("{0}")]
    External(String),
}
