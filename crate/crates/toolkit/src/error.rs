use std::path::Path;

use lesionelev_core::Error as CoreError;

/// Errors grouped by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

pub type Result<T, E = ToolError> = std::result::Result<T, E>;

impl ToolError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ToolError::Config(_) => 2,
            ToolError::Data(_) => 3,
            ToolError::Runtime(_) => 4,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        ToolError::Data(format!("{}: {err}", path.display()))
    }

    pub fn write(path: &Path, err: impl std::fmt::Display) -> Self {
        ToolError::Runtime(format!("writing {}: {err}", path.display()))
    }
}

impl From<CoreError> for ToolError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidRatios(..)
            | CoreError::InvalidSchema(_)
            | CoreError::UnknownFamily(_)
            | CoreError::DimensionMismatch(_)
            | CoreError::InvalidFusion(_)
            | CoreError::WrongRole { .. }
            | CoreError::InvalidArgument(_) => ToolError::Config(msg),
            CoreError::DuplicateImageId(_)
            | CoreError::UnknownLabel { .. }
            | CoreError::MissingLabel { .. }
            | CoreError::EmptyStratum(_)
            | CoreError::ZeroCount(_)
            | CoreError::EmptyInput(_)
            | CoreError::ShapeMismatch { .. }
            | CoreError::AuxNotOneHot
            | CoreError::AuxOutOfRange
            | CoreError::AuxUnexpected
            | CoreError::AuxMissing(_)
            | CoreError::TargetOutOfRange { .. }
            | CoreError::EmptySplit(_)
            | CoreError::LengthMismatch(..)
            | CoreError::SingleClassTargets
            | CoreError::NoDiscordantPairs
            | CoreError::DegenerateVariance
            | CoreError::ModalityMismatch { .. }
            | CoreError::ZeroSizeImage
            | CoreError::NotAProbability(_) => ToolError::Data(msg),
            CoreError::NoCheckpoints | CoreError::External(_) => ToolError::Runtime(msg),
        }
    }
}
