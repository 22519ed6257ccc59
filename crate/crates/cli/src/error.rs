//! CLI error kinds mapped onto process exit codes:
//! 1 usage, 2 data (i/o or format), 3 tracking failure, 4 localization
//! failure.

use surfelscope_core::eval::EvalError;
use surfelscope_core::geometry::GeometryError;
use surfelscope_core::io::IoError;
use surfelscope_core::localization::LocalizationError;
use surfelscope_core::pipeline::PipelineError;
use surfelscope_core::stereo::StereoError;
use surfelscope_core::synth::SynthError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Tracking(String),
    Localization(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Tracking(_) => 3,
            CliError::Localization(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Data(m)
            | CliError::Tracking(m)
            | CliError::Localization(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<StereoError> for CliError {
    fn from(e: StereoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::CameraThroughSurface(_) | SynthError::TooFewFrames(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<LocalizationError> for CliError {
    fn from(e: LocalizationError) -> Self {
        match e {
            LocalizationError::EmptyReconstruction | LocalizationError::LengthMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Localization(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::NoFrames => CliError::Usage(e.to_string()),
            PipelineError::TrackingLost(_) => CliError::Tracking(e.to_string()),
            PipelineError::Stereo(inner) => CliError::Data(inner.to_string()),
            PipelineError::Fusion(inner) => CliError::Data(inner.to_string()),
            PipelineError::Localization(inner) => inner.into(),
            PipelineError::Io(inner) => CliError::Data(inner.to_string()),
        }
    }
}
