use std::fmt;

/// Pipeline stage an error came from; printed as the error's tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Io,
    Input,
    Sample,
    Reference,
    Train,
    Solve,
    FineTune,
    Eval,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Io => "io",
            Stage::Input => "input",
            Stage::Sample => "sample",
            Stage::Reference => "reference",
            Stage::Train => "train",
            Stage::Solve => "solve",
            Stage::FineTune => "finetune",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub stage: Stage,
    pub message: String,
}

impl CliError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        CliError {
            stage,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage.tag(), self.message)
    }
}

impl std::error::Error for CliError {}

/// Tags a library error with `stage`; I/O failures are always tagged `io`.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, CliError>;
}

impl<T> AtStage<T> for flexcmtf::Result<T> {
    fn at(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|e| match e {
            flexcmtf::Error::Io(io) => CliError::new(Stage::Io, io.to_string()),
            other => CliError::new(stage, other.to_string()),
        })
    }
}
