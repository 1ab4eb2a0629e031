use mdsearch::codebook::CodebookError;
use mdsearch::infotheory::InfoError;
use mdsearch::stationary::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Resource(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Resource(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::ResourceGuard(_) => CliError::Resource(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<InfoError> for CliError {
    fn from(e: InfoError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CodebookError> for CliError {
    fn from(e: CodebookError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
