use std::fmt;
use std::io;

use siteslam::cloudops::CloudError;
use siteslam::pipeline::{ConfigError, SlamError};
use siteslam::session::SessionError;
use siteslam::simworld::SimError;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation.
    Usage(String),
    /// Missing, unreadable or malformed input data.
    Data(String),
    /// Anything that went wrong while processing valid input.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn io_class(e: &io::Error) -> fn(String) -> CliError {
    match e.kind() {
        io::ErrorKind::NotFound | io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => CliError::Data,
        _ => CliError::Runtime,
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        io_class(&e)(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match &e {
            SimError::MalformedDataset(_) => CliError::Data(e.to_string()),
            SimError::Io(io) => io_class(io)(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CloudError> for CliError {
    fn from(e: CloudError) -> Self {
        match &e {
            CloudError::Io(io) => io_class(io)(e.to_string()),
            CloudError::Ply(_) | CloudError::EmptyCloud | CloudError::EmptyReference | CloudError::NoOverlap => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match &e {
            SessionError::CorruptArchive(_) | SessionError::VersionMismatch(_) | SessionError::Codec(_) => {
                CliError::Data(e.to_string())
            }
            SessionError::Sim(s) if matches!(s, SimError::MalformedDataset(_)) => CliError::Data(e.to_string()),
            SessionError::Io(io) => io_class(io)(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SlamError> for CliError {
    fn from(e: SlamError) -> Self {
        match e {
            SlamError::Config(c) => c.into(),
            SlamError::Sim(s) => s.into(),
            SlamError::Session(s) => s.into(),
            SlamError::Cloud(c) => c.into(),
            SlamError::Io(io) => io.into(),
            SlamError::MissingBaseMap => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
