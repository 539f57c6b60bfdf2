//! Command-line error type with stable process exit codes.

use quotient_core::channel::ChannelError;
use quotient_core::fxp::FxpError;
use quotient_core::nn::NnError;
use quotient_core::ot::OtError;
use quotient_core::proto::ProtoError;
use quotient_core::secure::SecureError;
use quotient_core::shares::SharesError;
use std::fmt;

/// Exit code for invalid configuration, arguments, or input files.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for a protocol abort between the parties.
pub const EXIT_PROTOCOL: i32 = 3;

/// Top-level command error.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, malformed configuration or data files, shape
    /// mismatches: anything the local user can fix without the peer.
    Config(String),
    /// The two parties disagreed or the transport failed mid-protocol.
    Protocol(String),
    /// Local file-system failure, reported with the offending path.
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        CliError::Protocol(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit code reported for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => EXIT_CONFIG,
            CliError::Protocol(_) => EXIT_PROTOCOL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Protocol(msg) => write!(f, "protocol abort: {msg}"),
            CliError::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<ChannelError> for CliError {
    fn from(err: ChannelError) -> Self {
        CliError::Protocol(err.to_string())
    }
}

impl From<SecureError> for CliError {
    fn from(err: SecureError) -> Self {
        match err {
            SecureError::Shape(msg) => CliError::Config(msg),
            SecureError::Config(e) => CliError::Config(e.to_string()),
            SecureError::Model(e) => CliError::Config(e.to_string()),
            other => CliError::Protocol(other.to_string()),
        }
    }
}

impl From<ProtoError> for CliError {
    fn from(err: ProtoError) -> Self {
        CliError::Protocol(err.to_string())
    }
}

impl From<OtError> for CliError {
    fn from(err: OtError) -> Self {
        CliError::Protocol(err.to_string())
    }
}

impl From<SharesError> for CliError {
    fn from(err: SharesError) -> Self {
        CliError::Protocol(err.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(err: NnError) -> Self {
        CliError::Config(err.to_string())
    }
}

impl From<FxpError> for CliError {
    fn from(err: FxpError) -> Self {
        CliError::Config(err.to_string())
    }
}
