use serde::Serialize;

/// Exit status for usage errors: bad flags, missing or malformed input files.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failures after the inputs were accepted.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Input,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Runtime,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage | ErrorKind::Input => EXIT_USAGE,
            ErrorKind::Runtime => EXIT_FAILURE,
        }
    }

    /// The JSON document written to stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "schema_version": permtdp::SCHEMA_VERSION,
            "error": { "kind": self.kind, "message": self.message },
        })
        .to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<permtdp::Error> for CliError {
    fn from(e: permtdp::Error) -> Self {
        use permtdp::Error as E;
        let kind = match &e {
            E::Io { .. } | E::Matrix { .. } | E::Nifti(_) | E::Json(_) => ErrorKind::Input,
            E::EmptySubset | E::EmptyMask | E::OutOfMask { .. } | E::IndexOutOfRange { .. } => ErrorKind::Input,
            E::InvalidInput(_) | E::DimensionMismatch(_) | E::LambdaOutOfRange { .. } => ErrorKind::Input,
            E::OracleTooLarge(_) => ErrorKind::Runtime,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
