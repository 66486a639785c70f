//! Command-line front end for the violindiff pipeline.

pub mod pipeline;

use violindiff::Error;

/// Process exit code for a failed command, grouped by error kind.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::Dimension(_) => 3,
        Error::Parse { .. } | Error::UnsupportedFormat(_) => 4,
        Error::Io(_) | Error::Json(_) => 5,
        Error::Capacity(_) | Error::NonFinite { .. } => 6,
    }
}

/// One-line JSON error object for stderr.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}
