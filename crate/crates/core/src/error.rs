use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing deep feature records: {}", format_keys(.0))]
    MissingDeep(Vec<(String, u8)>),

    #[error("numeric failure at iteration {iteration}: {message}")]
    Numeric { iteration: usize, message: String },
}

fn format_keys(keys: &[(String, u8)]) -> String {
    let mut out = keys
        .iter()
        .take(20)
        .map(|(id, level)| format!("({id}, {level})"))
        .collect::<Vec<_>>()
        .join(", ");
    if keys.len() > 20 {
        out.push_str(&format!(" ... and {} more", keys.len() - 20));
    }
    out
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code: 1 for I/O and decode failures, 2 for everything the
    /// user can fix by changing inputs or configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Decode { .. } => 1,
            _ => 2,
        }
    }
}
