use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("digest mismatch for {what}: expected {expected}, got {actual}")]
    DigestMismatch {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("unsupported media type: {0}")]
    UnsupportedMediaType(String),

    #[error("truncated stream: {0}")]
    TruncatedStream(String),

    #[error("malformed tar archive: {0}")]
    MalformedTar(String),

    #[error("archive member escapes the filesystem root: {0}")]
    PathEscape(String),

    #[error("unsupported package database format: {0}")]
    UnsupportedDbFormat(String),

    #[error("malformed package database: {0}")]
    MalformedDatabase(String),

    #[error("invalid image reference: {0}")]
    InvalidReference(String),

    #[error("registry authentication failed: {0}")]
    AuthFailed(String),

    #[error("manifest not found: {0}")]
    ManifestNotFound(String),

    #[error("platform {0} not available in image index")]
    PlatformUnavailable(String),

    #[error("registry request failed: {0}")]
    Registry(String),

    #[error("invalid pattern table: {0}")]
    PatternTable(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
