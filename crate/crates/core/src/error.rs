use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::Finding;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("raster {path} holds {actual} bytes, expected {expected}")]
    RasterLength {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("invalid observation series: {}", summarize(.0))]
    InvalidSeries(Vec<Finding>),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tile of {tile_h}x{tile_w} does not fit a {scene_h}x{scene_w} scene")]
    TileTooLarge {
        tile_h: usize,
        tile_w: usize,
        scene_h: usize,
        scene_w: usize,
    },

    #[error("series too short: window selection needs {required} windows, {available} available")]
    SeriesTooShort { required: usize, available: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("forward context does not match this network: {0}")]
    Context(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("manifest mismatch: {0}")]
    Manifest(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),
}

fn summarize(findings: &[Finding]) -> String {
    match findings {
        [] => "no findings".to_string(),
        [first] => first.to_string(),
        [first, rest @ ..] => format!("{first} (+{} more)", rest.len()),
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
    let path = path.into();
    move |source| Error::Json { path, source }
}
