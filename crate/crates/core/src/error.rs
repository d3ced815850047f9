use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("malformed RIFF/WAVE header in {path}: {reason}")]
    MalformedWav { path: PathBuf, reason: String },

    #[error("unsupported audio encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },

    #[error("clip `{clip_id}` has {len} samples, fewer than the {needed} required")]
    ClipTooShort {
        clip_id: String,
        len: usize,
        needed: usize,
    },

    #[error("spectrogram of `{clip_id}` is {bins}x{frames}, too small for a {patch}x{patch} patch")]
    SpectrogramTooSmall {
        clip_id: String,
        bins: usize,
        frames: usize,
        patch: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("need {needed} usable patches to initialise the dictionary, found {found}")]
    NotEnoughPatches { needed: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("negative histogram bin at index {0}")]
    NegativeBin(usize),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("labels contain only one class; recall of the other class is undefined")]
    MissingClass,

    #[error("{speakers} distinct speakers cannot fill {folds} folds")]
    TooFewSpeakers { speakers: usize, folds: usize },

    #[error("model was trained against dictionary {expected} but input is bound to {found}")]
    DigestMismatch { expected: String, found: String },

    #[error("bad container: {0}")]
    Format(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
