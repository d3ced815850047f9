pub mod audio;
pub mod container;
pub mod dictionary;
pub mod error;
pub mod eval;
pub mod features;
pub mod manifest;
pub mod patches;
pub mod pool;
pub mod sparse;
pub mod spectrogram;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};
