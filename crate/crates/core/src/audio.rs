//! PCM WAV ingestion into mono `f64` sample buffers.

use std::io::ErrorKind;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// A mono speech segment with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub clip_id: String,
    pub speaker_id: String,
}

impl AudioClip {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: u32,
        clip_id: impl Into<String>,
        speaker_id: impl Into<String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("audio samples"));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sample {i} = {} is outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
            clip_id: clip_id.into(),
            speaker_id: speaker_id.into(),
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float).
///
/// Integer samples are divided by `2^(bits-1)`; multi-channel audio is
/// downmixed by the per-frame arithmetic mean. No resampling is done.
pub fn load_wav(path: &Path, clip_id: &str, speaker_id: &str) -> Result<AudioClip> {
    let malformed = |reason: String| Error::MalformedWav {
        path: path.to_path_buf(),
        reason,
    };
    let map_err = |e: hound::Error| match e {
        hound::Error::IoError(io) if io.kind() == ErrorKind::NotFound => {
            Error::MissingFile(path.to_path_buf())
        }
        hound::Error::IoError(io) if io.kind() == ErrorKind::UnexpectedEof => {
            malformed("unexpected end of file".into())
        }
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::FormatError(reason) => malformed(reason.into()),
        hound::Error::Unsupported | hound::Error::TooWide | hound::Error::InvalidSampleFormat => {
            Error::UnsupportedEncoding {
                path: path.to_path_buf(),
                reason: e.to_string(),
            }
        }
        hound::Error::UnfinishedSample => malformed("trailing partial sample".into()),
    };

    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = WavReader::open(path).map_err(map_err)?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(malformed("zero channels".into()));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_err)?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(map_err)?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: path.to_path_buf(),
                reason: format!("{bits}-bit {fmt:?} samples"),
            })
        }
    };

    if interleaved.iter().any(|s| !s.is_finite()) {
        return Err(malformed("non-finite float sample".into()));
    }
    let samples: Vec<f64> = downmix(&interleaved, spec.channels as usize)
        .into_iter()
        .map(|s| s.clamp(-1.0, 1.0))
        .collect();
    if samples.is_empty() {
        return Err(malformed("no audio frames".into()));
    }
    AudioClip::new(samples, spec.sample_rate, clip_id, speaker_id)
}

/// Per-frame arithmetic mean of interleaved channels.
pub fn downmix(interleaved: &[f64], channels: usize) -> Vec<f64> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect()
}

/// Writes mono 16-bit PCM, rounding `x * 32767` after clamping to `[-1, 1]`.
pub fn write_wav_i16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    };
    let mut w = WavWriter::create(path, spec).map_err(wav_err)?;
    for x in samples {
        w.write_sample((x.clamp(-1.0, 1.0) * 32767.0).round() as i16).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}
