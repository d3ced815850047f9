//! Two-class synthetic speech-like corpus with known labels: harmonic tones
//! under slow amplitude modulation versus gated band-limited noise.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::write_wav_i16;
use crate::error::Result;
use crate::manifest::{write_manifest, Label, ManifestEntry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub speakers: usize,
    pub clips_per_speaker: usize,
    pub sample_rate: u32,
    pub clip_secs: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            speakers: 40,
            clips_per_speaker: 4,
            sample_rate: 8000,
            clip_secs: 0.5,
            seed: 0,
        }
    }
}

/// Harmonic tone: fundamental plus overtones with `1/h` roll-off, slowly
/// amplitude-modulated, with a little vibrato.
pub fn harmonic_tone(rng: &mut impl Rng, f0: f64, n: usize, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let am_rate = rng.random_range(2.0..6.0);
    let am_phase = rng.random_range(0.0..2.0 * PI);
    let vib_rate = rng.random_range(3.0..7.0);
    let n_harm = ((0.45 * sr) / f0).floor().max(1.0) as usize;
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let f = f0 * (1.0 + 0.01 * (2.0 * PI * vib_rate * t).sin());
            phase += 2.0 * PI * f / sr;
            let tone: f64 = phases
                .iter()
                .enumerate()
                .map(|(h, p)| ((h + 1) as f64 * phase + p).sin() / (h + 1) as f64)
                .sum();
            let env = 0.5 * (1.0 + 0.8 * (2.0 * PI * am_rate * t + am_phase).sin());
            tone * env
        })
        .collect()
}

/// White noise through a two-pole band-pass, switched on and off in bursts
/// of 40–200 ms with short ramps.
pub fn noise_bursts(rng: &mut impl Rng, center: f64, bandwidth: f64, n: usize, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    // band-pass biquad, constant 0 dB peak gain
    let w0 = 2.0 * PI * center / sr;
    let q = center / bandwidth;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);

    let ramp = (0.005 * sr) as usize;
    let mut gate = vec![0.0; n];
    let mut i = 0;
    let mut on = rng.random::<bool>();
    while i < n {
        let len = ((rng.random_range(0.04..0.2)) * sr) as usize;
        let end = (i + len).min(n);
        if on {
            for (k, g) in gate[i..end].iter_mut().enumerate() {
                let edge = k.min(end - i - 1 - k);
                *g = if edge < ramp { edge as f64 / ramp as f64 } else { 1.0 };
            }
        }
        on = !on;
        i = end;
    }
    (0..n)
        .map(|k| {
            let x: f64 = rng.random_range(-1.0..1.0);
            let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = x;
            y2 = y1;
            y1 = y;
            y * gate[k]
        })
        .collect()
}

fn scale_peak(mut v: Vec<f64>, peak: f64) -> Vec<f64> {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max > 0.0 {
        v.iter_mut().for_each(|x| *x *= peak / max);
    }
    v
}

/// Class of a synthetic speaker: even speakers are tonal (`+1`).
pub fn speaker_class(speaker: usize) -> Label {
    if speaker.is_multiple_of(2) { Label::Pos } else { Label::Neg }
}

/// Clips as `(clip_id, speaker_id, label, samples)`. Every trait carries the
/// class label.
pub fn generate(cfg: &SynthConfig) -> Vec<(String, String, Label, Vec<f64>)> {
    let n = (cfg.clip_secs * cfg.sample_rate as f64).round() as usize;
    let mut out = Vec::with_capacity(cfg.speakers * cfg.clips_per_speaker);
    for s in 0..cfg.speakers {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (s as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let class = speaker_class(s);
        // per-speaker voice parameters
        let f0 = rng.random_range(100.0..250.0);
        let center = rng.random_range(800.0..2500.0);
        let bandwidth = rng.random_range(300.0..900.0);
        for c in 0..cfg.clips_per_speaker {
            let samples = match class {
                Label::Pos => {
                    let f = f0 * rng.random_range(0.95..1.05);
                    harmonic_tone(&mut rng, f, n, cfg.sample_rate)
                }
                Label::Neg => noise_bursts(&mut rng, center, bandwidth, n, cfg.sample_rate),
            };
            let noise_floor: Vec<f64> = (0..n).map(|_| 0.01 * rng.random_range(-1.0..1.0)).collect();
            let mixed: Vec<f64> = scale_peak(samples, 0.5).iter().zip(noise_floor).map(|(a, b)| a + b).collect();
            out.push((format!("spk{s:03}_clip{c}"), format!("spk{s:03}"), class, mixed));
        }
    }
    out
}

/// Writes every clip as 16-bit WAV under `dir` plus `manifest.csv`, and
/// returns the manifest path.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (clip_id, speaker_id, label, samples) in generate(cfg) {
        let name = format!("{clip_id}.wav");
        write_wav_i16(&dir.join(&name), &samples, cfg.sample_rate)?;
        entries.push(ManifestEntry {
            clip_id,
            speaker_id,
            path: PathBuf::from(name),
            labels: [label; 5],
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(fs::File::create(&manifest)?, &entries)?;
    Ok(manifest)
}
