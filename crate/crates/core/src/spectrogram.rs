//! Magnitude STFT with per-frame max normalization.

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::container::{Reader, Writer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKind {
    /// Symmetric Hamming: `0.54 - 0.46 cos(2πn/(L-1))`.
    Hamming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramParams {
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for SpectrogramParams {
    /// 128-sample Hamming window with 75% overlap.
    fn default() -> Self {
        SpectrogramParams {
            window_len: 128,
            hop: 32,
            window: WindowKind::Hamming,
        }
    }
}

impl SpectrogramParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 {
            return Err(Error::InvalidParameter("window_len must be at least 2".into()));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::InvalidParameter(format!(
                "hop must be in 1..={}, got {}",
                self.window_len, self.hop
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Number of full frames in a signal of `len` samples (0 if shorter than one window).
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }

    pub fn window_coefficients(&self) -> Vec<f64> {
        let l = self.window_len;
        match self.window {
            WindowKind::Hamming => (0..l)
                .map(|n| {
                    0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (l - 1) as f64).cos()
                })
                .collect(),
        }
    }
}

/// Magnitude matrix with frequency bins on rows and time frames on columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<f64>,
    pub params: SpectrogramParams,
    pub clip_id: String,
    pub normalized: bool,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// `SPGM` debug dump: magic, u32 version, u32 rows, u32 cols, row-major f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(b"SPGM", 1);
        w.u32(self.n_bins() as u32);
        w.u32(self.n_frames() as u32);
        for v in self.values.iter() {
            w.f64(*v);
        }
        w.finish()
    }

    /// Reads an `SPGM` dump back into a bare matrix.
    pub fn matrix_from_bytes(bytes: &[u8]) -> Result<Array2<f64>> {
        let (mut r, version) = Reader::open(bytes, b"SPGM")?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported SPGM version {version}")));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let data = r.f64s(rows * cols)?;
        r.expect_end()?;
        Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
    }
}

/// Unnormalized magnitude STFT. Frames are not zero-padded: only windows lying
/// fully inside the signal are used.
pub fn stft_magnitude(clip: &AudioClip, params: &SpectrogramParams) -> Result<Spectrogram> {
    params.validate()?;
    let len = clip.samples.len();
    if len < params.window_len {
        return Err(Error::ClipTooShort {
            clip_id: clip.clip_id.clone(),
            len,
            needed: params.window_len,
        });
    }
    let n = params.window_len;
    let n_frames = params.n_frames(len);
    let n_bins = params.n_bins();
    let window = params.window_coefficients();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let mut values = Array2::zeros((n_bins, n_frames));
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for (t, mut col) in values.axis_iter_mut(Axis(1)).enumerate() {
        let frame = &clip.samples[t * params.hop..t * params.hop + n];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (out, c) in col.iter_mut().zip(&buf[..n_bins]) {
            *out = c.norm();
        }
    }
    Ok(Spectrogram {
        values,
        params: *params,
        clip_id: clip.clip_id.clone(),
        normalized: false,
    })
}

/// Divides every time frame by its maximum entry. All-zero frames stay zero.
pub fn normalize(mut spec: Spectrogram) -> Spectrogram {
    for mut col in spec.values.axis_iter_mut(Axis(1)) {
        let max = col.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            col.mapv_inplace(|v| v / max);
        }
    }
    spec.normalized = true;
    spec
}

/// `normalize(stft_magnitude(clip))`.
pub fn spectrogram(clip: &AudioClip, params: &SpectrogramParams) -> Result<Spectrogram> {
    stft_magnitude(clip, params).map(normalize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 8000, "t", "s").unwrap()
    }

    /// O(N²) DFT magnitudes of one windowed frame, bins 0..=N/2.
    fn naive_dft(frame: &[f64], window: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, (&x, &w)) in frame.iter().zip(window).enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * j % n) as f64 / n as f64;
                    re += x * w * ang.cos();
                    im += x * w * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_clip_shape_and_values() {
        let s = stft_magnitude(&clip(vec![0.0; 1024]), &SpectrogramParams::default()).unwrap();
        assert_eq!(s.values.dim(), (65, 29));
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_clip_rejected() {
        let r = stft_magnitude(&clip(vec![0.1; 127]), &SpectrogramParams::default());
        assert!(matches!(r, Err(Error::ClipTooShort { .. })));
    }

    #[test]
    fn hamming_endpoints() {
        let w = SpectrogramParams::default().window_coefficients();
        assert!((w[0] - 0.08).abs() < 1e-15);
        assert!((w[127] - 0.08).abs() < 1e-15);
        assert!((w[63] - w[64]).abs() < 1e-15);
    }

    #[test]
    fn bin_centred_sine_peaks_at_bin_16() {
        let fs = 8000.0;
        let f = 16.0 * fs / 128.0;
        let x: Vec<f64> = (0..1024)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
            .collect();
        let params = SpectrogramParams::default();
        let s = stft_magnitude(&clip(x.clone()), &params).unwrap();
        let w = params.window_coefficients();
        for t in 0..s.n_frames() {
            let col = s.values.column(t);
            let argmax = col
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            assert_eq!(argmax, 16);
            let oracle = naive_dft(&x[t * 32..t * 32 + 128], &w);
            for (a, b) in col.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn frame_energy_matches_oracle_for_white_noise() {
        let x = noise(7, 2048);
        let params = SpectrogramParams::default();
        let s = stft_magnitude(&clip(x.clone()), &params).unwrap();
        let w = params.window_coefficients();
        for t in 0..s.n_frames() {
            let e: f64 = s.values.column(t).iter().map(|v| v * v).sum();
            let oracle: f64 = naive_dft(&x[t * 32..t * 32 + 128], &w).iter().map(|v| v * v).sum();
            assert!((e - oracle).abs() < 1e-9, "frame {t}: {e} vs {oracle}");
        }
    }

    #[test]
    fn delaying_by_one_hop_shifts_columns() {
        let x = noise(11, 1024 + 32);
        let params = SpectrogramParams::default();
        let a = stft_magnitude(&clip(x[32..].to_vec()), &params).unwrap();
        let b = stft_magnitude(&clip(x.clone()), &params).unwrap();
        assert_eq!(b.n_frames(), a.n_frames() + 1);
        for t in 0..a.n_frames() {
            for f in 0..a.n_bins() {
                assert!((a.values[[f, t]] - b.values[[f, t + 1]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalize_columns() {
        let spec = Spectrogram {
            values: array![[2.0, 0.0], [4.0, 0.0], [8.0, 0.0]],
            params: SpectrogramParams::default(),
            clip_id: "x".into(),
            normalized: false,
        };
        let n = normalize(spec);
        assert_eq!(n.values, array![[0.25, 0.0], [0.5, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn spgm_round_trip() {
        let s = spectrogram(&clip(noise(3, 600)), &SpectrogramParams::default()).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"SPGM");
        assert_eq!(Spectrogram::matrix_from_bytes(&bytes).unwrap(), s.values);
    }

    #[test]
    fn rejects_bad_params() {
        let p = SpectrogramParams { window_len: 64, hop: 65, window: WindowKind::Hamming };
        assert!(p.validate().is_err());
        let p = SpectrogramParams { window_len: 1, hop: 1, window: WindowKind::Hamming };
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent_and_bounded(seed in any::<u64>(), len in 128usize..700, zero_from in 0usize..700) {
            let mut x = noise(seed, len);
            for v in x.iter_mut().skip(zero_from) { *v = 0.0; }
            let params = SpectrogramParams::default();
            let once = spectrogram(&clip(x), &params).unwrap();
            prop_assert_eq!(once.n_frames(), (len - 128) / 32 + 1);
            prop_assert!(once.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
            for col in once.values.axis_iter(Axis(1)) {
                let max = col.iter().copied().fold(0.0, f64::max);
                prop_assert!(max == 0.0 || max == 1.0);
            }
            let twice = normalize(once.clone());
            prop_assert_eq!(twice.values, once.values);
        }
    }
}
