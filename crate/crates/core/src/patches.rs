//! Dense patch extraction from normalized spectrograms.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrogram::Spectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride_time: usize,
    pub stride_freq: usize,
}

impl Default for PatchGrid {
    /// 16x16 patches every 8 frames and every 4 bins.
    fn default() -> Self {
        PatchGrid {
            patch_size: 16,
            stride_time: 8,
            stride_freq: 4,
        }
    }
}

impl PatchGrid {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride_time == 0 || self.stride_freq == 0 {
            return Err(Error::InvalidParameter(
                "patch size and strides must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Patch dimension `p²`.
    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// `(positions along frequency, positions along time)` for a spectrogram of the given shape.
    pub fn positions(&self, n_bins: usize, n_frames: usize) -> (usize, usize) {
        let count = |extent: usize, stride: usize| {
            if extent < self.patch_size {
                0
            } else {
                (extent - self.patch_size) / stride + 1
            }
        };
        (count(n_bins, self.stride_freq), count(n_frames, self.stride_time))
    }
}

/// Where a patch column came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    /// Index into [`PatchMatrix::clip_ids`].
    pub clip: usize,
    pub freq: usize,
    pub time: usize,
}

/// `d x k` matrix of flattened patches, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub columns: Array2<f64>,
    pub origins: Vec<PatchOrigin>,
    pub clip_ids: Vec<String>,
}

impl PatchMatrix {
    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Wraps a bare matrix (no provenance beyond column index).
    pub fn from_columns(columns: Array2<f64>) -> Self {
        let origins = (0..columns.ncols())
            .map(|t| PatchOrigin { clip: 0, freq: 0, time: t })
            .collect();
        PatchMatrix {
            columns,
            origins,
            clip_ids: vec![String::new()],
        }
    }

    /// Column-wise concatenation, preserving order.
    pub fn concat<'a, I: IntoIterator<Item = &'a PatchMatrix>>(parts: I) -> Result<PatchMatrix> {
        let parts: Vec<&PatchMatrix> = parts.into_iter().collect();
        let first = parts.first().ok_or(Error::Empty("patch matrices"))?;
        let d = first.dim();
        if let Some(p) = parts.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch(format!(
                "patch dimension {} vs {d}",
                p.dim()
            )));
        }
        let views: Vec<_> = parts.iter().map(|p| p.columns.view()).collect();
        let columns = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let mut origins = Vec::with_capacity(columns.ncols());
        let mut clip_ids = Vec::new();
        for p in &parts {
            let offset = clip_ids.len();
            clip_ids.extend(p.clip_ids.iter().cloned());
            origins.extend(p.origins.iter().map(|o| PatchOrigin {
                clip: o.clip + offset,
                ..*o
            }));
        }
        Ok(PatchMatrix {
            columns,
            origins,
            clip_ids,
        })
    }
}

/// Extracts all fully in-bounds `p x p` patches at offsets
/// `(i * stride_freq, j * stride_time)`. Pixel `(f, t)` of a patch is stored at
/// index `f * p + t` (frequency-major). Columns are ordered by time offset,
/// then frequency offset.
pub fn extract_patches(spec: &Spectrogram, grid: &PatchGrid) -> Result<PatchMatrix> {
    grid.validate()?;
    let p = grid.patch_size;
    let (n_bins, n_frames) = spec.values.dim();
    let (nf, nt) = grid.positions(n_bins, n_frames);
    if nf == 0 || nt == 0 {
        return Err(Error::SpectrogramTooSmall {
            clip_id: spec.clip_id.clone(),
            bins: n_bins,
            frames: n_frames,
            patch: p,
        });
    }
    let k = nf * nt;
    let mut columns = Array2::zeros((p * p, k));
    let mut origins = Vec::with_capacity(k);
    for j in 0..nt {
        for i in 0..nf {
            let (f0, t0) = (i * grid.stride_freq, j * grid.stride_time);
            let col_idx = origins.len();
            let mut col = columns.column_mut(col_idx);
            for f in 0..p {
                for t in 0..p {
                    col[f * p + t] = spec.values[[f0 + f, t0 + t]];
                }
            }
            origins.push(PatchOrigin {
                clip: 0,
                freq: f0,
                time: t0,
            });
        }
    }
    Ok(PatchMatrix {
        columns,
        origins,
        clip_ids: vec![spec.clip_id.clone()],
    })
}
