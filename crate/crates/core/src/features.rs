//! Clip-level feature pipeline: audio → normalized spectrogram → patches →
//! sparse codes → pooled histogram.

use ndarray::Axis;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::load_wav;
use crate::dictionary::Dictionary;
use crate::error::Result;
use crate::manifest::{ManifestEntry, TraitLabels};
use crate::patches::{extract_patches, PatchGrid, PatchMatrix};
use crate::pool::{pool_columns, PoolOptions};
use crate::sparse::{LassoParams, LassoSolver};
use crate::spectrogram::{spectrogram, Spectrogram, SpectrogramParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub spectrogram: SpectrogramParams,
    pub grid: PatchGrid,
}

impl FeatureParams {
    pub fn validate(&self) -> Result<()> {
        self.spectrogram.validate()?;
        self.grid.validate()
    }
}

/// One clip's normalized spectrogram with its identity and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    pub clip_id: String,
    pub speaker_id: String,
    pub labels: Option<TraitLabels>,
    pub sample_rate: u32,
    pub spectrogram: Spectrogram,
}

impl ClipFeatures {
    pub fn patches(&self, grid: &PatchGrid) -> Result<PatchMatrix> {
        let mut p = extract_patches(&self.spectrogram, grid)?;
        p.clip_ids = vec![self.clip_id.clone()];
        Ok(p)
    }
}

/// Loads a manifest row and checks it yields at least one patch.
pub fn load_clip(entry: &ManifestEntry, params: &FeatureParams) -> Result<ClipFeatures> {
    let clip = load_wav(&entry.path, &entry.clip_id, &entry.speaker_id)?;
    let spec = spectrogram(&clip, &params.spectrogram)?;
    let features = ClipFeatures {
        clip_id: entry.clip_id.clone(),
        speaker_id: entry.speaker_id.clone(),
        labels: Some(entry.labels),
        sample_rate: clip.sample_rate,
        spectrogram: spec,
    };
    features.patches(&params.grid)?;
    Ok(features)
}

/// [`load_clip`] over every row, in parallel; results keep manifest order.
pub fn load_clips(entries: &[ManifestEntry], params: &FeatureParams) -> Vec<Result<ClipFeatures>> {
    entries.par_iter().map(|e| load_clip(e, params)).collect()
}

/// Concatenated patches of `clips`, optionally keeping at most
/// `per_clip_cap` seeded random patches from each clip (in original order).
pub fn training_patches(
    clips: &[&ClipFeatures],
    grid: &PatchGrid,
    per_clip_cap: Option<usize>,
    seed: u64,
) -> Result<PatchMatrix> {
    let parts: Vec<PatchMatrix> = clips
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let p = c.patches(grid)?;
            match per_clip_cap {
                Some(cap) if cap < p.len() => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                    let mut keep = index::sample(&mut rng, p.len(), cap).into_vec();
                    keep.sort_unstable();
                    Ok(PatchMatrix {
                        columns: p.columns.select(Axis(1), &keep),
                        origins: keep.iter().map(|&k| p.origins[k]).collect(),
                        clip_ids: p.clip_ids,
                    })
                }
                _ => Ok(p),
            }
        })
        .collect::<Result<_>>()?;
    PatchMatrix::concat(&parts)
}

/// Pooled histogram of one clip's codes.
pub fn encode_clip(solver: &LassoSolver, clip: &ClipFeatures, grid: &PatchGrid, pool: PoolOptions) -> Result<Vec<f64>> {
    let patches = clip.patches(grid)?;
    let codes = solver.solve_columns(patches.columns.view())?;
    pool_columns(codes.view(), pool)
}

/// Histograms for `clips` under `dict`, coded with the dictionary's λ.
pub fn encode_clips(dict: &Dictionary, clips: &[&ClipFeatures], grid: &PatchGrid, pool: PoolOptions) -> Result<Vec<Vec<f64>>> {
    let solver = LassoSolver::new(dict.atoms.view(), LassoParams::new(dict.meta.learn.lambda))?;
    clips.par_iter().map(|c| encode_clip(&solver, c, grid, pool)).collect()
}
