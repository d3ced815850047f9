//! Run configuration: a JSON file supplies defaults, flags override them.

use std::path::{Path, PathBuf};

use patchcode::dictionary::LearnConfig;
use patchcode::eval::{CvConfig, GridSpec};
use patchcode::features::FeatureParams;
use patchcode::manifest::Trait;
use patchcode::patches::PatchGrid;
use patchcode::pool::PoolOptions;
use patchcode::spectrogram::SpectrogramParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub spectrogram: SpectrogramParams,
    pub patch_grid: PatchGrid,
    pub learn: LearnConfig,
    pub grid: GridSpec,
    pub seed: u64,
    pub threads: Option<usize>,
    pub k_outer: usize,
    pub k_inner: usize,
    pub reuse_dict: bool,
    pub max_patches_per_clip: Option<usize>,
    pub pool: PoolOptions,
    pub svm_eps: f64,
    pub traits: Vec<Trait>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cv = CvConfig::default();
        RunConfig {
            manifest: None,
            out: None,
            spectrogram: SpectrogramParams::default(),
            patch_grid: PatchGrid::default(),
            learn: LearnConfig::default(),
            grid: GridSpec::default(),
            seed: 0,
            threads: None,
            k_outer: cv.k_outer,
            k_inner: cv.k_inner,
            reuse_dict: false,
            max_patches_per_clip: None,
            pool: PoolOptions::default(),
            svm_eps: cv.svm_eps,
            traits: Trait::ALL.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("bad config {}: {e}", path.display())))
    }

    pub fn features(&self) -> FeatureParams {
        FeatureParams {
            spectrogram: self.spectrogram,
            grid: self.patch_grid,
        }
    }

    /// Learning parameters with the run seed applied.
    pub fn learn_config(&self) -> LearnConfig {
        LearnConfig {
            seed: self.seed,
            ..self.learn.clone()
        }
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            k_outer: self.k_outer,
            k_inner: self.k_inner,
            seed: self.seed,
            learn: self.learn.clone(),
            features: self.features(),
            pool: self.pool,
            reuse_dict: self.reuse_dict,
            max_patches_per_clip: self.max_patches_per_clip,
            svm_eps: self.svm_eps,
            traits: self.traits.clone(),
        }
    }

    pub fn manifest(&self) -> Result<&Path, CliError> {
        self.manifest
            .as_deref()
            .ok_or_else(|| CliError::Invalid("no manifest given (--manifest or config)".into()))
    }

    pub fn out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Invalid("no output path given (--out or config)".into()))
    }
}

/// Parses `"OCEAN"`-style letter sets, or comma-separated letters.
pub fn parse_traits(s: &str) -> Result<Vec<Trait>, String> {
    let mut out = Vec::new();
    for c in s.chars().filter(|c| *c != ',' && !c.is_whitespace()) {
        let t = Trait::from_letter(c).ok_or_else(|| format!("unknown trait '{c}'"))?;
        if !out.contains(&t) {
            out.push(t);
        }
    }
    if out.is_empty() {
        return Err("no traits given".into());
    }
    Ok(out)
}
