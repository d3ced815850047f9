//! UAR, speaker-grouped folds and nested cross-validation over the full
//! dictionary → histogram → SVM pipeline.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Digest;
use crate::dictionary::{learn, Dictionary, LearnConfig};
use crate::error::{Error, Result};
use crate::features::{encode_clips, training_patches, ClipFeatures, FeatureParams};
use crate::manifest::{Label, Trait};
use crate::pool::PoolOptions;
use crate::svm::{chi2_matrix, median_pairwise, train_with_distances, KernelParams, SvmParams};

/// Mean of the per-class recalls.
pub fn uar(labels: &[Label], preds: &[Label]) -> Result<f64> {
    if labels.len() != preds.len() {
        return Err(Error::DimensionMismatch(format!("{} labels, {} predictions", labels.len(), preds.len())));
    }
    let recall = |class: Label| -> Result<f64> {
        let total = labels.iter().filter(|l| **l == class).count();
        if total == 0 {
            return Err(Error::MissingClass);
        }
        let hit = labels.iter().zip(preds).filter(|(l, p)| **l == class && **p == class).count();
        Ok(hit as f64 / total as f64)
    };
    Ok(0.5 * (recall(Label::Pos)? + recall(Label::Neg)?))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a `(seed, parts...)` tuple, so every random stream depends
/// only on where it is used and never on evaluation order.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(seed), |h, p| splitmix64(h ^ splitmix64(*p)))
}

/// Fold index per clip; clips of one speaker always share a fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, clip_id: &str) -> Option<usize> {
        self.assignments.get(clip_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for f in self.assignments.values() {
            sizes[*f] += 1;
        }
        sizes
    }
}

/// Shuffles speakers by `seed`, orders them by descending clip count (stable,
/// so the shuffle breaks ties) and gives each to the currently smallest fold.
/// `clips` are `(clip_id, speaker_id)` pairs; their order does not matter.
pub fn make_folds(clips: &[(&str, &str)], k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::InvalidParameter("fold count must be at least 1".into()));
    }
    let mut per_speaker: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (clip, speaker) in clips {
        if !seen.insert(*clip) {
            return Err(Error::Manifest(format!("duplicate clip_id {clip}")));
        }
        per_speaker.entry(speaker).or_default().push(clip);
    }
    if per_speaker.len() < k {
        return Err(Error::TooFewSpeakers { speakers: per_speaker.len(), folds: k });
    }
    let mut speakers: Vec<(&str, Vec<&str>)> = per_speaker.into_iter().collect();
    speakers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    speakers.sort_by_key(|s| std::cmp::Reverse(s.1.len()));

    let mut sizes = vec![0usize; k];
    let mut assignments = BTreeMap::new();
    for (_, clips) in speakers {
        let fold = (0..k).min_by_key(|&f| (sizes[f], f)).expect("k >= 1");
        sizes[fold] += clips.len();
        for c in clips {
            assignments.insert(c.to_string(), fold);
        }
    }
    Ok(FoldPlan { k, seed, assignments })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub m: Vec<usize>,
    pub lambda: Vec<f64>,
    pub cost: Vec<f64>,
    /// Kernel widths before division by the median training χ² distance.
    pub gamma: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            m: vec![200, 400, 800],
            lambda: vec![0.05, 0.1, 0.2, 0.4],
            cost: vec![0.1, 1.0, 10.0, 100.0],
            gamma: vec![2f64.powi(-8), 2f64.powi(-6), 2f64.powi(-4), 2f64.powi(-2), 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub m: usize,
    pub lambda: f64,
    pub cost: f64,
    pub gamma: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m.is_empty() || self.lambda.is_empty() || self.cost.is_empty() || self.gamma.is_empty() {
            return Err(Error::InvalidParameter("every grid axis needs at least one value".into()));
        }
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if self.m.contains(&0) || !self.lambda.iter().all(|l| *l >= 0.0 && l.is_finite()) || !self.cost.iter().all(positive) || !self.gamma.iter().all(positive) {
            return Err(Error::InvalidParameter("grid values out of range".into()));
        }
        Ok(())
    }

    /// All points, `m` varying slowest and `gamma` fastest.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &m in &self.m {
            for &lambda in &self.lambda {
                for &cost in &self.cost {
                    for &gamma in &self.gamma {
                        out.push(GridPoint { m, lambda, cost, gamma });
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.m.len() * self.lambda.len() * self.cost.len() * self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k_outer: usize,
    pub k_inner: usize,
    pub seed: u64,
    /// Template for dictionary learning; `m`, `lambda` and `seed` are set per
    /// grid point and split.
    pub learn: LearnConfig,
    pub features: FeatureParams,
    pub pool: PoolOptions,
    /// Score inner folds with the outer-training dictionary instead of
    /// learning one per inner split.
    pub reuse_dict: bool,
    /// Patches sampled per clip for dictionary learning; all when `None`.
    pub max_patches_per_clip: Option<usize>,
    pub svm_eps: f64,
    pub traits: Vec<Trait>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k_outer: 3,
            k_inner: 5,
            seed: 0,
            learn: LearnConfig::default(),
            features: FeatureParams::default(),
            pool: PoolOptions::default(),
            reuse_dict: false,
            max_patches_per_clip: None,
            svm_eps: 1e-3,
            traits: Trait::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub fold: usize,
    pub point: GridPoint,
    /// `gamma` divided by the median training distance.
    pub gamma_effective: f64,
    pub uar: f64,
    /// Mean inner-fold UAR of the chosen point; `None` for a one-point grid.
    pub inner_uar: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub dictionary_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitSummary {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub mean_uar: f64,
    /// Population standard deviation over outer folds.
    pub std_uar: f64,
    pub fold_uar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub traits: Vec<TraitSummary>,
    pub mean_uar: f64,
    pub seed: u64,
    pub fold_sizes: Vec<usize>,
    pub folds: Vec<FoldResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub results: Vec<FoldResult>,
    pub plan: FoldPlan,
}

impl CvReport {
    /// `trait,fold,m,lambda,C,gamma,uar`, with the grid value of gamma.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trait", "fold", "m", "lambda", "C", "gamma", "uar"])?;
        for r in &self.results {
            w.write_record([
                r.trait_.to_string(),
                r.fold.to_string(),
                r.point.m.to_string(),
                format!("{:?}", r.point.lambda),
                format!("{:?}", r.point.cost),
                format!("{:?}", r.point.gamma),
                format!("{:?}", r.uar),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> CvSummary {
        let mut traits = Vec::new();
        for t in Trait::ALL {
            let fold_uar: Vec<f64> = self.results.iter().filter(|r| r.trait_ == t).map(|r| r.uar).collect();
            if fold_uar.is_empty() {
                continue;
            }
            let n = fold_uar.len() as f64;
            let mean = fold_uar.iter().sum::<f64>() / n;
            let std = (fold_uar.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / n).sqrt();
            traits.push(TraitSummary { trait_: t, mean_uar: mean, std_uar: std, fold_uar });
        }
        let mean_uar = traits.iter().map(|t| t.mean_uar).sum::<f64>() / traits.len().max(1) as f64;
        CvSummary {
            traits,
            mean_uar,
            seed: self.plan.seed,
            fold_sizes: self.plan.fold_sizes(),
            folds: self.results.clone(),
        }
    }

    pub fn mean_uar(&self) -> f64 {
        self.summary().mean_uar
    }
}

// seed-derivation tags
const TAG_OUTER: u64 = 1;
const TAG_INNER: u64 = 2;
const TAG_DICT: u64 = 3;
const TAG_PATCHES: u64 = 4;

struct Encoded {
    digest: Digest,
    /// Histogram per clip index; only the clips the dictionary was asked to encode.
    hists: HashMap<usize, Vec<f64>>,
}

struct Pipeline<'a> {
    clips: &'a [&'a ClipFeatures],
    cfg: &'a CvConfig,
}

impl Pipeline<'_> {
    /// Learns a dictionary on `train` and encodes `encode`.
    fn dictionary(&self, train: &[usize], encode: &[usize], m: usize, lambda: f64, seed: u64) -> Result<Encoded> {
        let train_clips: Vec<&ClipFeatures> = train.iter().map(|&i| self.clips[i]).collect();
        let patches = training_patches(
            &train_clips,
            &self.cfg.features.grid,
            self.cfg.max_patches_per_clip,
            derive_seed(seed, &[TAG_PATCHES]),
        )?;
        let learn_cfg = LearnConfig { m, lambda, seed, ..self.cfg.learn.clone() };
        let mut dict: Dictionary = learn(&patches, &learn_cfg)?;
        dict.meta.patch_grid = Some(self.cfg.features.grid);
        dict.meta.spectrogram = Some(self.cfg.features.spectrogram);
        let digest = dict.digest()?;
        let enc_clips: Vec<&ClipFeatures> = encode.iter().map(|&i| self.clips[i]).collect();
        let hists = encode_clips(&dict, &enc_clips, &self.cfg.features.grid, self.cfg.pool)?;
        Ok(Encoded { digest, hists: encode.iter().copied().zip(hists).collect() })
    }
}

fn labels_for(clips: &[&ClipFeatures], idx: &[usize], t: Trait) -> Vec<Label> {
    idx.iter().map(|&i| clips[i].labels.expect("checked on entry")[t.index()]).collect()
}

/// Scores every `(C, γ)` pair for one trait on a train/validation split;
/// `None` where the split cannot be scored (a class missing).
#[allow(clippy::too_many_arguments)]
fn score_split(
    enc: &Encoded,
    clips: &[&ClipFeatures],
    train: &[usize],
    val: &[usize],
    t: Trait,
    grid: &GridSpec,
    eps: f64,
    dist: &ndarray::Array2<f64>,
    median: f64,
) -> Result<Vec<f64>> {
    let y_train = labels_for(clips, train, t);
    let y_val = labels_for(clips, val, t);
    let train_h: Vec<&[f64]> = train.iter().map(|i| enc.hists[i].as_slice()).collect();
    let mut out = Vec::with_capacity(grid.cost.len() * grid.gamma.len());
    for &cost in &grid.cost {
        for &gamma in &grid.gamma {
            let params = SvmParams { eps, ..SvmParams::with_cost(cost) };
            let model = match train_with_distances(&train_h, &y_train, dist.view(), t, KernelParams { gamma: gamma / median }, &params) {
                Ok(m) => m,
                Err(Error::SingleClass) => {
                    out.push(0.5);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let preds = val
                .iter()
                .map(|i| Ok(Label::from_decision(model.decision_value(&enc.hists[i])?)))
                .collect::<Result<Vec<_>>>()?;
            out.push(match uar(&y_val, &preds) {
                Ok(u) => u,
                Err(Error::MissingClass) => 0.5,
                Err(e) => return Err(e),
            });
        }
    }
    Ok(out)
}

/// Nested, speaker-grouped cross-validation. For each outer fold, inner
/// folds on the outer-training clips pick the grid point with the best mean
/// UAR (first in grid order on ties) per trait; the pipeline is then refit on
/// all outer-training clips and scored on the held-out fold. Dictionaries are
/// only ever learned from training-side clips.
pub fn nested_cv(clips: &[ClipFeatures], grid: &GridSpec, cfg: &CvConfig) -> Result<CvReport> {
    grid.validate()?;
    cfg.learn.validate()?;
    if cfg.traits.is_empty() {
        return Err(Error::InvalidParameter("no traits to evaluate".into()));
    }
    if cfg.k_outer < 2 || cfg.k_inner < 2 {
        return Err(Error::InvalidParameter("fold counts must be at least 2".into()));
    }
    if let Some(c) = clips.iter().find(|c| c.labels.is_none()) {
        return Err(Error::Manifest(format!("clip {} has no labels", c.clip_id)));
    }
    // canonical order: results must not depend on manifest row order
    let mut sorted: Vec<&ClipFeatures> = clips.iter().collect();
    sorted.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let pairs: Vec<(&str, &str)> = sorted.iter().map(|c| (c.clip_id.as_str(), c.speaker_id.as_str())).collect();
    let plan = make_folds(&pairs, cfg.k_outer, derive_seed(cfg.seed, &[TAG_OUTER]))?;
    let fold_of: Vec<usize> = sorted.iter().map(|c| plan.assignments[&c.clip_id]).collect();
    let pipe = Pipeline { clips: &sorted, cfg };
    let all: Vec<usize> = (0..sorted.len()).collect();

    let dict_axes: Vec<(usize, usize)> = (0..grid.m.len()).flat_map(|a| (0..grid.lambda.len()).map(move |b| (a, b))).collect();
    let svm_points = grid.cost.len() * grid.gamma.len();
    let dict_seed = |outer: usize, inner: Option<usize>, (mi, li): (usize, usize)| {
        derive_seed(cfg.seed, &[TAG_DICT, outer as u64, inner.map_or(u64::MAX, |i| i as u64), mi as u64, li as u64])
    };

    let mut results = Vec::new();
    for outer in 0..cfg.k_outer {
        let train: Vec<usize> = all.iter().copied().filter(|&i| fold_of[i] != outer).collect();
        let test: Vec<usize> = all.iter().copied().filter(|&i| fold_of[i] == outer).collect();
        let mut outer_dicts: HashMap<(usize, usize), Encoded> = HashMap::new();
        let outer_dict = |key: (usize, usize), cache: &mut HashMap<(usize, usize), Encoded>| -> Result<()> {
            if !cache.contains_key(&key) {
                log::info!("fold {outer}: learning dictionary m={} lambda={}", grid.m[key.0], grid.lambda[key.1]);
                let enc = pipe.dictionary(&train, &all, grid.m[key.0], grid.lambda[key.1], dict_seed(outer, None, key))?;
                cache.insert(key, enc);
            }
            Ok(())
        };

        // chosen (dict axis, svm index, mean inner uar) per trait
        let mut chosen: Vec<((usize, usize), usize, Option<f64>)> = vec![((0, 0), 0, None); cfg.traits.len()];
        if grid.len() > 1 {
            let train_pairs: Vec<(&str, &str)> = train.iter().map(|&i| pairs[i]).collect();
            let inner_plan = make_folds(&train_pairs, cfg.k_inner, derive_seed(cfg.seed, &[TAG_INNER, outer as u64]))?;
            let inner_fold: Vec<usize> = train.iter().map(|&i| inner_plan.assignments[&sorted[i].clip_id]).collect();
            // scores[trait][dict axis][svm point], summed over inner folds
            let mut scores = vec![vec![vec![0.0; svm_points]; dict_axes.len()]; cfg.traits.len()];
            for (ai, &key) in dict_axes.iter().enumerate() {
                if cfg.reuse_dict {
                    outer_dict(key, &mut outer_dicts)?;
                }
                for inner in 0..cfg.k_inner {
                    let itrain: Vec<usize> = train.iter().zip(&inner_fold).filter(|(_, f)| **f != inner).map(|(i, _)| *i).collect();
                    let ival: Vec<usize> = train.iter().zip(&inner_fold).filter(|(_, f)| **f == inner).map(|(i, _)| *i).collect();
                    let fresh;
                    let enc = if cfg.reuse_dict {
                        &outer_dicts[&key]
                    } else {
                        log::info!("fold {outer}.{inner}: learning dictionary m={} lambda={}", grid.m[key.0], grid.lambda[key.1]);
                        fresh = pipe.dictionary(&itrain, &train, grid.m[key.0], grid.lambda[key.1], dict_seed(outer, Some(inner), key))?;
                        &fresh
                    };
                    let train_h: Vec<&[f64]> = itrain.iter().map(|i| enc.hists[i].as_slice()).collect();
                    let dist = chi2_matrix(&train_h)?;
                    let median = median_pairwise(dist.view());
                    for (ti, &t) in cfg.traits.iter().enumerate() {
                        let s = score_split(enc, &sorted, &itrain, &ival, t, grid, cfg.svm_eps, &dist, median)?;
                        for (acc, v) in scores[ti][ai].iter_mut().zip(s) {
                            *acc += v;
                        }
                    }
                }
            }
            for (ti, per_trait) in scores.iter().enumerate() {
                let mut best = (f64::NEG_INFINITY, (0, 0), 0);
                for (ai, row) in per_trait.iter().enumerate() {
                    for (si, v) in row.iter().enumerate() {
                        if *v > best.0 {
                            best = (*v, dict_axes[ai], si);
                        }
                    }
                }
                chosen[ti] = (best.1, best.2, Some(best.0 / cfg.k_inner as f64));
            }
        }

        for (ti, &t) in cfg.traits.iter().enumerate() {
            let (key, si, inner_uar) = chosen[ti];
            outer_dict(key, &mut outer_dicts)?;
            let enc = &outer_dicts[&key];
            let point = GridPoint {
                m: grid.m[key.0],
                lambda: grid.lambda[key.1],
                cost: grid.cost[si / grid.gamma.len()],
                gamma: grid.gamma[si % grid.gamma.len()],
            };
            let train_h: Vec<&[f64]> = train.iter().map(|i| enc.hists[i].as_slice()).collect();
            let dist = chi2_matrix(&train_h)?;
            let gamma_effective = point.gamma / median_pairwise(dist.view());
            let params = SvmParams { eps: cfg.svm_eps, ..SvmParams::with_cost(point.cost) };
            let model = train_with_distances(&train_h, &labels_for(&sorted, &train, t), dist.view(), t, KernelParams { gamma: gamma_effective }, &params)?;
            let preds = test
                .iter()
                .map(|i| Ok(Label::from_decision(model.decision_value(&enc.hists[i])?)))
                .collect::<Result<Vec<_>>>()?;
            let u = uar(&labels_for(&sorted, &test, t), &preds)?;
            log::info!("fold {outer} trait {t}: uar {u:.4} at m={} lambda={} C={} gamma={}", point.m, point.lambda, point.cost, point.gamma);
            results.push(FoldResult {
                trait_: t,
                fold: outer,
                point,
                gamma_effective,
                uar: u,
                inner_uar,
                n_train: train.len(),
                n_test: test.len(),
                dictionary_digest: enc.digest,
            });
        }
    }
    results.sort_by_key(|r| (r.trait_, r.fold));
    Ok(CvReport { results, plan })
}
