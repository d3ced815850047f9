//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use patchcode::audio::load_wav;
use patchcode::container::Digest;
use patchcode::dictionary::{learn, Dictionary};
use patchcode::eval::{nested_cv, uar};
use patchcode::features::{encode_clips, load_clips, training_patches, ClipFeatures, FeatureParams};
use patchcode::manifest::{read_manifest, Label, ManifestEntry};
use patchcode::pool::{Histogram, HistogramSet};
use patchcode::spectrogram::spectrogram;
use patchcode::svm::{chi2_matrix, median_pairwise, train_with_distances, KernelParams, ModelMeta, SvmParams, TraitModel};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::{CliError, Outcome};

fn manifest_entries(cfg: &RunConfig) -> Result<Vec<ManifestEntry>, CliError> {
    let entries = read_manifest(cfg.manifest()?)?;
    if entries.is_empty() {
        return Err(CliError::Invalid("no clips".into()));
    }
    Ok(entries)
}

/// Loads every clip, reporting and skipping failures.
fn load_features(entries: &[ManifestEntry], params: &FeatureParams) -> Result<(Vec<ClipFeatures>, usize), CliError> {
    params.validate()?;
    let mut ok = Vec::new();
    let mut failed = 0;
    for (entry, res) in entries.iter().zip(load_clips(entries, params)) {
        match res {
            Ok(c) => ok.push(c),
            Err(e) => {
                eprintln!("error: clip {}: {e}", entry.clip_id);
                failed += 1;
            }
        }
    }
    if ok.is_empty() {
        return Err(CliError::Invalid("no usable clips".into()));
    }
    Ok((ok, failed))
}

fn outcome(failed: usize) -> Outcome {
    if failed == 0 {
        Outcome::Complete
    } else {
        Outcome::Partial(failed)
    }
}

/// File-name-safe version of a clip id.
fn file_stem(clip_id: &str) -> String {
    clip_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(patchcode::Error::from)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Invalid(format!("cannot write {}: {e}", path.display())))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn load_dictionary(path: &Path) -> Result<(Dictionary, Digest), CliError> {
    let bytes = read(path)?;
    Ok((Dictionary::from_bytes(&bytes)?, Digest::of(&bytes)))
}

/// Front-end parameters a dictionary was learned with, falling back to the
/// run configuration for dictionaries that do not record them.
fn dictionary_features(dict: &Dictionary, cfg: &RunConfig) -> FeatureParams {
    FeatureParams {
        spectrogram: dict.meta.spectrogram.unwrap_or(cfg.spectrogram),
        grid: dict.meta.patch_grid.unwrap_or(cfg.patch_grid),
    }
}

pub fn spectro(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let entries = manifest_entries(cfg)?;
    let out = cfg.out()?;
    cfg.spectrogram.validate()?;
    fs::create_dir_all(out).map_err(patchcode::Error::from)?;
    let results: Vec<_> = entries
        .par_iter()
        .map(|e| {
            let clip = load_wav(&e.path, &e.clip_id, &e.speaker_id)?;
            spectrogram(&clip, &cfg.spectrogram)
        })
        .collect();
    let mut failed = 0;
    for (e, res) in entries.iter().zip(results) {
        match res {
            Ok(spec) => {
                write(&out.join(format!("{}.spgm", file_stem(&e.clip_id))), &spec.to_bytes())?;
                println!("{}\t{}x{}", e.clip_id, spec.n_bins(), spec.n_frames());
            }
            Err(err) => {
                eprintln!("error: clip {}: {err}", e.clip_id);
                failed += 1;
            }
        }
    }
    Ok(outcome(failed))
}

pub fn learn_dict(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let entries = manifest_entries(cfg)?;
    let out = cfg.out()?;
    let features = cfg.features();
    let max_m = features.grid.dim() * 10;
    if cfg.learn.m == 0 || cfg.learn.m > max_m {
        return Err(CliError::Invalid(format!("m must be in 1..={max_m}, got {}", cfg.learn.m)));
    }
    let learn_cfg = cfg.learn_config();
    learn_cfg.validate()?;
    let (clips, failed) = load_features(&entries, &features)?;
    let refs: Vec<&ClipFeatures> = clips.iter().collect();
    let patches = training_patches(&refs, &features.grid, cfg.max_patches_per_clip, cfg.seed)?;
    log::info!("learning {} atoms from {} patches", learn_cfg.m, patches.len());
    let mut dict = learn(&patches, &learn_cfg)?;
    dict.meta.patch_grid = Some(features.grid);
    dict.meta.spectrogram = Some(features.spectrogram);
    let rate = clips[0].sample_rate;
    dict.meta.sample_rate = clips.iter().all(|c| c.sample_rate == rate).then_some(rate);
    for (it, obj) in &dict.meta.objective_trace {
        println!("iter {it}\tobjective {obj:.6}");
    }
    let bytes = dict.to_bytes()?;
    write(out, &bytes)?;
    println!("dictionary {} ({}x{}) sha256 {}", out.display(), dict.dim(), dict.n_atoms(), Digest::of(&bytes));
    Ok(outcome(failed))
}

fn encode_manifest(cfg: &RunConfig, dict: &Dictionary, digest: Digest) -> Result<(HistogramSet, usize), CliError> {
    let entries = manifest_entries(cfg)?;
    let features = dictionary_features(dict, cfg);
    let (clips, failed) = load_features(&entries, &features)?;
    let refs: Vec<&ClipFeatures> = clips.iter().collect();
    let bins = encode_clips(dict, &refs, &features.grid, cfg.pool)?;
    let histograms = clips
        .iter()
        .zip(bins)
        .map(|(c, bins)| Histogram {
            bins,
            clip_id: c.clip_id.clone(),
            speaker_id: c.speaker_id.clone(),
            labels: c.labels,
        })
        .collect();
    let set = HistogramSet {
        histograms,
        pool: cfg.pool,
        dictionary_digest: Some(digest),
        seed: Some(dict.meta.learn.seed),
    };
    Ok((set, failed))
}

pub fn encode(cfg: &RunConfig, dict_path: &Path, csv_dir: Option<&Path>) -> Result<Outcome, CliError> {
    let out = cfg.out()?;
    let (dict, digest) = load_dictionary(dict_path)?;
    let (set, failed) = encode_manifest(cfg, &dict, digest)?;
    write(out, &set.to_bytes()?)?;
    if let Some(dir) = csv_dir {
        fs::create_dir_all(dir).map_err(patchcode::Error::from)?;
        for t in &cfg.traits {
            let path = dir.join(format!("histograms_{t}.csv"));
            let file = fs::File::create(&path).map_err(patchcode::Error::from)?;
            set.write_csv(file, *t)?;
        }
    }
    println!("{} histograms of {} bins -> {}", set.histograms.len(), set.n_bins(), out.display());
    Ok(outcome(failed))
}

pub struct TrainOptions {
    pub cost: f64,
    pub gamma: f64,
    pub pos_weight: Option<f64>,
}

fn refuse_mismatch(expected: Option<Digest>, found: Digest) -> Result<(), CliError> {
    if expected != Some(found) {
        return Err(CliError::Invalid(format!(
            "refusing: histograms were encoded with dictionary {}, but the given dictionary is {found}",
            expected.map_or("<unknown>".into(), |d| d.to_hex())
        )));
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, hist_path: &Path, dict_path: &Path, opts: &TrainOptions) -> Result<Outcome, CliError> {
    let out = cfg.out()?;
    let set = HistogramSet::from_bytes(&read(hist_path)?)?;
    let (dict, digest) = load_dictionary(dict_path)?;
    refuse_mismatch(set.dictionary_digest, digest)?;
    if let Some(h) = set.histograms.iter().find(|h| h.labels.is_none()) {
        return Err(CliError::Invalid(format!("clip {} has no labels", h.clip_id)));
    }
    let hists: Vec<&[f64]> = set.histograms.iter().map(|h| h.bins.as_slice()).collect();
    let dist = chi2_matrix(&hists)?;
    let median = median_pairwise(dist.view());
    let features = dictionary_features(&dict, cfg);
    fs::create_dir_all(out).map_err(patchcode::Error::from)?;
    for &t in &cfg.traits {
        let labels: Vec<Label> = set.histograms.iter().map(|h| h.label(t).expect("checked")).collect();
        let params = SvmParams {
            pos_weight: opts.pos_weight,
            eps: cfg.svm_eps,
            ..SvmParams::with_cost(opts.cost)
        };
        let mut model = train_with_distances(&hists, &labels, dist.view(), t, KernelParams { gamma: opts.gamma / median }, &params)?;
        model.dictionary_digest = Some(digest);
        model.meta = ModelMeta {
            seed: Some(cfg.seed),
            spectrogram: Some(features.spectrogram),
            patch_grid: Some(features.grid),
            lambda: Some(dict.meta.learn.lambda),
            pool: set.pool,
            gamma_grid_value: Some(opts.gamma),
            ..model.meta
        };
        let preds = hists
            .iter()
            .map(|h| Ok(Label::from_decision(model.decision_value(h)?)))
            .collect::<Result<Vec<_>, patchcode::Error>>()?;
        let path = out.join(format!("model_{t}.spsv"));
        write(&path, &model.to_bytes()?)?;
        println!(
            "trait {t}: {} support vectors, training UAR {:.4} -> {}",
            model.n_support(),
            uar(&labels, &preds)?,
            path.display()
        );
    }
    Ok(Outcome::Complete)
}

fn model_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(patchcode::Error::from)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "spsv"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Invalid("no model files found".into()));
    }
    Ok(out)
}

pub fn predict(cfg: &RunConfig, dict_path: &Path, models: &[PathBuf], hist_path: Option<&Path>) -> Result<Outcome, CliError> {
    let out = cfg.out()?;
    let (dict, digest) = load_dictionary(dict_path)?;
    let models: Vec<TraitModel> = model_paths(models)?
        .iter()
        .map(|p| Ok(TraitModel::from_bytes(&read(p)?)?))
        .collect::<Result<_, CliError>>()?;
    for m in &models {
        if m.dictionary_digest != Some(digest) {
            return Err(CliError::Invalid(format!(
                "refusing: model for trait {} was trained with dictionary {}, not {digest}",
                m.trait_,
                m.dictionary_digest.map_or("<unknown>".into(), |d| d.to_hex())
            )));
        }
    }
    let (set, failed) = match hist_path {
        Some(p) => {
            let set = HistogramSet::from_bytes(&read(p)?)?;
            refuse_mismatch(set.dictionary_digest, digest)?;
            (set, 0)
        }
        None => encode_manifest(cfg, &dict, digest)?,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(patchcode::Error::from)?;
    }
    let mut w = csv::Writer::from_path(out).map_err(patchcode::Error::from)?;
    w.write_record(["clip_id", "trait", "label", "decision_value"]).map_err(patchcode::Error::from)?;
    for h in &set.histograms {
        for m in &models {
            let (label, value) = m.predict(&h.bins, set.dictionary_digest.as_ref())?;
            w.write_record([h.clip_id.clone(), m.trait_.to_string(), label.to_string(), format!("{value:?}")])
                .map_err(patchcode::Error::from)?;
        }
    }
    w.flush().map_err(patchcode::Error::from)?;
    println!("{} predictions -> {}", set.histograms.len() * models.len(), out.display());
    Ok(outcome(failed))
}

pub fn cv(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let entries = manifest_entries(cfg)?;
    let out = cfg.out()?;
    let cv_cfg = cfg.cv_config();
    let (clips, failed) = load_features(&entries, &cv_cfg.features)?;
    let report = nested_cv(&clips, &cfg.grid, &cv_cfg)?;
    fs::create_dir_all(out).map_err(patchcode::Error::from)?;
    let mut csv_bytes = Vec::new();
    report.write_csv(&mut csv_bytes)?;
    write(&out.join("results.csv"), &csv_bytes)?;
    let summary = report.summary();
    let json = serde_json::to_string_pretty(&summary).map_err(patchcode::Error::from)?;
    write(&out.join("summary.json"), json.as_bytes())?;
    let mut w = csv::Writer::from_path(out.join("folds.csv")).map_err(patchcode::Error::from)?;
    w.write_record(["clip_id", "speaker_id", "fold"]).map_err(patchcode::Error::from)?;
    for c in &clips {
        let fold = report.plan.fold_of(&c.clip_id).expect("every clip is assigned");
        w.write_record([c.clip_id.as_str(), c.speaker_id.as_str(), &fold.to_string()])
            .map_err(patchcode::Error::from)?;
    }
    w.flush().map_err(patchcode::Error::from)?;
    for t in &summary.traits {
        println!("trait {}: mean UAR {:.4} (std {:.4}) folds {:?}", t.trait_, t.mean_uar, t.std_uar, t.fold_uar);
    }
    println!("mean UAR {:.4}", summary.mean_uar);
    Ok(outcome(failed))
}
