//! Non-negative, unit-ball dictionary learning by alternating Lasso coding
//! and projected block-coordinate atom updates.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Digest, Reader, Writer};
use crate::error::{Error, Result};
use crate::patches::{PatchGrid, PatchMatrix};
use crate::sparse::{LassoParams, LassoSolver};
use crate::spectrogram::SpectrogramParams;

pub const DICTIONARY_VERSION: u32 = 1;

/// Slack allowed on the unit-norm constraint.
pub const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    /// Number of atoms.
    pub m: usize,
    pub lambda: f64,
    pub n_iters: usize,
    /// Patches drawn per alternation; `>= k` means full batch.
    pub batch: usize,
    pub seed: u64,
    /// Patches held out for the objective trace.
    pub probe_size: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            m: 200,
            lambda: 0.1,
            n_iters: 200,
            batch: 10_000,
            seed: 0,
            probe_size: 1000,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_iters == 0 || self.batch == 0 {
            return Err(Error::InvalidParameter(
                "m, n_iters and batch must be at least 1".into(),
            ));
        }
        LassoParams::new(self.lambda).validate()
    }

    pub fn lasso(&self) -> LassoParams {
        LassoParams::new(self.lambda)
    }
}

/// Parameters a dictionary was learned with; enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryMeta {
    pub learn: LearnConfig,
    pub patch_grid: Option<PatchGrid>,
    pub spectrogram: Option<SpectrogramParams>,
    pub sample_rate: Option<u32>,
    pub n_training_patches: usize,
    /// `(iteration, probe objective)` pairs.
    pub objective_trace: Vec<(usize, f64)>,
}

/// `d x m` atom matrix; every atom is non-negative with ℓ2 norm at most 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub atoms: Array2<f64>,
    pub meta: DictionaryMeta,
}

impl Dictionary {
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    /// Checks non-negativity, the unit-ball constraint and finiteness.
    pub fn check_invariants(&self) -> Result<()> {
        for (j, atom) in self.atoms.axis_iter(Axis(1)).enumerate() {
            if atom.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "atom {j} has a negative or non-finite entry"
                )));
            }
            let norm = atom.dot(&atom).sqrt();
            if norm > 1.0 + NORM_SLACK {
                return Err(Error::InvalidParameter(format!("atom {j} has norm {norm}")));
            }
        }
        Ok(())
    }

    /// `SPDL` container: magic, u32 version, u32 d, u32 m, `d*m` f64 column
    /// by column, then the JSON metadata.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(b"SPDL", DICTIONARY_VERSION);
        w.len_u32(self.dim())?;
        w.len_u32(self.n_atoms())?;
        for atom in self.atoms.axis_iter(Axis(1)) {
            for v in atom {
                w.f64(*v);
            }
        }
        w.json(&self.meta)?;
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open(bytes, b"SPDL")?;
        if version != DICTIONARY_VERSION {
            return Err(Error::Format(format!("unsupported SPDL version {version}")));
        }
        let d = r.u32()? as usize;
        let m = r.u32()? as usize;
        let data = r.f64s(d * m)?;
        let meta = r.json()?;
        r.expect_end()?;
        let atoms = Array2::from_shape_vec((m, d), data)
            .expect("length checked")
            .reversed_axes()
            .as_standard_layout()
            .into_owned();
        Ok(Dictionary { atoms, meta })
    }

    pub fn digest(&self) -> Result<Digest> {
        Ok(Digest::of(&self.to_bytes()?))
    }
}

/// Euclidean projection onto `{x ≥ 0, ‖x‖₂ ≤ 1}`: clip negatives, then
/// rescale if the norm exceeds one.
pub fn project_atom(v: ArrayView1<f64>) -> Array1<f64> {
    let mut w = v.to_owned();
    project_in_place(w.view_mut().into_slice().expect("owned is contiguous"));
    w
}

fn project_in_place(w: &mut [f64]) {
    for x in w.iter_mut() {
        *x = x.max(0.0);
    }
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1.0 {
        for x in w.iter_mut() {
            *x /= norm;
        }
    }
}

/// Picks `m` distinct nonzero patch columns in seeded random order, clipped
/// at zero and scaled to unit norm.
pub fn init_dictionary(patches: &PatchMatrix, cfg: &LearnConfig) -> Result<Dictionary> {
    cfg.validate()?;
    let k = patches.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let d = patches.dim();
    let mut atoms = Array2::zeros((d, cfg.m));
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut filled = 0;
    for &c in &order {
        if filled == cfg.m {
            break;
        }
        let col = patches.columns.column(c);
        let clipped: Vec<f64> = col.iter().map(|v| v.max(0.0)).collect();
        let norm = clipped.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            continue;
        }
        if !seen.insert(col.iter().map(|v| v.to_bits()).collect()) {
            continue;
        }
        for (dst, v) in atoms.column_mut(filled).iter_mut().zip(&clipped) {
            *dst = v / norm;
        }
        filled += 1;
    }
    if filled < cfg.m {
        return Err(Error::NotEnoughPatches {
            needed: cfg.m,
            found: filled,
        });
    }
    Ok(Dictionary {
        atoms,
        meta: DictionaryMeta {
            learn: cfg.clone(),
            patch_grid: None,
            spectrogram: None,
            sample_rate: None,
            n_training_patches: k,
            objective_trace: Vec::new(),
        },
    })
}

/// `½‖P − DC‖²`.
pub fn reconstruction_error(patches: ArrayView2<f64>, codes: ArrayView2<f64>, atoms: ArrayView2<f64>) -> f64 {
    let resid = &patches - &atoms.dot(&codes);
    0.5 * resid.iter().map(|r| r * r).sum::<f64>()
}

/// `½‖P − DC‖² + λ‖C‖₁`.
pub fn full_objective(patches: ArrayView2<f64>, codes: ArrayView2<f64>, atoms: ArrayView2<f64>, lambda: f64) -> f64 {
    reconstruction_error(patches, codes, atoms) + lambda * codes.iter().map(|c| c.abs()).sum::<f64>()
}

/// One projected block-coordinate pass over the atoms with the codes held
/// fixed. With `A = CCᵀ` and `B = PCᵀ`, atom `j` becomes
/// `Π(dⱼ + (Bⱼ − D Aⱼ) / Aⱼⱼ)`. Atoms whose code row is all zero are replaced
/// by the worst-reconstructed patches of the batch, projected.
pub fn dict_update(patches: ArrayView2<f64>, codes: ArrayView2<f64>, atoms: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (d, k) = patches.dim();
    let (m, kc) = codes.dim();
    if kc != k || atoms.dim() != (d, m) {
        return Err(Error::DimensionMismatch(format!(
            "patches {d}x{k}, codes {m}x{kc}, atoms {}x{}",
            atoms.nrows(),
            atoms.ncols()
        )));
    }
    let a = codes.dot(&codes.t());
    let b = patches.dot(&codes.t());

    // worst-reconstructed patches first, lowest index on ties
    let dead: Vec<usize> = (0..m).filter(|&j| a[[j, j]] <= 0.0).collect();
    let mut replacements = Vec::new();
    if !dead.is_empty() {
        let resid = &patches - &atoms.dot(&codes);
        let mut errs: Vec<(usize, f64)> = resid
            .axis_iter(Axis(1))
            .map(|r| r.dot(&r))
            .enumerate()
            .collect();
        errs.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        replacements = errs.into_iter().map(|(i, _)| i).collect();
    }

    // column-major working copy so each atom is a contiguous slice
    let mut work: Vec<f64> = atoms.t().iter().copied().collect();
    let mut next_replacement = replacements.into_iter();
    let mut d_aj = vec![0.0; d];
    for j in 0..m {
        let ajj = a[[j, j]];
        if ajj <= 0.0 {
            for cand in next_replacement.by_ref() {
                let mut w: Vec<f64> = patches.column(cand).to_vec();
                project_in_place(&mut w);
                if w.iter().any(|v| *v > 0.0) {
                    work[j * d..(j + 1) * d].copy_from_slice(&w);
                    break;
                }
            }
            continue;
        }
        d_aj.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..m {
            let coef = a[[l, j]];
            if coef != 0.0 {
                for (acc, x) in d_aj.iter_mut().zip(&work[l * d..(l + 1) * d]) {
                    *acc += x * coef;
                }
            }
        }
        let atom = &mut work[j * d..(j + 1) * d];
        for ((x, bij), dij) in atom.iter_mut().zip(b.column(j)).zip(&d_aj) {
            *x += (bij - dij) / ajj;
        }
        project_in_place(atom);
    }
    Ok(Array2::from_shape_vec((m, d), work)
        .expect("sized above")
        .reversed_axes()
        .as_standard_layout()
        .into_owned())
}

/// A learned dictionary together with its probe-objective trace.
pub fn learn(patches: &PatchMatrix, cfg: &LearnConfig) -> Result<Dictionary> {
    cfg.validate()?;
    if patches.is_empty() {
        return Err(Error::Empty("patch matrix"));
    }
    let mut dict = init_dictionary(patches, cfg)?;
    let k = patches.len();
    let params = cfg.lasso();

    // probe and batch draws use separate streams so the probe is fixed
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x3c6e_f372_fe94_f82b));
    let probe_idx = sorted_sample(&mut probe_rng, k, cfg.probe_size);
    let probe = patches.columns.select(Axis(1), &probe_idx);

    let probe_objective = |atoms: &Array2<f64>| -> Result<f64> {
        let codes = LassoSolver::new(atoms.view(), params)?.solve_columns(probe.view())?;
        Ok(full_objective(probe.view(), codes.view(), atoms.view(), cfg.lambda))
    };

    let mut trace = vec![(0, probe_objective(&dict.atoms)?)];
    for it in 1..=cfg.n_iters {
        let (batch_cols, codes) = if cfg.batch >= k {
            let codes = LassoSolver::new(dict.atoms.view(), params)?.solve_columns(patches.columns.view())?;
            (None, codes)
        } else {
            let idx = sorted_sample(&mut batch_rng, k, cfg.batch);
            let cols = patches.columns.select(Axis(1), &idx);
            let codes = LassoSolver::new(dict.atoms.view(), params)?.solve_columns(cols.view())?;
            (Some(cols), codes)
        };
        let batch_view = batch_cols.as_ref().map_or(patches.columns.view(), |c| c.view());
        dict.atoms = dict_update(batch_view, codes.view(), dict.atoms.view())?;
        if it % 10 == 0 || it == cfg.n_iters {
            let obj = probe_objective(&dict.atoms)?;
            log::debug!("dictionary iteration {it}: probe objective {obj:.6}");
            trace.push((it, obj));
        }
    }
    dict.meta.objective_trace = trace;
    Ok(dict)
}

fn sorted_sample(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Vec<usize> {
    if n >= k {
        return (0..k).collect();
    }
    let mut idx = index::sample(rng, k, n).into_vec();
    idx.sort_unstable();
    idx
}
