//! Binary kernel SVM over histograms with the exponential χ² kernel and
//! per-class costs, trained by SMO on a precomputed kernel matrix.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{Digest, Reader, Writer};
use crate::error::{Error, Result};
use crate::manifest::{Label, Trait};
use crate::patches::PatchGrid;
use crate::pool::PoolOptions;
use crate::spectrogram::SpectrogramParams;

pub const MODEL_VERSION: u32 = 1;

/// Stand-in curvature when a working pair has `η ≤ 0`.
const TAU: f64 = 1e-12;

/// Dual coefficients at or below this are not support vectors.
const SV_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub gamma: f64,
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// `Σ (gᵢ − hᵢ)² / (gᵢ + hᵢ)`, skipping bins where both are zero.
pub fn chi2_distance(g: &[f64], h: &[f64]) -> Result<f64> {
    if g.len() != h.len() {
        return Err(Error::DimensionMismatch(format!("histograms of length {} and {}", g.len(), h.len())));
    }
    let mut d = 0.0;
    for (i, (&a, &b)) in g.iter().zip(h).enumerate() {
        if a < 0.0 || b < 0.0 {
            return Err(Error::NegativeBin(i));
        }
        let s = a + b;
        if s > 0.0 {
            d += (a - b) * (a - b) / s;
        }
    }
    Ok(d)
}

pub fn kernel(g: &[f64], h: &[f64], params: &KernelParams) -> Result<f64> {
    Ok((-params.gamma * chi2_distance(g, h)?).exp())
}

/// Symmetric matrix of pairwise χ² distances.
pub fn chi2_matrix(hists: &[&[f64]]) -> Result<Array2<f64>> {
    let n = hists.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..i).map(|j| chi2_distance(hists[i], hists[j])).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let mut d = Array2::zeros((n, n));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            d[[i, j]] = *v;
            d[[j, i]] = *v;
        }
    }
    Ok(d)
}

/// Distances between `a` rows and `b` columns.
pub fn chi2_cross(a: &[&[f64]], b: &[&[f64]]) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = a
        .par_iter()
        .map(|g| b.iter().map(|h| chi2_distance(g, h)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    Ok(Array2::from_shape_fn((a.len(), b.len()), |(i, j)| rows[i][j]))
}

/// Median of the strictly-upper-triangle distances; 1 when there are no
/// pairs or the median is zero, so it can always serve as a scale.
pub fn median_pairwise(dist: ArrayView2<f64>) -> f64 {
    let n = dist.nrows();
    let mut v: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| dist[[i, j]]).collect();
    if v.is_empty() {
        return 1.0;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    let med = if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) };
    if med > 0.0 { med } else { 1.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// Base cost; negatives use `cost`, positives `cost * pos_weight`.
    pub cost: f64,
    /// `None` means `n_neg / n_pos` of the training data.
    pub pos_weight: Option<f64>,
    /// Stop once the maximal KKT violation drops below this.
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            cost: 1.0,
            pos_weight: None,
            eps: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

impl SvmParams {
    pub fn with_cost(cost: f64) -> Self {
        SvmParams { cost, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision function is `Σ αᵢ yᵢ K(xᵢ, x) − rho`.
    pub rho: f64,
    pub iterations: usize,
    /// Final maximal violation `max_up(−yG) − min_low(−yG)`.
    pub gap: f64,
}

/// `½ αᵀQα − Σα` with `Qᵢⱼ = yᵢ yⱼ Kᵢⱼ`.
pub fn dual_objective(k: ArrayView2<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[[i, j]];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// Solves `min ½αᵀQα − Σα` s.t. `0 ≤ αᵢ ≤ costᵢ`, `yᵀα = 0` by SMO with
/// maximal-violating-pair selection. `y` holds ±1.
pub fn solve_dual(k: ArrayView2<f64>, y: &[f64], cost: &[f64], eps: f64, max_iter: usize) -> Result<DualSolution> {
    let n = y.len();
    if k.dim() != (n, n) || cost.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "kernel {}x{}, {} labels, {} costs",
            k.nrows(),
            k.ncols(),
            n,
            cost.len()
        )));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel matrix"));
    }
    if !y.iter().any(|v| *v > 0.0) || !y.iter().any(|v| *v < 0.0) {
        return Err(Error::SingleClass);
    }
    let q = |i: usize, j: usize| y[i] * y[j] * k[[i, j]];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let mut gap;
    loop {
        // i maximizes −yG over I_up, j minimizes it over I_low
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = if y[t] > 0.0 { alpha[t] < cost[t] } else { alpha[t] > 0.0 };
            let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < cost[t] };
            if up && v > gmax {
                gmax = v;
                i = t;
            }
            if low && v < gmin {
                gmin = v;
                j = t;
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < eps || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (ci, cj) = (cost[i], cost[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // rho from free vectors, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= cost[t];
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if at_lower {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };
    Ok(DualSolution { alpha, rho, iterations, gap })
}

/// Everything needed to rebuild a histogram for this model from audio.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: Option<u64>,
    pub spectrogram: Option<SpectrogramParams>,
    pub patch_grid: Option<PatchGrid>,
    pub lambda: Option<f64>,
    pub pool: PoolOptions,
    /// Kernel width before dividing by the median training distance.
    pub gamma_grid_value: Option<f64>,
    pub n_train: usize,
    pub eps: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraitModel {
    pub trait_: Trait,
    pub kernel: KernelParams,
    pub cost: f64,
    pub pos_weight: f64,
    pub bias: f64,
    /// `αᵢ yᵢ` per support vector.
    pub dual_coefs: Vec<f64>,
    /// One support histogram per row.
    pub support: Array2<f64>,
    pub dictionary_digest: Option<Digest>,
    pub meta: ModelMeta,
}

/// Trains on `(histogram, label)` pairs.
pub fn train(
    hists: &[&[f64]],
    labels: &[Label],
    trait_: Trait,
    kernel_params: KernelParams,
    params: &SvmParams,
) -> Result<TraitModel> {
    let dist = chi2_matrix(hists)?;
    train_with_distances(hists, labels, dist.view(), trait_, kernel_params, params)
}

/// [`train`] reusing a precomputed χ² distance matrix of `hists`.
pub fn train_with_distances(
    hists: &[&[f64]],
    labels: &[Label],
    dist: ArrayView2<f64>,
    trait_: Trait,
    kernel_params: KernelParams,
    params: &SvmParams,
) -> Result<TraitModel> {
    kernel_params.validate()?;
    let n = hists.len();
    if labels.len() != n || dist.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!("{n} histograms, {} labels", labels.len())));
    }
    if !(params.cost > 0.0) || !params.cost.is_finite() {
        return Err(Error::InvalidParameter(format!("cost must be positive, got {}", params.cost)));
    }
    let n_pos = labels.iter().filter(|l| **l == Label::Pos).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }
    let pos_weight = params.pos_weight.unwrap_or((n - n_pos) as f64 / n_pos as f64);
    if !(pos_weight > 0.0) || !pos_weight.is_finite() {
        return Err(Error::InvalidParameter(format!("pos_weight must be positive, got {pos_weight}")));
    }
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let cost: Vec<f64> = y
        .iter()
        .map(|v| if *v > 0.0 { params.cost * pos_weight } else { params.cost })
        .collect();
    let k = dist.mapv(|d| (-kernel_params.gamma * d).exp());
    let sol = solve_dual(k.view(), &y, &cost, params.eps, params.max_iter)?;

    let sv: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > SV_THRESHOLD).collect();
    let m = hists.first().map_or(0, |h| h.len());
    let support = Array2::from_shape_fn((sv.len(), m), |(r, c)| hists[sv[r]][c]);
    Ok(TraitModel {
        trait_,
        kernel: kernel_params,
        cost: params.cost,
        pos_weight,
        bias: -sol.rho,
        dual_coefs: sv.iter().map(|&i| sol.alpha[i] * y[i]).collect(),
        support,
        dictionary_digest: None,
        meta: ModelMeta {
            n_train: n,
            eps: params.eps,
            iterations: sol.iterations,
            ..ModelMeta::default()
        },
    })
}

impl TraitModel {
    pub fn n_support(&self) -> usize {
        self.dual_coefs.len()
    }

    pub fn n_bins(&self) -> usize {
        self.support.ncols()
    }

    /// `Σ coefᵢ k(svᵢ, h) + bias`, without any dictionary check.
    pub fn decision_value(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.n_bins() {
            return Err(Error::DimensionMismatch(format!(
                "histogram has {} bins, model expects {}",
                h.len(),
                self.n_bins()
            )));
        }
        let mut s = 0.0;
        for (coef, sv) in self.dual_coefs.iter().zip(self.support.rows()) {
            let sv = sv.as_slice().expect("standard layout");
            s += coef * kernel(sv, h, &self.kernel)?;
        }
        Ok(s + self.bias)
    }

    /// Label and decision value; a decision value of exactly zero is `+1`.
    /// `digest` identifies the dictionary that produced `h` and must match the
    /// one this model was trained with.
    pub fn predict(&self, h: &[f64], digest: Option<&Digest>) -> Result<(Label, f64)> {
        if self.dictionary_digest.as_ref() != digest {
            return Err(Error::DigestMismatch {
                expected: self.dictionary_digest.map_or("none".into(), |d| d.to_hex()),
                found: digest.map_or("none".into(), |d| d.to_hex()),
            });
        }
        let v = self.decision_value(h)?;
        Ok((Label::from_decision(v), v))
    }

    /// `SPSV` container: magic, u32 version, u8 trait, f64 gamma, cost,
    /// pos_weight and bias, u32 n_sv, u32 m, the dual coefficients, the
    /// support histograms row by row, a u8 flag and the 32-byte dictionary
    /// digest (zeros when absent), then the JSON metadata.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(b"SPSV", MODEL_VERSION);
        w.u8(self.trait_.index() as u8);
        w.f64(self.kernel.gamma);
        w.f64(self.cost);
        w.f64(self.pos_weight);
        w.f64(self.bias);
        w.len_u32(self.n_support())?;
        w.len_u32(self.n_bins())?;
        self.dual_coefs.iter().for_each(|c| w.f64(*c));
        self.support.iter().for_each(|v| w.f64(*v));
        w.u8(self.dictionary_digest.is_some() as u8);
        w.bytes(&self.dictionary_digest.map_or([0; 32], |d| d.0));
        w.json(&self.meta)?;
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open(bytes, b"SPSV")?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported SPSV version {version}")));
        }
        let trait_ = *Trait::ALL
            .get(r.u8()? as usize)
            .ok_or_else(|| Error::Format("unknown trait tag".into()))?;
        let kernel = KernelParams { gamma: r.f64()? };
        let cost = r.f64()?;
        let pos_weight = r.f64()?;
        let bias = r.f64()?;
        let n_sv = r.u32()? as usize;
        let m = r.u32()? as usize;
        let dual_coefs = r.f64s(n_sv)?;
        let support = Array2::from_shape_vec((n_sv, m), r.f64s(n_sv * m)?).expect("length checked");
        let has_digest = r.u8()?;
        let raw: [u8; 32] = r.array()?;
        let dictionary_digest = match has_digest {
            0 => None,
            1 => Some(Digest(raw)),
            v => return Err(Error::Format(format!("bad digest flag {v}"))),
        };
        let meta = r.json()?;
        r.expect_end()?;
        Ok(TraitModel {
            trait_,
            kernel,
            cost,
            pos_weight,
            bias,
            dual_coefs,
            support,
            dictionary_digest,
            meta,
        })
    }
}
