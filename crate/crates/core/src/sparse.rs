//! ℓ1-regularized least-squares coding with a LARS-Lasso homotopy solver.
//!
//! For a patch `p` and dictionary `D` the solver returns a minimizer of
//! `½‖p − Dc‖² + λ‖c‖₁` by following the piecewise-linear solution path from
//! `c = 0` at `λ ≥ max|Dᵀp|` down to the requested `λ`, adding atoms as their
//! correlation with the residual reaches the current level and dropping atoms
//! whose coefficient crosses zero.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::patches::PatchMatrix;

/// Pivot floor for the active-set Cholesky factor.
const JITTER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoParams {
    pub lambda: f64,
    /// Cap on the active set size; the patch dimension is always an upper bound.
    pub max_active: Option<usize>,
    pub tol: f64,
}

impl LassoParams {
    pub fn new(lambda: f64) -> Self {
        LassoParams {
            lambda,
            max_active: None,
            tol: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Sparse code of one patch over the `m` dictionary atoms. Entries may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeVector {
    pub values: Vec<f64>,
}

impl CodeVector {
    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

/// Lower-triangular factor of the active Gram submatrix, grown one row at a
/// time and stored packed by rows.
struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    fn new(cap: usize) -> Self {
        Cholesky {
            n: 0,
            l: Vec::with_capacity(cap.min(64) * (cap.min(64) + 1) / 2),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.l[start..start + i + 1]
    }

    /// Appends a row/column with off-diagonal entries `cross` (against the
    /// current active atoms) and diagonal `diag`.
    fn push(&mut self, cross: &[f64], diag: f64) {
        let n = self.n;
        debug_assert!(cross.len() == n);
        let start = self.l.len();
        for i in 0..n {
            let row = self.row(i);
            let z = (cross[i] - dot(&row[..i], &self.l[start..start + i])) / row[i];
            self.l.push(z);
        }
        let d2 = (diag - self.l[start..].iter().map(|v| v * v).sum::<f64>()).max(JITTER);
        self.l.push(d2.sqrt());
        self.n += 1;
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.row(i);
            y[i] = (y[i] - dot(&row[..i], &y[..i])) / row[i];
        }
        // Lᵀ sweep using rows of L: finish y[i], then remove it from y[..i]
        for i in (0..n).rev() {
            let row = self.row(i);
            y[i] /= row[i];
            let yi = y[i];
            for (yk, l) in y[..i].iter_mut().zip(&row[..i]) {
                *yk -= l * yi;
            }
        }
        y
    }

    /// Removes position `k` of the active set; rows before `k` are unchanged,
    /// the rest are refactored from `active` (already without the dropped atom).
    fn remove(&mut self, k: usize, gram: &Array2<f64>, active: &[usize]) {
        self.n = k;
        self.l.truncate(k * (k + 1) / 2);
        let mut cross = Vec::with_capacity(active.len());
        for (pos, &j) in active.iter().enumerate().skip(k) {
            cross.clear();
            cross.extend(active[..pos].iter().map(|&i| gram[[i, j]]));
            self.push(&cross, gram[[j, j]]);
        }
    }
}

/// Dot product with a fixed eight-way accumulation order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let split = a.len() / 8 * 8;
    for (x, y) in a[..split].chunks_exact(8).zip(b[..split].chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

enum Event {
    Finish,
    Join(usize),
    Drop(usize),
}

/// Lasso solver bound to one dictionary; caches the Gram matrix `DᵀD`.
pub struct LassoSolver<'a> {
    atoms: ArrayView2<'a, f64>,
    /// `m x d`, one contiguous row per atom
    atoms_t: Array2<f64>,
    gram: Array2<f64>,
    /// `gram` rows back to back
    gram_flat: Vec<f64>,
    params: LassoParams,
}

impl<'a> LassoSolver<'a> {
    pub fn new(atoms: ArrayView2<'a, f64>, params: LassoParams) -> Result<Self> {
        params.validate()?;
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dictionary"));
        }
        let gram = atoms.t().dot(&atoms);
        let atoms_t = atoms.t().as_standard_layout().into_owned();
        let gram_flat = gram.iter().copied().collect();
        Ok(LassoSolver {
            atoms,
            atoms_t,
            gram,
            gram_flat,
            params,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    /// `Dᵀp` with a fixed summation order, so a patch gets bit-identical
    /// codes whether it is solved alone or within a batch.
    fn correlations(&self, p: ArrayView1<f64>) -> Vec<f64> {
        let p = p.to_vec();
        self.atoms_t
            .outer_iter()
            .map(|atom| dot(atom.as_slice().expect("standard layout"), &p))
            .collect()
    }

    pub fn solve(&self, p: ArrayView1<f64>) -> Result<CodeVector> {
        if p.len() != self.atoms.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "patch has {} entries, dictionary atoms have {}",
                p.len(),
                self.atoms.nrows()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("patch"));
        }
        Ok(CodeVector {
            values: self.path(&self.correlations(p)),
        })
    }

    /// Codes for every column of `patches` as an `m x k` matrix.
    pub fn solve_columns(&self, patches: ArrayView2<f64>) -> Result<Array2<f64>> {
        if patches.nrows() != self.atoms.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "patches have {} rows, dictionary atoms have {}",
                patches.nrows(),
                self.atoms.nrows()
            )));
        }
        if patches.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("patch"));
        }
        let codes: Vec<Vec<f64>> = (0..patches.ncols())
            .into_par_iter()
            .map(|i| self.path(&self.correlations(patches.column(i))))
            .collect();
        let m = self.n_atoms();
        let mut out = Array2::zeros((m, codes.len()));
        for (mut col, code) in out.axis_iter_mut(Axis(1)).zip(&codes) {
            col.assign(&ArrayView1::from(code.as_slice()));
        }
        Ok(out)
    }

    fn path(&self, corr0: &[f64]) -> Vec<f64> {
        self.path_with_drops(corr0).0
    }

    /// Follows the Lasso path given the initial correlations `Dᵀp`; also
    /// returns how many drop events occurred.
    fn path_with_drops(&self, corr0: &[f64]) -> (Vec<f64>, usize) {
        let m = corr0.len();
        let d = self.atoms.nrows();
        let lambda = self.params.lambda;
        let tol = self.params.tol;
        let cap = self.params.max_active.unwrap_or(d).min(d).min(m);

        let mut coef = vec![0.0; m];
        let mut corr = corr0.to_vec();
        // lowest index wins ties
        let (first, level0) = corr
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (j, c)| if c.abs() > best.1 { (j, c.abs()) } else { best });
        if level0 <= lambda || cap == 0 {
            return (coef, 0);
        }

        let mut level = level0;
        let mut active: Vec<usize> = Vec::with_capacity(cap);
        let mut signs: Vec<f64> = Vec::with_capacity(cap);
        let mut is_active = vec![false; m];
        let mut chol = Cholesky::new(cap);
        let mut cross = Vec::with_capacity(cap);
        let mut a = vec![0.0; m];
        let mut just_dropped = None;
        let mut drops = 0;

        let mut join = |j: usize,
                        sign: f64,
                        active: &mut Vec<usize>,
                        signs: &mut Vec<f64>,
                        is_active: &mut Vec<bool>,
                        chol: &mut Cholesky| {
            cross.clear();
            cross.extend(active.iter().map(|&i| self.gram[[i, j]]));
            chol.push(&cross, self.gram[[j, j]]);
            active.push(j);
            signs.push(sign);
            is_active[j] = true;
        };
        let sign_of = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };

        join(first, sign_of(corr[first]), &mut active, &mut signs, &mut is_active, &mut chol);

        let max_steps = 8 * m + 64;
        for _ in 0..max_steps {
            // direction for the active coefficients per unit decrease of the level
            let w = chol.solve(&signs);
            a.iter_mut().for_each(|v| *v = 0.0);
            let gram_row = |j: usize| &self.gram_flat[j * m..(j + 1) * m];
            let mut pairs = active.chunks_exact(2).zip(w.chunks_exact(2));
            for (js, ws) in pairs.by_ref() {
                let (r0, r1) = (gram_row(js[0]), gram_row(js[1]));
                for ((ai, g0), g1) in a.iter_mut().zip(r0).zip(r1) {
                    *ai += g0 * ws[0] + g1 * ws[1];
                }
            }
            if active.len() % 2 == 1 {
                let (j, wk) = (active[active.len() - 1], w[w.len() - 1]);
                for (ai, g) in a.iter_mut().zip(gram_row(j)) {
                    *ai += g * wk;
                }
            }

            let mut step = level - lambda;
            let mut event = Event::Finish;
            if active.len() < cap {
                for j in 0..m {
                    if is_active[j] {
                        continue;
                    }
                    // a just-dropped atom sits on the boundary with its old sign;
                    // it may only re-enter through the opposite one
                    let (skip_pos, skip_neg) = match just_dropped {
                        Some((dj, s)) if dj == j => (s > 0.0, s < 0.0),
                        _ => (false, false),
                    };
                    // divide only when a boundary can beat the current step
                    let up = 1.0 - a[j];
                    let down = 1.0 + a[j];
                    let (num_up, num_down) = (level - corr[j], level + corr[j]);
                    if up > tol && !skip_pos && num_up < step * up {
                        let g = (num_up / up).max(0.0);
                        if g < step {
                            step = g;
                            event = Event::Join(j);
                        }
                    }
                    if down > tol && !skip_neg && num_down < step * down {
                        let g = (num_down / down).max(0.0);
                        if g < step {
                            step = g;
                            event = Event::Join(j);
                        }
                    }
                }
            }
            for (k, (&j, &wk)) in active.iter().zip(&w).enumerate() {
                if coef[j] == 0.0 || wk == 0.0 {
                    continue;
                }
                let g = -coef[j] / wk;
                if g > 0.0 && g < step {
                    step = g;
                    event = Event::Drop(k);
                }
            }

            for (&j, &wk) in active.iter().zip(&w) {
                coef[j] += step * wk;
            }
            for (c, ai) in corr.iter_mut().zip(&a) {
                *c -= step * ai;
            }
            level -= step;
            just_dropped = None;

            match event {
                Event::Finish => break,
                Event::Join(j) => {
                    join(j, sign_of(corr[j]), &mut active, &mut signs, &mut is_active, &mut chol)
                }
                Event::Drop(k) => {
                    let j = active.remove(k);
                    let s = signs.remove(k);
                    coef[j] = 0.0;
                    is_active[j] = false;
                    chol.remove(k, &self.gram, &active);
                    just_dropped = Some((j, s));
                    drops += 1;
                }
            }
        }

        // Re-solve the final active system directly to shed accumulated path error.
        let rhs: Vec<f64> = active
            .iter()
            .zip(&signs)
            .map(|(&j, &s)| corr0[j] - lambda * s)
            .collect();
        let refined = chol.solve(&rhs);
        if refined.iter().zip(&signs).all(|(c, s)| c * s > 0.0) {
            for (&j, c) in active.iter().zip(refined) {
                coef[j] = c;
            }
        }
        (coef, drops)
    }
}

/// Solves one coding problem.
pub fn lasso_lars(p: ArrayView1<f64>, atoms: ArrayView2<f64>, params: &LassoParams) -> Result<CodeVector> {
    LassoSolver::new(atoms, *params)?.solve(p)
}

/// Codes every column of `patches`, in column order.
pub fn encode_all(
    patches: &PatchMatrix,
    atoms: ArrayView2<f64>,
    params: &LassoParams,
) -> Result<Vec<CodeVector>> {
    let codes = LassoSolver::new(atoms, *params)?.solve_columns(patches.columns.view())?;
    Ok(codes
        .axis_iter(Axis(1))
        .map(|c| CodeVector { values: c.to_vec() })
        .collect())
}

/// `½‖p − Dc‖² + λ‖c‖₁`.
pub fn lasso_objective(p: ArrayView1<f64>, atoms: ArrayView2<f64>, code: &[f64], lambda: f64) -> f64 {
    let recon = atoms.dot(&ArrayView1::from(code));
    let r2: f64 = p.iter().zip(recon.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * r2 + lambda * code.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest violation of the Lasso optimality conditions: for nonzero `cⱼ`,
/// `|Dⱼᵀ(p − Dc) − λ sign(cⱼ)|`; for zero `cⱼ`, `max(0, |Dⱼᵀ(p − Dc)| − λ)`.
pub fn kkt_violation(p: ArrayView1<f64>, atoms: ArrayView2<f64>, code: &[f64], lambda: f64) -> f64 {
    let resid = &p - &atoms.dot(&ArrayView1::from(code));
    let corr = atoms.t().dot(&resid);
    corr.iter()
        .zip(code)
        .map(|(&g, &c)| {
            if c != 0.0 {
                (g - lambda * c.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}
