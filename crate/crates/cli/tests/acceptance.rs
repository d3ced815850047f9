//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Every numerical check is made against an oracle written here, independent
//! of the library's own implementation. Criteria 8 and 9 drive the built
//! binary. Criterion 10 needs the SSPNet corpus and is skipped unless
//! `PATCHCODE_SSPNET_MANIFEST` points at its manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Axis};
use patchcode::audio::AudioClip;
use patchcode::dictionary::{dict_update, learn, LearnConfig};
use patchcode::patches::PatchMatrix;
use patchcode::sparse::{lasso_lars, LassoParams};
use patchcode::spectrogram::{stft_magnitude, SpectrogramParams};
use patchcode::svm::{chi2_distance, kernel, solve_dual, KernelParams};
use patchcode::synth::{write_corpus, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(elapsed: Duration, budget_secs: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < budget_secs as f64, || {
        format!("took {:.1}s, budget {budget_secs}s", elapsed.as_secs_f64())
    })
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box–Muller
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Random atoms in the dictionary constraint set: non-negative, unit norm.
fn feasible_atoms(d: usize, m: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut a = Array2::from_shape_fn((d, m), |_| gaussian(rng).max(0.0) + 1e-3);
    for mut col in a.axis_iter_mut(Axis(1)) {
        let n = col.dot(&col).sqrt();
        col.mapv_inplace(|v| v / n);
    }
    a
}

fn lasso_value(p: &Array1<f64>, d: &Array2<f64>, c: &[f64], lambda: f64) -> f64 {
    let r = p - &d.dot(&Array1::from(c.to_vec()));
    0.5 * r.dot(&r) + lambda * c.iter().map(|v| v.abs()).sum::<f64>()
}

/// Cyclic coordinate descent with exact soft-threshold updates, run to a
/// fixed point.
fn lasso_cd(p: &Array1<f64>, d: &Array2<f64>, lambda: f64) -> Vec<f64> {
    let m = d.ncols();
    let mut c = vec![0.0; m];
    let mut r = p.clone();
    for _ in 0..200_000 {
        let mut change: f64 = 0.0;
        for j in 0..m {
            let dj = d.column(j);
            let nrm = dj.dot(&dj);
            let rho = dj.dot(&r) + nrm * c[j];
            let new = rho.signum() * (rho.abs() - lambda).max(0.0) / nrm;
            let delta = new - c[j];
            if delta != 0.0 {
                r.scaled_add(-delta, &dj);
                c[j] = new;
                change = change.max(delta.abs());
            }
        }
        if change < 1e-15 {
            break;
        }
    }
    c
}

fn kkt_gap(p: &Array1<f64>, d: &Array2<f64>, c: &[f64], lambda: f64) -> f64 {
    let r = p - &d.dot(&Array1::from(c.to_vec()));
    let g = d.t().dot(&r);
    g.iter()
        .zip(c)
        .map(|(&g, &c)| if c != 0.0 { (g - lambda * c.signum()).abs() } else { (g.abs() - lambda).max(0.0) })
        .fold(0.0, f64::max)
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_obj, mut worst_kkt) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let lambda = [0.01, 0.1, 1.0][i % 3];
        let d = feasible_atoms(8, 12, &mut rng);
        let p = Array1::from_shape_fn(8, |_| gaussian(&mut rng));
        let code = lasso_lars(p.view(), d.view(), &LassoParams::new(lambda)).map_err(|e| e.to_string())?;
        let oracle = lasso_cd(&p, &d, lambda);
        let diff = (lasso_value(&p, &d, &code.values, lambda) - lasso_value(&p, &d, &oracle, lambda)).abs();
        worst_obj = worst_obj.max(diff);
        worst_kkt = worst_kkt.max(kkt_gap(&p, &d, &code.values, lambda));
    }
    ensure(worst_obj <= 1e-6, || format!("objective differs from coordinate descent by {worst_obj:e}"))?;
    ensure(worst_kkt <= 1e-6, || format!("KKT violation {worst_kkt:e}"))?;
    within_budget(start.elapsed(), 10)?;
    Ok(format!("worst objective gap {worst_obj:.1e}, worst KKT violation {worst_kkt:.1e}"))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 16;
    let eye = Array2::<f64>::eye(n);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let lambda = [0.01, 0.1, 1.0][i % 3];
        let p = Array1::from_shape_fn(n, |_| 2.0 * gaussian(&mut rng));
        let code = lasso_lars(p.view(), eye.view(), &LassoParams::new(lambda)).map_err(|e| e.to_string())?;
        for (c, &x) in code.values.iter().zip(p.iter()) {
            let soft = x.signum() * (x.abs() - lambda).max(0.0);
            worst = worst.max((c - soft).abs());
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation from soft threshold {worst:e}"))?;
    within_budget(start.elapsed(), 5)?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn cosine_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    1.0 - a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt()).max(f64::MIN_POSITIVE)
}

/// Smallest achievable worst-case cosine distance over all atom matchings.
fn best_matching(dist: &Array2<f64>) -> f64 {
    fn go(row: usize, used: &mut Vec<bool>, cur: f64, best: &mut f64, dist: &Array2<f64>) {
        if cur >= *best {
            return;
        }
        if row == dist.nrows() {
            *best = cur;
            return;
        }
        for j in 0..dist.ncols() {
            if !used[j] {
                used[j] = true;
                go(row + 1, used, cur.max(dist[[row, j]]), best, dist);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, &mut vec![false; dist.ncols()], 0.0, &mut best, dist);
    best
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let (d, m, k) = (16, 8, 5000);
    let mut recovered = 0;
    let mut report = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut truth = Array2::from_shape_fn((d, m), |_| rng.random::<f64>());
        for mut col in truth.axis_iter_mut(Axis(1)) {
            let n = col.dot(&col).sqrt();
            col.mapv_inplace(|v| v / n);
        }
        let mut patches = Array2::zeros((d, k));
        for mut col in patches.axis_iter_mut(Axis(1)) {
            let j = rng.random_range(0..m);
            let amp = rng.random_range(0.5..1.5);
            col.scaled_add(amp, &truth.column(j));
        }
        let cfg = LearnConfig { m, lambda: 0.1, n_iters: 30, batch: 1000, seed, probe_size: 500 };
        let dict = learn(&PatchMatrix::from_columns(patches), &cfg).map_err(|e| e.to_string())?;
        let dist = Array2::from_shape_fn((m, m), |(i, j)| cosine_distance(truth.column(i), dict.atoms.column(j)));
        let worst = best_matching(&dist);
        if worst < 0.05 {
            recovered += 1;
        }
        report.push(format!("{worst:.1e}"));
    }
    ensure(recovered >= 3, || format!("recovered {recovered}/5 (worst cosine distances {})", report.join(", ")))?;
    within_budget(start.elapsed(), 60)?;
    Ok(format!("recovered {recovered}/5 seeds (worst cosine distances {})", report.join(", ")))
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let d = rng.random_range(2..10);
        let m = rng.random_range(1..12);
        let k = rng.random_range(1..30);
        let patches = Array2::from_shape_fn((d, k), |_| rng.random::<f64>());
        let codes = Array2::from_shape_fn((m, k), |_| if rng.random_bool(0.4) { gaussian(&mut rng) } else { 0.0 });
        let mut atoms = Array2::from_shape_fn((d, m), |_| rng.random::<f64>());
        for mut col in atoms.axis_iter_mut(Axis(1)) {
            let n = col.dot(&col).sqrt();
            col.mapv_inplace(|v| v / n);
        }
        let err = |a: &Array2<f64>| {
            let r = &patches - &a.dot(&codes);
            0.5 * r.iter().map(|v| v * v).sum::<f64>()
        };
        let before = err(&atoms);
        let updated = dict_update(patches.view(), codes.view(), atoms.view()).map_err(|e| e.to_string())?;
        let increase = err(&updated) - before;
        worst = worst.max(increase);
        ensure(increase <= 1e-9, || format!("objective rose by {increase:e}"))?;
    }
    within_budget(start.elapsed(), 10)?;
    Ok(format!("largest change {worst:.1e}"))
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = SpectrogramParams::default();
    let (l, hop) = (params.window_len, params.hop);
    let window: Vec<f64> = (0..l)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (l - 1) as f64).cos())
        .collect();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let samples: Vec<f64> = (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect();
        let clip = AudioClip::new(samples.clone(), 8000, format!("c{i}"), "s").map_err(|e| e.to_string())?;
        let spec = stft_magnitude(&clip, &params).map_err(|e| e.to_string())?;
        let frames = 1 + (1024 - l) / hop;
        let bins = l / 2 + 1;
        ensure(spec.n_frames() == frames && spec.n_bins() == bins, || {
            format!("shape {}x{}, expected {bins}x{frames}", spec.n_bins(), spec.n_frames())
        })?;
        for t in 0..frames {
            for f in 0..bins {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..l {
                    let x = samples[t * hop + n] * window[n];
                    let ang = -2.0 * std::f64::consts::PI * (f * n) as f64 / l as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                worst = worst.max((re.hypot(im) - spec.values[[f, t]]).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max error vs naive DFT {worst:e}"))?;
    within_budget(start.elapsed(), 10)?;
    Ok(format!("max error {worst:.1e}"))
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let d = |g: &[f64], h: &[f64]| chi2_distance(g, h).map_err(|e| e.to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let g: Vec<f64> = (0..12).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() * 5.0 }).collect();
        let h: Vec<f64> = (0..12).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() * 5.0 }).collect();
        ensure(d(&g, &g)?.abs() <= 1e-12, || "d(h,h) != 0".into())?;
        ensure((d(&g, &h)? - d(&h, &g)?).abs() <= 1e-12, || "not symmetric".into())?;
        let k = kernel(&g, &g, &KernelParams { gamma: 0.7 }).map_err(|e| e.to_string())?;
        ensure((k - 1.0).abs() <= 1e-12, || format!("k(h,h) = {k}"))?;
    }
    let zero = d(&[0.0, 0.0], &[0.0, 0.0])?;
    ensure(zero == 0.0, || format!("0/0 bins gave {zero}"))?;
    let partly = d(&[0.0, 1.0], &[0.0, 3.0])?;
    ensure((partly - 1.0).abs() <= 1e-12, || format!("d([0,1],[0,3]) = {partly}, expected 1"))?;
    let worked = d(&[1.0, 0.0], &[0.0, 1.0])?;
    ensure((worked - 2.0).abs() <= 1e-12, || format!("d([1,0],[0,1]) = {worked}"))?;
    let k = kernel(&[1.0, 0.0], &[0.0, 1.0], &KernelParams { gamma: 0.5 }).map_err(|e| e.to_string())?;
    ensure((k - (-1.0f64).exp()).abs() <= 1e-12, || format!("k = {k}, expected e^-1"))?;
    within_budget(start.elapsed(), 1)?;
    Ok("all identities hold".into())
}

/// Projects onto `{0 ≤ α ≤ c, yᵀα = 0}` by bisection on the multiplier.
fn project_feasible(v: &[f64], y: &[f64], c: &[f64]) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> { v.iter().zip(y).zip(c).map(|((&v, &y), &c)| (v - mu * y).clamp(0.0, c)).collect() };
    let balance = |a: &[f64]| a.iter().zip(y).map(|(a, y)| a * y).sum::<f64>();
    let bound = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + c.iter().copied().fold(0.0, f64::max) + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // balance is non-increasing in mu
        if balance(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

fn dual_value(q: &Array2<f64>, a: &[f64]) -> f64 {
    let a = Array1::from(a.to_vec());
    0.5 * a.dot(&q.dot(&a)) - a.sum()
}

/// Accelerated projected gradient on the SVM dual.
fn qp_oracle(q: &Array2<f64>, y: &[f64], c: &[f64]) -> Vec<f64> {
    let n = y.len();
    let lip = q.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let grad = q.dot(&Array1::from(z.clone())) - 1.0;
        let step: Vec<f64> = z.iter().zip(grad.iter()).map(|(z, g)| z - g / lip).collect();
        let next = project_feasible(&step, y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        z = next.iter().zip(&x).map(|(n, o)| n + (t - 1.0) / t_next * (n - o)).collect();
        x = next;
        t = t_next;
        if moved < 1e-13 {
            break;
        }
    }
    x
}

/// Offset from the free support vectors, or the midpoint of the feasible
/// interval when there are none.
fn oracle_rho(k: &Array2<f64>, y: &[f64], a: &[f64], c: &[f64]) -> f64 {
    let n = y.len();
    let f: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[j] * y[j] * k[[i, j]]).sum()).collect();
    let tol = 1e-7;
    let free: Vec<usize> = (0..n).filter(|&i| a[i] > tol * c[i] && a[i] < c[i] * (1.0 - tol)).collect();
    if !free.is_empty() {
        return free.iter().map(|&i| f[i] - y[i]).sum::<f64>() / free.len() as f64;
    }
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..n {
        let r = f[i] - y[i];
        let at_upper = a[i] >= c[i] * (1.0 - tol);
        // α = 0 with y = +1, or α = C with y = −1, bounds rho from above
        if (y[i] > 0.0) != at_upper {
            hi = hi.min(r);
        } else {
            lo = lo.max(r);
        }
    }
    0.5 * (lo + hi)
}

fn criterion_7() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, bins, probes) = (20, 10, 50);
    let (mut worst_gap, mut flips, mut total) = (0.0f64, 0, 0);
    for problem in 0..20 {
        let hist = |rng: &mut ChaCha8Rng, shift: f64| -> Vec<f64> {
            (0..bins).map(|b| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() + shift * (b % 2) as f64 }).collect()
        };
        let mut y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        if problem % 4 == 3 {
            // imbalanced
            y.iter_mut().take(12).for_each(|v| *v = -1.0);
        }
        let xs: Vec<Vec<f64>> = y.iter().map(|&l| hist(&mut rng, if l > 0.0 { 0.6 } else { 0.0 })).collect();
        let gamma = 0.5;
        let chi2 = |g: &[f64], h: &[f64]| -> f64 {
            g.iter().zip(h).map(|(a, b)| if a + b > 0.0 { (a - b) * (a - b) / (a + b) } else { 0.0 }).sum()
        };
        let k = Array2::from_shape_fn((n, n), |(i, j)| (-gamma * chi2(&xs[i], &xs[j])).exp());
        let q = Array2::from_shape_fn((n, n), |(i, j)| y[i] * y[j] * k[[i, j]]);
        let base = [1.0, 10.0][problem % 2];
        let c: Vec<f64> = y.iter().map(|&l| if l > 0.0 && problem % 3 == 0 { base * 1.5 } else { base }).collect();

        let smo = solve_dual(k.view(), &y, &c, 1e-8, 10_000_000).map_err(|e| e.to_string())?;
        let oracle = qp_oracle(&q, &y, &c);
        let gap = (dual_value(&q, &smo.alpha) - dual_value(&q, &oracle)).abs();
        worst_gap = worst_gap.max(gap);
        let rho = oracle_rho(&k, &y, &oracle, &c);

        for _ in 0..probes {
            let shift = rng.random::<f64>() * 0.6;
            let p = hist(&mut rng, shift);
            let dec = |a: &[f64], rho: f64| -> f64 {
                (0..n).map(|i| a[i] * y[i] * (-gamma * chi2(&xs[i], &p)).exp()).sum::<f64>() - rho
            };
            let (s, o) = (dec(&smo.alpha, smo.rho), dec(&oracle, rho));
            total += 1;
            if (s >= 0.0) != (o >= 0.0) {
                flips += 1;
            }
        }
    }
    ensure(worst_gap <= 1e-4, || format!("dual objective differs from QP oracle by {worst_gap:e}"))?;
    ensure(flips == 0, || format!("{flips}/{total} probe labels differ from the oracle"))?;
    within_budget(start.elapsed(), 10)?;
    Ok(format!("worst dual gap {worst_gap:.1e}, {total} probe labels identical"))
}

fn cli(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_patchcode"))
        .args(args)
        .output()
        .map_err(|e| format!("cannot run binary: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "`patchcode {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn summary_json(dir: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(dir.join("summary.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn synthetic_corpus(dir: &Path) -> Result<String, String> {
    let manifest = write_corpus(dir, &SynthConfig::default()).map_err(|e| e.to_string())?;
    Ok(manifest.to_string_lossy().into_owned())
}

/// Learning settings shared by the synthetic end-to-end runs.
const SYNTH_LEARN: [&str; 8] = ["--n-iters", "5", "--batch", "1000", "--probe-size", "200", "--max-patches-per-clip", "50"];

fn criterion_8(corpus: &str, work: &Path) -> Check {
    let start = Instant::now();
    let out = work.join("cv8");
    let out_s = out.to_string_lossy().into_owned();
    let mut args = vec![
        "cv", "--manifest", corpus, "--out", &out_s, "--seed", "8", "--k-outer", "3", "--k-inner", "5",
        "--grid-m", "200", "--grid-lambda", "0.1", "--grid-c", "1,10", "--grid-gamma", "0.25,1",
    ];
    args.extend(SYNTH_LEARN);
    cli(&args)?;
    let summary = summary_json(&out)?;
    let mean = summary["mean_uar"].as_f64().ok_or("summary has no mean_uar")?;
    ensure(mean >= 0.9, || format!("mean UAR {mean:.4} < 0.9"))?;
    within_budget(start.elapsed(), 15 * 60)?;
    Ok(format!("mean UAR {mean:.4} in {:.0}s", start.elapsed().as_secs_f64()))
}

fn criterion_9(corpus: &str, work: &Path) -> Check {
    let start = Instant::now();
    let run = |name: &str| -> Result<std::path::PathBuf, String> {
        let out = work.join(name);
        let out_s = out.to_string_lossy().into_owned();
        let mut args = vec![
            "cv", "--manifest", corpus, "--out", &out_s, "--seed", "9",
            "--grid-m", "64", "--grid-lambda", "0.1", "--grid-c", "1", "--grid-gamma", "1",
        ];
        args.extend(SYNTH_LEARN);
        cli(&args)?;
        Ok(out)
    };
    let first = run("cv9a")?;
    let second = run("cv9b")?;

    let mut folds = csv::Reader::from_path(first.join("folds.csv")).map_err(|e| e.to_string())?;
    let mut speaker_folds: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for row in folds.records() {
        let row = row.map_err(|e| e.to_string())?;
        speaker_folds.entry(row[1].to_string()).or_default().insert(row[2].to_string());
    }
    let spanning: Vec<&String> = speaker_folds.iter().filter(|(_, f)| f.len() > 1).map(|(s, _)| s).collect();
    ensure(spanning.is_empty(), || format!("speakers spanning folds: {spanning:?}"))?;

    let summary = summary_json(&first)?;
    let digests: BTreeMap<u64, String> = summary["folds"]
        .as_array()
        .ok_or("summary has no folds")?
        .iter()
        .map(|f| (f["fold"].as_u64().unwrap_or(u64::MAX), f["dictionary_digest"].to_string()))
        .collect();
    let distinct: BTreeSet<&String> = digests.values().collect();
    ensure(digests.len() == 3 && distinct.len() == 3, || format!("outer-fold dictionary digests not distinct: {digests:?}"))?;

    let a = std::fs::read(first.join("results.csv")).map_err(|e| e.to_string())?;
    let b = std::fs::read(second.join("results.csv")).map_err(|e| e.to_string())?;
    ensure(a == b, || "results.csv differs between identical runs".into())?;
    within_budget(start.elapsed(), 60)?;
    Ok(format!(
        "{} speakers each in one fold, 3 distinct dictionaries, byte-identical rerun ({:.0}s for both runs)",
        speaker_folds.len(),
        start.elapsed().as_secs_f64()
    ))
}

/// `None` means skipped.
fn criterion_10(work: &Path) -> Option<Check> {
    let manifest = std::env::var("PATCHCODE_SSPNET_MANIFEST").ok()?;
    let out = work.join("cv10");
    let out_s = out.to_string_lossy().into_owned();
    Some((|| {
        cli(&["cv", "--manifest", &manifest, "--out", &out_s])?;
        let mean = summary_json(&out)?["mean_uar"].as_f64().ok_or("summary has no mean_uar")?;
        ensure((mean - 0.671).abs() <= 0.03, || format!("mean UAR {mean:.4}, expected 0.671 ± 0.03"))?;
        Ok(format!("mean UAR {mean:.4}"))
    })())
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()))
}

#[test]
fn acceptance() {
    let work = tempfile::tempdir().unwrap();
    let corpus = synthetic_corpus(&work.path().join("corpus"));

    let mut results: Vec<(usize, Option<Check>)> = vec![
        (1, Some(guarded(criterion_1))),
        (2, Some(guarded(criterion_2))),
        (3, Some(guarded(criterion_3))),
        (4, Some(guarded(criterion_4))),
        (5, Some(guarded(criterion_5))),
        (6, Some(guarded(criterion_6))),
        (7, Some(guarded(criterion_7))),
    ];
    match &corpus {
        Ok(c) => {
            results.push((8, Some(guarded(|| criterion_8(c, work.path())))));
            results.push((9, Some(guarded(|| criterion_9(c, work.path())))));
        }
        Err(e) => {
            results.push((8, Some(Err(format!("corpus generation failed: {e}")))));
            results.push((9, Some(Err(format!("corpus generation failed: {e}")))));
        }
    }
    results.push((10, guarded_opt(|| criterion_10(work.path()))));

    // written to the raw handle so the report shows even when the harness captures output
    let mut report = std::io::stderr().lock();
    let mut failed = Vec::new();
    for (n, r) in &results {
        let line = match r {
            Some(Ok(msg)) => format!("criterion {n:>2}: PASS  {msg}"),
            Some(Err(msg)) => {
                failed.push(*n);
                format!("criterion {n:>2}: FAIL  {msg}")
            }
            None => format!("criterion {n:>2}: SKIP  PATCHCODE_SSPNET_MANIFEST not set"),
        };
        writeln!(report, "{line}").unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

fn guarded_opt(f: impl FnOnce() -> Option<Check>) -> Option<Check> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Some(Err("panicked".into())))
}
