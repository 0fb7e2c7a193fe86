//! Evaluation scores: cross-correlation independence, signature MMD,
//! signature-feature discriminative and predictive scores, and a KDE
//! mode counter for marginal-distribution diagnostics.
//!
//! The discriminative and predictive scores intentionally use truncated
//! signature features with a logistic / ridge head rather than a second
//! trainable network stack, so they are deterministic and cheap; they are
//! meant for comparisons between generators under one fixed protocol, not
//! for absolute cross-study numbers.

use crate::error::{Error, Result};
use crate::noise::NoiseStream;
use crate::path::PathBatch;
use crate::signature::{
    basepoint_augment, chen_product, segment_exponential, sig_w1, signature, time_augment,
};

/// One row of evaluation results.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub sig_mmd: Option<f64>,
    pub independence: Option<f64>,
    pub discriminative: Option<f64>,
    pub predictive: Option<f64>,
    pub timestamps: Vec<f64>,
    pub seed: u64,
    pub config_hash: u64,
    /// Records the substituted metric heads.
    pub model_note: String,
}

impl MetricReport {
    pub fn new(seed: u64, config_hash: u64) -> Self {
        MetricReport {
            sig_mmd: None,
            independence: None,
            discriminative: None,
            predictive: None,
            timestamps: Vec::new(),
            seed,
            config_hash,
            model_note: "signature-feature logistic/ridge heads".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sig_mmd", self.sig_mmd),
            ("independence", self.independence),
            ("discriminative", self.discriminative),
            ("predictive", self.predictive),
        ] {
            if let Some(x) = v {
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::numeric(format!("{name} must be finite and >= 0, got {x}")));
                }
            }
        }
        Ok(())
    }
}

/// Default evaluation timestamps `{0.1, 0.2, ..., 1.0} * horizon`.
pub fn default_timestamps(horizon: f64) -> Vec<f64> {
    (1..=10).map(|k| 0.1 * k as f64 * horizon).collect()
}

fn centered_dot(a: &[f64], b: &[f64]) -> f64 {
    let m = a.len() as f64;
    let ma = a.iter().sum::<f64>() / m;
    let mb = b.iter().sum::<f64>() / m;
    a.iter().zip(b).map(|(&x, &y)| (x - ma) * (y - mb)).sum()
}

/// Maximum over the timestamps of the entrywise-L1 norm of the Pearson
/// cross-correlation matrix between the two batches' cross-sections.
pub fn independence_score(real: &PathBatch, fake: &PathBatch, timestamps: &[f64]) -> Result<f64> {
    if real.len() != fake.len() {
        return Err(Error::input(format!(
            "independence needs paired batches, got {} vs {} paths",
            real.len(),
            fake.len()
        )));
    }
    if real.len() < 2 {
        return Err(Error::input("independence needs at least two pairs"));
    }
    if real.channels() != fake.channels() {
        return Err(Error::input("independence needs equal channel counts"));
    }
    if real.times() != fake.times() {
        return Err(Error::input("independence needs a shared time grid"));
    }
    if timestamps.is_empty() {
        return Err(Error::input("independence needs at least one timestamp"));
    }
    let times = real.times();
    let n = real.channels();
    let mut best = 0.0f64;
    for &t in timestamps {
        let j = times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(j, _)| j)
            .unwrap();
        if (times[j] - t).abs() > 1e-6 {
            return Err(Error::input(format!("timestamp {t} not on the grid")));
        }
        let mut l1 = 0.0;
        for a in 0..n {
            let xa = real.cross_section(j, a);
            let va = centered_dot(&xa, &xa);
            for b in 0..n {
                let yb = fake.cross_section(j, b);
                let vb = centered_dot(&yb, &yb);
                if va == 0.0 || vb == 0.0 {
                    eprintln!(
                        "warning: zero-variance channel at t={t} (channels {a}/{b}); correlation treated as 0"
                    );
                    continue;
                }
                let cov = centered_dot(&xa, &yb);
                l1 += (cov / (va * vb).sqrt()).abs();
            }
        }
        best = best.max(l1);
    }
    Ok(best)
}

/// Expected-signature MMD; single-channel batches are time-augmented first
/// (the same convention the training loss uses).
pub fn sig_mmd_score(real: &PathBatch, fake: &PathBatch, depth: usize) -> Result<f64> {
    if real.channels() == 1 && fake.channels() == 1 {
        sig_w1(&time_augment(real), &time_augment(fake), depth)
    } else {
        sig_w1(real, fake, depth)
    }
}

/// Solve the SPD system `a x = rhs` in place via Cholesky; `a` is row-major
/// `n x n`.  Fails on non-positive pivots.
fn cholesky_solve(a: &mut [f64], rhs: &mut [f64], n: usize) -> Result<()> {
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::numeric("matrix not positive definite"));
                }
                a[i * n + i] = s.sqrt();
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= a[i * n + k] * rhs[k];
        }
        rhs[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for k in i + 1..n {
            s -= a[k * n + i] * rhs[k];
        }
        rhs[i] = s / a[i * n + i];
    }
    Ok(())
}

/// Signature features of the time- and basepoint-augmented path; the
/// basepoint keeps absolute levels visible (plain signatures only see
/// increments).
fn sig_features(batch: &PathBatch, depth: usize) -> Result<Vec<Vec<f64>>> {
    let aug = time_augment(batch);
    (0..aug.len())
        .map(|i| Ok(signature(&basepoint_augment(&aug.path(i))?, depth)?.flatten_graded()))
        .collect()
}

const DISCRIMINATIVE_DEPTH: usize = 4;

/// `|test accuracy - 0.5|` of a logistic classifier on standardized
/// signature features, 80/20 split with balanced classes.
pub fn discriminative_score(real: &PathBatch, fake: &PathBatch, seed: u64) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::input("discriminative score needs non-empty batches"));
    }
    if real.channels() != fake.channels() {
        return Err(Error::input("discriminative score needs equal channel counts"));
    }
    let m = real.len().min(fake.len());
    let n_train = (4 * m) / 5;
    if n_train == 0 || n_train == m {
        return Err(Error::input(format!("cannot split {m} paths per class 80/20")));
    }
    let stream = NoiseStream::new(seed);
    let pick_real = stream.substream(1).sample_indices(0, real.len(), m);
    let pick_fake = stream.substream(2).sample_indices(0, fake.len(), m);
    let feats_real = sig_features(&real.select(&pick_real)?, DISCRIMINATIVE_DEPTH)?;
    let feats_fake = sig_features(&fake.select(&pick_fake)?, DISCRIMINATIVE_DEPTH)?;
    let width = feats_real[0].len();

    // standardize on the training portion of both classes
    let mut mean = vec![0.0; width];
    let mut var = vec![0.0; width];
    let train_iter = || feats_real[..n_train].iter().chain(&feats_fake[..n_train]);
    let n_tr = 2.0 * n_train as f64;
    for f in train_iter() {
        for (s, &x) in mean.iter_mut().zip(f) {
            *s += x;
        }
    }
    mean.iter_mut().for_each(|s| *s /= n_tr);
    for f in train_iter() {
        for ((s, &x), &mu) in var.iter_mut().zip(f).zip(&mean) {
            *s += (x - mu) * (x - mu);
        }
    }
    let scale: Vec<f64> =
        var.iter().map(|&v| if v > 0.0 { (v / n_tr).sqrt().recip() } else { 1.0 }).collect();
    let std_row = |f: &[f64]| -> Vec<f64> {
        let mut row = vec![1.0]; // intercept
        row.extend(f.iter().zip(&mean).zip(&scale).map(|((&x, &mu), &sc)| (x - mu) * sc));
        row
    };

    // ridge-stabilized Newton iterations
    let dim = width + 1;
    let mut w = vec![0.0; dim];
    let rows: Vec<(Vec<f64>, f64)> = feats_real[..n_train]
        .iter()
        .map(|f| (std_row(f), 1.0))
        .chain(feats_fake[..n_train].iter().map(|f| (std_row(f), 0.0)))
        .collect();
    for _ in 0..25 {
        let mut hess = vec![0.0; dim * dim];
        let mut grad = vec![0.0; dim];
        for (x, y) in &rows {
            let z: f64 = x.iter().zip(&w).map(|(&a, &b)| a * b).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            let r = p - y;
            let s = (p * (1.0 - p)).max(1e-10);
            for i in 0..dim {
                grad[i] += r * x[i];
                for j in 0..=i {
                    hess[i * dim + j] += s * x[i] * x[j];
                }
            }
        }
        for i in 0..dim {
            for j in i + 1..dim {
                hess[i * dim + j] = hess[j * dim + i];
            }
            hess[i * dim + i] += 1e-6 * rows.len() as f64;
            grad[i] += 1e-6 * rows.len() as f64 * w[i];
        }
        let mut step = grad.clone();
        cholesky_solve(&mut hess, &mut step, dim)?;
        let delta: f64 = step.iter().map(|d| d.abs()).fold(0.0, f64::max);
        for (wi, d) in w.iter_mut().zip(&step) {
            *wi -= d;
        }
        if delta < 1e-10 {
            break;
        }
    }

    let mut correct = 0usize;
    let mut total = 0usize;
    let mut score = |f: &[f64], y: f64| {
        let x = std_row(f);
        let z: f64 = x.iter().zip(&w).map(|(&a, &b)| a * b).sum();
        if (z > 0.0) == (y > 0.5) {
            correct += 1;
        }
        total += 1;
    };
    for f in &feats_real[n_train..] {
        score(f, 1.0);
    }
    for f in &feats_fake[n_train..] {
        score(f, 0.0);
    }
    Ok((correct as f64 / total as f64 - 0.5).abs())
}

const PREDICTIVE_DEPTH: usize = 3;
const PREDICTIVE_CAP: usize = 500_000;

/// Prefix-signature features (time- and basepoint-augmented so absolute
/// levels are visible) and next-step last-channel targets for every
/// (path, step) pair of the batch.
fn predictive_samples(batch: &PathBatch) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let aug = time_augment(batch);
    let steps = batch.grid().steps();
    let last = batch.channels() - 1;
    let mut feats = Vec::with_capacity(batch.len() * (steps - 1));
    let mut targets = Vec::with_capacity(batch.len() * (steps - 1));
    for i in 0..batch.len() {
        let bp = basepoint_augment(&aug.path(i))?;
        // running signature over the basepointed path; bp segment j covers
        // original segment j-1
        let mut sig = segment_exponential(&bp.increment(0), bp.channels(), PREDICTIVE_DEPTH)?;
        for j in 1..steps {
            let seg = segment_exponential(&bp.increment(j), bp.channels(), PREDICTIVE_DEPTH)?;
            sig = chen_product(&sig, &seg)?;
            feats.push(sig.flatten_graded());
            targets.push(batch.value(i, j + 1, last));
        }
    }
    Ok((feats, targets))
}

/// Mean absolute next-step error on `real` of a ridge regressor fit on
/// `fake`'s prefix-signature features.
pub fn predictive_score(real: &PathBatch, fake: &PathBatch, seed: u64) -> Result<f64> {
    if real.channels() != fake.channels() {
        return Err(Error::input("predictive score needs equal channel counts"));
    }
    if real.grid().steps() < 3 || fake.grid().steps() < 3 {
        return Err(Error::input("predictive score needs at least three time steps"));
    }
    let (mut feats, mut targets) = predictive_samples(fake)?;
    let stream = NoiseStream::new(seed);
    if feats.len() > PREDICTIVE_CAP {
        let keep = stream.substream(1).sample_indices(0, feats.len(), PREDICTIVE_CAP);
        feats = keep.iter().map(|&i| feats[i].clone()).collect();
        targets = keep.iter().map(|&i| targets[i]).collect();
    }
    let dim = feats[0].len();
    let n = feats.len() as f64;
    let y_mean = targets.iter().sum::<f64>() / n;
    let mut xtx = vec![0.0; dim * dim];
    let mut xty = vec![0.0; dim];
    for (x, &y) in feats.iter().zip(&targets) {
        let r = y - y_mean;
        for i in 0..dim {
            xty[i] += x[i] * r;
            for j in 0..=i {
                xtx[i * dim + j] += x[i] * x[j];
            }
        }
    }
    for i in 0..dim {
        for j in i + 1..dim {
            xtx[i * dim + j] = xtx[j * dim + i];
        }
    }
    let trace: f64 = (0..dim).map(|i| xtx[i * dim + i]).sum();
    let mut lambda = 1e-8 * (trace / dim as f64).max(1e-12);
    let mut w = Vec::new();
    for attempt in 0..8 {
        let mut a = xtx.clone();
        let mut rhs = xty.clone();
        for i in 0..dim {
            a[i * dim + i] += lambda;
        }
        match cholesky_solve(&mut a, &mut rhs, dim) {
            Ok(()) => {
                w = rhs;
                break;
            }
            Err(_) if attempt < 7 => {
                eprintln!("warning: near-singular predictive design, raising ridge to {lambda:e}");
                lambda *= 100.0;
            }
            Err(e) => return Err(e),
        }
    }

    let (feats_r, targets_r) = predictive_samples(real)?;
    let mut abs_err = 0.0;
    for (x, &y) in feats_r.iter().zip(&targets_r) {
        let pred = y_mean + x.iter().zip(&w).map(|(&a, &b)| a * b).sum::<f64>();
        abs_err += (pred - y).abs();
    }
    Ok(abs_err / targets_r.len() as f64)
}

/// Gaussian kernel density on a 512-point grid spanning the samples plus
/// three bandwidths; returns (grid, density), density integrating to one.
pub fn kde_density(samples: &[f64], bandwidth: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.len() < 10 {
        return Err(Error::input("kde needs at least 10 samples"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::input("bandwidth must be positive"));
    }
    const GRID: usize = 512;
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * bandwidth;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bandwidth;
    let step = (hi - lo) / (GRID - 1) as f64;
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..GRID).map(|g| lo + g as f64 * step).collect();
    let density = grid
        .iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok((grid, density))
}

/// Count the modes of the [`kde_density`] curve: strict local maxima
/// (plateaus count once) at least 5% of the global maximum.
pub fn kde_mode_count(samples: &[f64], bandwidth: f64) -> Result<usize> {
    let (_, density) = kde_density(samples, bandwidth)?;
    let peak = density.iter().cloned().fold(0.0, f64::max);
    let threshold = 0.05 * peak;
    let n = density.len();
    let mut count = 0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && density[j + 1] == density[i] {
            j += 1;
        }
        if i > 0
            && j + 1 < n
            && density[i - 1] < density[i]
            && density[j + 1] < density[j]
            && density[i] >= threshold
        {
            count += 1;
        }
        i = j + 1;
    }
    Ok(count)
}
