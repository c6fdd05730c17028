//! Task-based validation: signal-known-exactly detection with the Hotelling
//! observer, ROC/AUC estimation, and real-versus-synthetic comparison.
//!
//! The data covariance is modeled as `K = sigma^2 I + A A^T` with `A` built
//! from centered sample ROIs. The template `w = K^-1 s` is computed through
//! the Woodbury identity, so only an N-by-N system is ever factored; the
//! p^2-by-p^2 inverse is never formed. Observer math runs in f64 throughout.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

use crate::rng::Rng;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// ROI handling
// ---------------------------------------------------------------------------

/// A square region of interest inside an n-by-n image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiSpec {
    pub center_row: usize,
    pub center_col: usize,
    pub side: usize,
}

impl RoiSpec {
    pub fn centered(n: usize, side: usize) -> Self {
        RoiSpec { center_row: n / 2, center_col: n / 2, side }
    }

    /// Top-left corner, or an error when the ROI leaves the image.
    pub fn corner(&self, n: usize) -> Result<(usize, usize)> {
        let half = self.side / 2;
        let r0 = self.center_row.checked_sub(half);
        let c0 = self.center_col.checked_sub(half);
        match (r0, c0) {
            (Some(r0), Some(c0)) if r0 + self.side <= n && c0 + self.side <= n => Ok((r0, c0)),
            _ => Err(Error::Shape(format!(
                "roi {}x{} at ({}, {}) leaves the {n}x{n} image",
                self.side, self.side, self.center_row, self.center_col
            ))),
        }
    }
}

/// Crop every image to the ROI, flattened row-major, widened to f64.
pub fn extract_rois(images: &[f32], n: usize, count: usize, spec: &RoiSpec) -> Result<Vec<f64>> {
    if images.len() != count * n * n {
        return Err(Error::Shape(format!(
            "extract_rois: {} values for {count} images of {n}x{n}",
            images.len()
        )));
    }
    let (r0, c0) = spec.corner(n)?;
    let p = spec.side;
    let mut out = Vec::with_capacity(count * p * p);
    for i in 0..count {
        let img = &images[i * n * n..(i + 1) * n * n];
        for r in 0..p {
            let row = &img[(r0 + r) * n + c0..(r0 + r) * n + c0 + p];
            out.extend(row.iter().map(|&v| v as f64));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Covariance model and Hotelling template
// ---------------------------------------------------------------------------

/// Low-rank-plus-noise covariance: `K = sigma2 * I + sum_j r_j r_j^T` where
/// `r_j` are the factor rows (centered samples scaled by 1/sqrt(N-1)).
#[derive(Debug, Clone)]
pub struct CovModel {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// `n_factors` rows of length `dim`, row-major.
    pub factor_rows: Vec<f64>,
    pub n_factors: usize,
    pub sigma2: f64,
}

impl CovModel {
    /// Build directly from factor rows (used by tests with known covariance).
    pub fn from_factors(dim: usize, mean: Vec<f64>, factor_rows: Vec<f64>, sigma2: f64) -> Self {
        let n_factors = factor_rows.len() / dim;
        CovModel { dim, mean, factor_rows, n_factors, sigma2 }
    }

    /// Dense covariance matrix; intended for small dims (tests, oracles).
    pub fn dense_covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mut k = vec![0.0; d * d];
        for i in 0..d {
            k[i * d + i] = self.sigma2;
        }
        for j in 0..self.n_factors {
            let row = &self.factor_rows[j * d..(j + 1) * d];
            for a in 0..d {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                for b in 0..d {
                    k[a * d + b] += ra * row[b];
                }
            }
        }
        k
    }
}

/// Sample mean and scaled centered factors from ROIs (`N >= 2`).
pub fn fit_cov(rois: &[f64], dim: usize, sigma2: f64) -> Result<CovModel> {
    if dim == 0 || rois.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "fit_cov: {} values do not tile dim {dim}",
            rois.len()
        )));
    }
    let n = rois.len() / dim;
    if n < 2 {
        return Err(Error::Config(format!("fit_cov: need at least 2 ROIs, got {n}")));
    }
    if sigma2 < 0.0 {
        return Err(Error::Config(format!("fit_cov: sigma2 must be >= 0, got {sigma2}")));
    }
    let mut mean = vec![0.0; dim];
    for j in 0..n {
        for (m, &v) in mean.iter_mut().zip(&rois[j * dim..(j + 1) * dim]) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let scale = 1.0 / ((n - 1) as f64).sqrt();
    let mut factor_rows = Vec::with_capacity(n * dim);
    for j in 0..n {
        factor_rows
            .extend(rois[j * dim..(j + 1) * dim].iter().zip(&mean).map(|(&v, &m)| (v - m) * scale));
    }
    Ok(CovModel { dim, mean, factor_rows, n_factors: n, sigma2 })
}

/// Cholesky factorization of an SPD matrix in place (lower triangle), then
/// solve `M x = b`.
fn cholesky_solve(m: &mut [f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    for j in 0..n {
        let mut diag = m[j * n + j];
        for k in 0..j {
            diag -= m[j * n + k] * m[j * n + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::Numeric(format!(
                "cholesky: matrix not positive definite at pivot {j} ({diag})"
            )));
        }
        let l_jj = diag.sqrt();
        m[j * n + j] = l_jj;
        let (head, tail) = m.split_at_mut((j + 1) * n);
        let row_j = &head[j * n..j * n + j + 1];
        tail.par_chunks_mut(n).enumerate().for_each(|(off, row_i)| {
            let mut v = row_i[j];
            for k in 0..j {
                v -= row_i[k] * row_j[k];
            }
            row_i[j] = v / l_jj;
            let _ = off;
        });
    }
    // forward substitution L y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= m[i * n + k] * y[k];
        }
        y[i] = v / m[i * n + i];
    }
    // back substitution L^T x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in i + 1..n {
            v -= m[k * n + i] * x[k];
        }
        x[i] = v / m[i * n + i];
    }
    Ok(x)
}

/// Hotelling template `w = K^-1 s` and detectability `SNR = sqrt(s^T K^-1 s)`
/// via the Woodbury identity.
pub fn hotelling_template(cm: &CovModel, signal: &[f64]) -> Result<(Vec<f64>, f64)> {
    if signal.len() != cm.dim {
        return Err(Error::Shape(format!(
            "hotelling_template: signal length {} != dim {}",
            signal.len(),
            cm.dim
        )));
    }
    if cm.sigma2 <= 0.0 {
        return Err(Error::Numeric(
            "hotelling_template: sigma2 = 0 makes the low-rank covariance singular".into(),
        ));
    }
    let d = cm.dim;
    let nf = cm.n_factors;
    let inv_s2 = 1.0 / cm.sigma2;

    let w = if nf == 0 {
        signal.iter().map(|&v| v * inv_s2).collect::<Vec<f64>>()
    } else {
        // u = R s / sigma2
        let u: Vec<f64> = (0..nf)
            .map(|j| {
                let row = &cm.factor_rows[j * d..(j + 1) * d];
                row.iter().zip(signal).map(|(&a, &b)| a * b).sum::<f64>() * inv_s2
            })
            .collect();
        // M = I + R R^T / sigma2 (symmетric gram of factor rows)
        let mut m = vec![0.0; nf * nf];
        m.par_chunks_mut(nf).enumerate().for_each(|(i, out_row)| {
            let ri = &cm.factor_rows[i * d..(i + 1) * d];
            for j in 0..=i {
                let rj = &cm.factor_rows[j * d..(j + 1) * d];
                let dot: f64 = ri.iter().zip(rj).map(|(&a, &b)| a * b).sum();
                out_row[j] = dot * inv_s2;
            }
            out_row[i] += 1.0;
        });
        for i in 0..nf {
            for j in i + 1..nf {
                m[i * nf + j] = m[j * nf + i];
            }
        }
        let y = cholesky_solve(&mut m, nf, &u)?;
        // w = (s - R^T y) / sigma2
        let mut w: Vec<f64> = signal.to_vec();
        for j in 0..nf {
            let yj = y[j];
            if yj == 0.0 {
                continue;
            }
            for (wv, &rv) in w.iter_mut().zip(&cm.factor_rows[j * d..(j + 1) * d]) {
                *wv -= yj * rv;
            }
        }
        for wv in &mut w {
            *wv *= inv_s2;
        }
        w
    };

    let snr2: f64 = signal.iter().zip(&w).map(|(&a, &b)| a * b).sum();
    if snr2 < 0.0 {
        return Err(Error::Numeric(format!(
            "hotelling_template: negative SNR^2 = {snr2} (covariance not PD?)"
        )));
    }
    Ok((w, snr2.sqrt()))
}

/// Reference implementations kept independent of the Woodbury path; used by
/// the test suites and the CLI self-test.
pub mod oracle {
    use super::CovModel;
    use crate::{Error, Result};

    /// Gauss-Jordan inverse for small dense matrices.
    pub fn dense_inverse(a: &[f64], n: usize) -> Result<Vec<f64>> {
        let mut aug = vec![0.0; n * 2 * n];
        for i in 0..n {
            aug[i * 2 * n..i * 2 * n + n].copy_from_slice(&a[i * n..(i + 1) * n]);
            aug[i * 2 * n + n + i] = 1.0;
        }
        for col in 0..n {
            let (pivot_row, pivot) = (col..n)
                .map(|r| (r, aug[r * 2 * n + col]))
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap();
            if pivot.abs() < 1e-300 {
                return Err(Error::Numeric("dense_inverse: singular matrix".into()));
            }
            if pivot_row != col {
                for k in 0..2 * n {
                    aug.swap(col * 2 * n + k, pivot_row * 2 * n + k);
                }
            }
            let inv_p = 1.0 / aug[col * 2 * n + col];
            for k in 0..2 * n {
                aug[col * 2 * n + k] *= inv_p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = aug[r * 2 * n + col];
                if f == 0.0 {
                    continue;
                }
                for k in 0..2 * n {
                    aug[r * 2 * n + k] -= f * aug[col * 2 * n + k];
                }
            }
        }
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n..(i + 1) * n].copy_from_slice(&aug[i * 2 * n + n..(i + 1) * 2 * n]);
        }
        Ok(inv)
    }

    /// Template via the explicit dense inverse of K.
    pub fn dense_template(cm: &CovModel, signal: &[f64]) -> Result<(Vec<f64>, f64)> {
        let d = cm.dim;
        let k = cm.dense_covariance();
        let k_inv = dense_inverse(&k, d)?;
        let w: Vec<f64> = (0..d)
            .map(|i| k_inv[i * d..(i + 1) * d].iter().zip(signal).map(|(&a, &b)| a * b).sum())
            .collect();
        let snr2: f64 = signal.iter().zip(&w).map(|(&a, &b)| a * b).sum();
        Ok((w, snr2.max(0.0).sqrt()))
    }

    /// Brute-force Mann-Whitney AUC by pair counting with half-credit ties.
    pub fn auc_pair_counting(scores0: &[f64], scores1: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &t1 in scores1 {
            for &t0 in scores0 {
                if t1 > t0 {
                    acc += 1.0;
                } else if t1 == t0 {
                    acc += 0.5;
                }
            }
        }
        acc / (scores0.len() * scores1.len()) as f64
    }
}

// ---------------------------------------------------------------------------
// Detection trials and ROC
// ---------------------------------------------------------------------------

/// Run `n_pairs` SKE trials: each pair draws one background ROI (without
/// replacement from the pool) and fresh i.i.d. Gaussian noise per hypothesis.
/// Returns (signal-absent scores, signal-present scores).
pub fn run_detection_trials(
    bg_rois: &[f64],
    dim: usize,
    template: &[f64],
    signal: &[f64],
    sigma2: f64,
    n_pairs: usize,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let trials = detection_trial_vectors(bg_rois, dim, signal, sigma2, n_pairs, rng)?;
    Ok(score_trials(&trials, template))
}

/// The raw trial vectors (backgrounds plus noise, with and without signal),
/// so multiple templates can be scored on identical realizations.
pub struct TrialSet {
    pub dim: usize,
    pub n_pairs: usize,
    /// `[n_pairs, dim]` signal-absent data.
    pub absent: Vec<f64>,
    /// `[n_pairs, dim]` signal-present data.
    pub present: Vec<f64>,
}

pub fn detection_trial_vectors(
    bg_rois: &[f64],
    dim: usize,
    signal: &[f64],
    sigma2: f64,
    n_pairs: usize,
    rng: &mut Rng,
) -> Result<TrialSet> {
    if dim == 0 || bg_rois.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "detection trials: {} values do not tile dim {dim}",
            bg_rois.len()
        )));
    }
    if signal.len() != dim {
        return Err(Error::Shape(format!(
            "detection trials: signal length {} != dim {dim}",
            signal.len()
        )));
    }
    let pool = bg_rois.len() / dim;
    if pool < n_pairs {
        return Err(Error::Config(format!(
            "detection trials: {pool} distinct backgrounds for {n_pairs} pairs"
        )));
    }
    let sigma = sigma2.sqrt();
    let mut order: Vec<usize> = (0..pool).collect();
    order.shuffle(rng);
    let mut absent = Vec::with_capacity(n_pairs * dim);
    let mut present = Vec::with_capacity(n_pairs * dim);
    for &idx in order.iter().take(n_pairs) {
        let f = &bg_rois[idx * dim..(idx + 1) * dim];
        for &v in f {
            let e: f64 = StandardNormal.sample(rng);
            absent.push(v + sigma * e);
        }
        for (i, &v) in f.iter().enumerate() {
            let e: f64 = StandardNormal.sample(rng);
            present.push(v + signal[i] + sigma * e);
        }
    }
    Ok(TrialSet { dim, n_pairs, absent, present })
}

/// Apply a template to a trial set.
pub fn score_trials(trials: &TrialSet, template: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = trials.dim;
    let dot = |x: &[f64]| template.iter().zip(x).map(|(&a, &b)| a * b).sum::<f64>();
    let t0 = (0..trials.n_pairs).map(|j| dot(&trials.absent[j * d..(j + 1) * d])).collect();
    let t1 = (0..trials.n_pairs).map(|j| dot(&trials.present[j * d..(j + 1) * d])).collect();
    (t0, t1)
}

/// Mann-Whitney AUC with midranks (ties count one half).
pub fn empirical_auc(scores0: &[f64], scores1: &[f64]) -> Result<f64> {
    let (n0, n1) = (scores0.len(), scores1.len());
    if n0 == 0 || n1 == 0 {
        return Err(Error::Config("empirical_auc: empty score set".into()));
    }
    let mut pooled: Vec<(f64, bool)> = scores0
        .iter()
        .map(|&s| (s, false))
        .chain(scores1.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must not be NaN"));
    let mut rank_sum1 = 0.0f64;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0; // ranks are 1-based
        for item in &pooled[i..j] {
            if item.1 {
                rank_sum1 += midrank;
            }
        }
        i = j;
    }
    Ok((rank_sum1 - n1 as f64 * (n1 as f64 + 1.0) / 2.0) / (n0 as f64 * n1 as f64))
}

/// Empirical ROC swept over thresholds at midpoints between consecutive
/// distinct pooled scores; runs from (0,0) to (1,1) inclusive.
pub fn roc_points(scores0: &[f64], scores1: &[f64]) -> Result<Vec<(f64, f64)>> {
    let (n0, n1) = (scores0.len(), scores1.len());
    if n0 == 0 || n1 == 0 {
        return Err(Error::Config("roc_points: empty score set".into()));
    }
    let mut pooled: Vec<f64> = scores0.iter().chain(scores1.iter()).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).expect("scores must not be NaN"));
    pooled.dedup();
    // thresholds descending: +inf, then midpoints from high to low, then below min
    let mut thresholds = vec![f64::INFINITY];
    for w in pooled.windows(2).rev() {
        thresholds.push(0.5 * (w[0] + w[1]));
    }
    thresholds.push(pooled[0] - 1.0);
    let mut pts = Vec::with_capacity(thresholds.len());
    for tau in thresholds {
        let fp = scores0.iter().filter(|&&s| s > tau).count() as f64 / n0 as f64;
        let tp = scores1.iter().filter(|&&s| s > tau).count() as f64 / n1 as f64;
        pts.push((fp, tp));
    }
    Ok(pts)
}

/// Standard normal CDF (Abramowitz-Stegun 7.1.26 erf, |error| < 1.5e-7).
pub fn normal_cdf(x: f64) -> f64 {
    let t = x / std::f64::consts::SQRT_2;
    0.5 * (1.0 + erf(t))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// AUC of the ideal linear observer on Gaussian data:
/// `(1 + erf(SNR/2)) / 2`, equivalently `Phi(SNR / sqrt(2))`.
pub fn analytic_auc(snr: f64) -> f64 {
    0.5 * (1.0 + erf(snr / 2.0))
}

// ---------------------------------------------------------------------------
// Ensemble comparison
// ---------------------------------------------------------------------------

/// Inputs of [`compare_ensembles`].
#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub spec: RoiSpec,
    /// Detection-task noise variance (image-space i.i.d. Gaussian).
    pub sigma2: f64,
    pub n_pairs: usize,
    /// ROIs used for covariance estimation from each ensemble; the real
    /// ensemble's remaining ROIs form the trial pool.
    pub cov_count: usize,
    pub seed: u64,
}

/// The comparison report serialized to JSON by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub auc_real: f64,
    pub auc_synth: f64,
    pub delta_auc: f64,
    pub snr_real: f64,
    pub snr_synth: f64,
    pub template_cosine: f64,
    pub roc_real: Vec<(f64, f64)>,
    pub roc_synth: Vec<(f64, f64)>,
    /// Analytic Gaussian reference Phi(SNR/2) for the real-ensemble SNR.
    pub analytic_auc_real: f64,
    pub config: BTreeMap<String, String>,
    #[serde(skip)]
    pub template_real: Vec<f64>,
    #[serde(skip)]
    pub template_synth: Vec<f64>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Fit Hotelling observers on the real and synthetic ensembles and evaluate
/// both on identical trials drawn from real backgrounds held out of the
/// covariance estimation (the learned model is judged by how well its
/// observer transfers to real data).
pub fn compare_ensembles(
    real_images: &[f32],
    synth_images: &[f32],
    n: usize,
    signal: &[f64],
    cfg: &CompareConfig,
) -> Result<ComparisonReport> {
    let real_count = real_images.len() / (n * n);
    let synth_count = synth_images.len() / (n * n);
    let real_rois = extract_rois(real_images, n, real_count, &cfg.spec)?;
    let synth_rois = extract_rois(synth_images, n, synth_count, &cfg.spec)?;
    let dim = cfg.spec.side * cfg.spec.side;

    if cfg.cov_count < 2 {
        return Err(Error::Config("compare: cov_count must be >= 2".into()));
    }
    if real_count < cfg.cov_count + cfg.n_pairs {
        return Err(Error::Config(format!(
            "compare: real ensemble of {real_count} cannot supply {} covariance ROIs plus {} trial backgrounds",
            cfg.cov_count, cfg.n_pairs
        )));
    }
    if synth_count < cfg.cov_count {
        return Err(Error::Config(format!(
            "compare: synthetic ensemble of {synth_count} smaller than cov_count {}",
            cfg.cov_count
        )));
    }

    // estimation/evaluation split by index ranges; disjoint by construction
    let cov_end = cfg.cov_count * dim;
    let real_cov = &real_rois[..cov_end];
    let trial_pool = &real_rois[cov_end..];
    debug_assert_eq!(real_cov.len() + trial_pool.len(), real_rois.len());
    let synth_cov = &synth_rois[..cov_end];

    let cm_real = fit_cov(real_cov, dim, cfg.sigma2)?;
    let cm_synth = fit_cov(synth_cov, dim, cfg.sigma2)?;
    let (w_real, snr_real) = hotelling_template(&cm_real, signal)?;
    let (w_synth, snr_synth) = hotelling_template(&cm_synth, signal)?;

    // identical trial realizations for both observers
    let mut rng = crate::rng::substream(cfg.seed, "trials", 0);
    let trials = detection_trial_vectors(trial_pool, dim, signal, cfg.sigma2, cfg.n_pairs, &mut rng)?;
    let (t0_real, t1_real) = score_trials(&trials, &w_real);
    let (t0_synth, t1_synth) = score_trials(&trials, &w_synth);

    let auc_real = empirical_auc(&t0_real, &t1_real)?;
    let auc_synth = empirical_auc(&t0_synth, &t1_synth)?;

    let mut config = BTreeMap::new();
    config.insert("cov_count".into(), cfg.cov_count.to_string());
    config.insert("n_pairs".into(), cfg.n_pairs.to_string());
    config.insert("roi_center_col".into(), cfg.spec.center_col.to_string());
    config.insert("roi_center_row".into(), cfg.spec.center_row.to_string());
    config.insert("roi_side".into(), cfg.spec.side.to_string());
    config.insert("seed".into(), cfg.seed.to_string());
    config.insert("task_sigma2".into(), format!("{:?}", cfg.sigma2));

    Ok(ComparisonReport {
        auc_real,
        auc_synth,
        delta_auc: (auc_real - auc_synth).abs(),
        snr_real,
        snr_synth,
        template_cosine: cosine(&w_real, &w_synth),
        roc_real: roc_points(&t0_real, &t1_real)?,
        roc_synth: roc_points(&t0_synth, &t1_synth)?,
        analytic_auc_real: analytic_auc(snr_real),
        config,
        template_real: w_real,
        template_synth: w_synth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng as _;

    fn rand_vec(len: usize, rng: &mut Rng) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn roi_extraction_identity_and_bounds() {
        let n = 4;
        let img: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let full = extract_rois(&img, n, 1, &RoiSpec::centered(n, 4)).unwrap();
        assert_eq!(full, (0..16).map(|i| i as f64).collect::<Vec<_>>());

        let center = extract_rois(&img, n, 1, &RoiSpec::centered(n, 2)).unwrap();
        assert_eq!(center, vec![5.0, 6.0, 9.0, 10.0]);

        assert!(extract_rois(&img, n, 1, &RoiSpec { center_row: 0, center_col: 0, side: 4 })
            .is_err());
    }

    #[test]
    fn constant_image_crops_to_constant() {
        let img = vec![2.5f32; 64];
        let rois = extract_rois(&img, 8, 1, &RoiSpec::centered(8, 4)).unwrap();
        assert!(rois.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn identical_rois_give_zero_factor() {
        let rois = vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let cm = fit_cov(&rois, 3, 0.5).unwrap();
        assert!(cm.factor_rows.iter().all(|&v| v == 0.0));
        let k = cm.dense_covariance();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.5 } else { 0.0 };
                assert_eq!(k[i * 3 + j], expect);
            }
        }
    }

    #[test]
    fn too_few_rois_rejected() {
        assert!(fit_cov(&[1.0, 2.0], 2, 1.0).is_err());
    }

    #[test]
    fn reconstructed_covariance_matches_sample_covariance() {
        let mut rng = substream(3, "cov", 0);
        let (dim, n) = (5, 40);
        let rois = rand_vec(dim * n, &mut rng);
        let cm = fit_cov(&rois, dim, 0.3).unwrap();
        let k = cm.dense_covariance();
        // direct sample covariance + sigma2 I
        let mut mean = vec![0.0; dim];
        for j in 0..n {
            for (m, &v) in mean.iter_mut().zip(&rois[j * dim..(j + 1) * dim]) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for a in 0..dim {
            for b in 0..dim {
                let mut c = 0.0;
                for j in 0..n {
                    c += (rois[j * dim + a] - mean[a]) * (rois[j * dim + b] - mean[b]);
                }
                c /= (n - 1) as f64;
                if a == b {
                    c += 0.3;
                }
                assert!((k[a * dim + b] - c).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn white_noise_template_closed_form() {
        let dim = 9;
        let cm = CovModel::from_factors(dim, vec![0.0; dim], Vec::new(), 0.25);
        let s: Vec<f64> = (0..dim).map(|i| (i as f64) * 0.1 + 0.2).collect();
        let (w, snr) = hotelling_template(&cm, &s).unwrap();
        let s_norm2: f64 = s.iter().map(|v| v * v).sum();
        for (wi, si) in w.iter().zip(&s) {
            assert_eq!(*wi, si / 0.25);
        }
        assert!((snr - (s_norm2 / 0.25).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn woodbury_matches_dense_inverse() {
        // p^2 = 16, N = 100, tolerance 1e-8 relative
        let mut rng = substream(7, "wb", 0);
        let (dim, n) = (16, 100);
        let rois = rand_vec(dim * n, &mut rng);
        let cm = fit_cov(&rois, dim, 0.05).unwrap();
        let s = rand_vec(dim, &mut rng);
        let (w, snr) = hotelling_template(&cm, &s).unwrap();
        let (w_ref, snr_ref) = oracle::dense_template(&cm, &s).unwrap();
        let scale = w_ref.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        for (a, b) in w.iter().zip(&w_ref) {
            assert!((a - b).abs() / scale <= 1e-8, "{a} vs {b}");
        }
        assert!((snr - snr_ref).abs() / snr_ref <= 1e-8);
    }

    #[test]
    fn template_scales_linearly_with_signal() {
        let mut rng = substream(9, "lin", 0);
        let (dim, n) = (8, 30);
        let rois = rand_vec(dim * n, &mut rng);
        let cm = fit_cov(&rois, dim, 0.2).unwrap();
        let s = rand_vec(dim, &mut rng);
        let s2: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        let (w, snr) = hotelling_template(&cm, &s).unwrap();
        let (w2, snr2) = hotelling_template(&cm, &s2).unwrap();
        for (a, b) in w.iter().zip(&w2) {
            assert!((2.0 * a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        assert!((2.0 * snr - snr2).abs() <= 1e-9 * snr2);
    }

    #[test]
    fn sigma_zero_rejected() {
        let cm = CovModel::from_factors(4, vec![0.0; 4], vec![0.0; 8], 0.0);
        assert!(hotelling_template(&cm, &[1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn auc_trivial_cases_and_brute_force() {
        // perfectly separated
        assert_eq!(empirical_auc(&[0.0, 0.1], &[1.0, 2.0]).unwrap(), 1.0);
        // identical sets
        assert_eq!(empirical_auc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.5);
        // 3 vs 3 with ties, against exhaustive pair counting
        let s0 = [0.3, 0.7, 0.7];
        let s1 = [0.7, 0.9, 0.1];
        let expect = oracle::auc_pair_counting(&s0, &s1);
        assert_eq!(empirical_auc(&s0, &s1).unwrap(), expect);
    }

    #[test]
    fn auc_matches_brute_force_on_random_sets() {
        let mut rng = substream(11, "auc", 0);
        for trial in 0..20 {
            let n0 = 1 + (trial % 10);
            let n1 = 1 + ((trial * 3) % 10);
            // quantized scores so ties actually occur
            let s0: Vec<f64> =
                (0..n0).map(|_| (rng.random_range(0..8) as f64) * 0.25).collect();
            let s1: Vec<f64> =
                (0..n1).map(|_| (rng.random_range(0..8) as f64) * 0.25).collect();
            let fast = empirical_auc(&s0, &s1).unwrap();
            let slow = oracle::auc_pair_counting(&s0, &s1);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn roc_endpoints_and_monotonicity() {
        let mut rng = substream(13, "roc", 0);
        let s0 = rand_vec(50, &mut rng);
        let s1: Vec<f64> = rand_vec(50, &mut rng).iter().map(|v| v + 0.5).collect();
        let pts = roc_points(&s0, &s1).unwrap();
        assert_eq!(*pts.first().unwrap(), (0.0, 0.0));
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
        for w in pts.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1, "{:?} -> {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn auc_invariant_under_positive_template_scaling() {
        // covariance scaling rescales w but leaves the decision rule intact
        let mut rng = substream(15, "scale", 0);
        let (dim, n) = (6, 20);
        let pool = rand_vec(dim * n, &mut rng);
        let s = rand_vec(dim, &mut rng);
        let cm = fit_cov(&pool, dim, 0.4).unwrap();
        let (w, _) = hotelling_template(&cm, &s).unwrap();
        let w_scaled: Vec<f64> = w.iter().map(|v| 3.7 * v).collect();

        let mut rng1 = substream(16, "tr", 0);
        let trials = detection_trial_vectors(&pool, dim, &s, 0.4, 10, &mut rng1).unwrap();
        let (a0, a1) = score_trials(&trials, &w);
        let (b0, b1) = score_trials(&trials, &w_scaled);
        assert_eq!(empirical_auc(&a0, &a1).unwrap(), empirical_auc(&b0, &b1).unwrap());
        assert_eq!(roc_points(&a0, &a1).unwrap(), roc_points(&b0, &b1).unwrap());
    }

    #[test]
    fn null_signal_auc_near_half_and_mean_shift_matches() {
        let mut rng = substream(17, "null", 0);
        let (dim, pool_n) = (9, 600);
        let pool = rand_vec(dim * pool_n, &mut rng);
        let zero = vec![0.0; dim];
        let w = rand_vec(dim, &mut rng);

        let mut trng = substream(18, "tr", 0);
        let (t0, t1) =
            run_detection_trials(&pool, dim, &w, &zero, 0.25, 500, &mut trng).unwrap();
        let auc = empirical_auc(&t0, &t1).unwrap();
        // binomial 95% interval around 0.5 at 500 pairs
        assert!((auc - 0.5).abs() < 1.96 * (0.25f64 / 500.0).sqrt() + 0.02, "auc {auc}");

        // nonzero signal: mean separation approaches w.s
        let s = rand_vec(dim, &mut rng);
        let mut trng = substream(19, "tr", 0);
        let (t0, t1) = run_detection_trials(&pool, dim, &w, &s, 0.25, 500, &mut trng).unwrap();
        let ws: f64 = w.iter().zip(&s).map(|(&a, &b)| a * b).sum();
        let shift = t1.iter().sum::<f64>() / 500.0 - t0.iter().sum::<f64>() / 500.0;
        let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((shift - ws).abs() < 0.2 * w_norm, "shift {shift} vs {ws}");
    }

    #[test]
    fn insufficient_backgrounds_rejected() {
        let pool = vec![0.0; 4 * 3];
        let w = vec![1.0; 4];
        let s = vec![0.0; 4];
        let mut rng = substream(21, "x", 0);
        assert!(run_detection_trials(&pool, 4, &w, &s, 1.0, 5, &mut rng).is_err());
    }

    #[test]
    fn gaussian_known_covariance_auc_within_binomial_ci() {
        // backgrounds f = B xi with known factor B; total covariance of the
        // trial data is exactly sigma2 I + B B^T, so AUC -> Phi(SNR/2)
        let mut rng = substream(23, "gauss", 0);
        let (dim, rank) = (16, 5);
        let b_factor = rand_vec(dim * rank, &mut rng);
        let sigma2 = 0.5;

        // known covariance: factor rows are the columns of B
        let mut rows = vec![0.0; rank * dim];
        for j in 0..rank {
            for i in 0..dim {
                rows[j * dim + i] = b_factor[i * rank + j];
            }
        }
        let cm = CovModel::from_factors(dim, vec![0.0; dim], rows, sigma2);
        let mut s = rand_vec(dim, &mut rng);
        // scale the signal to put AUC in a sensitive range (~0.85)
        let (_, snr0) = hotelling_template(&cm, &s).unwrap();
        let target_snr = 2.1;
        for v in &mut s {
            *v *= target_snr / snr0;
        }
        let (w, snr) = hotelling_template(&cm, &s).unwrap();
        assert!((snr - target_snr).abs() < 1e-9);

        // draw Gaussian backgrounds with covariance B B^T
        let n_pairs = 500;
        let pool_n = n_pairs;
        let mut pool = vec![0.0; pool_n * dim];
        for j in 0..pool_n {
            let xi = (0..rank)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                })
                .collect::<Vec<f64>>();
            for i in 0..dim {
                let mut v = 0.0;
                for (r, &x) in xi.iter().enumerate() {
                    v += b_factor[i * rank + r] * x;
                }
                pool[j * dim + i] = v;
            }
        }

        let mut trng = substream(29, "tr", 0);
        let (t0, t1) =
            run_detection_trials(&pool, dim, &w, &s, sigma2, n_pairs, &mut trng).unwrap();
        let auc = empirical_auc(&t0, &t1).unwrap();
        let expected = analytic_auc(snr);
        let half_width = 1.96 * (expected * (1.0 - expected) / n_pairs as f64).sqrt();
        assert!(
            (auc - expected).abs() <= half_width,
            "auc {auc} vs analytic {expected} +/- {half_width}"
        );
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-9);
        assert!((normal_cdf(1.959964) - 0.975).abs() < 1e-6);
        assert!((normal_cdf(-1.0) - 0.158655).abs() < 1e-6);
    }

    #[test]
    fn self_comparison_is_exactly_equal() {
        let mut rng = substream(31, "self", 0);
        let n = 16;
        let count = 40;
        let images: Vec<f32> =
            (0..count * n * n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let cfg = CompareConfig {
            spec: RoiSpec::centered(n, 8),
            sigma2: 0.3,
            n_pairs: 10,
            cov_count: 20,
            seed: 5,
        };
        let s = crate::objects::gaussian_signal(8, 0.5, 1.5, 0.0, 0.0);
        let rep = compare_ensembles(&images, &images, n, &s, &cfg).unwrap();
        assert_eq!(rep.delta_auc, 0.0);
        assert!((rep.template_cosine - 1.0).abs() <= 1e-12);
        assert_eq!(rep.roc_real, rep.roc_synth);
    }

    #[test]
    fn white_noise_ensemble_departs_from_correlated_real() {
        // correlated real ensemble vs variance-matched white synthetic:
        // templates must differ measurably
        let n = 16;
        let count = 120;
        let p = crate::objects::LumpyParams { nbar: 30.0, amplitude: 1.0, width: 1.5, n };
        let mut real = Vec::with_capacity(count * n * n);
        for i in 0..count {
            let img =
                crate::objects::sample_lumpy(&p, &mut substream(37, "lump", i as u64)).unwrap();
            real.extend(img.data().iter().map(|&v| v as f32));
        }
        // match mean and variance
        let mean = real.iter().map(|&v| v as f64).sum::<f64>() / real.len() as f64;
        let var = real.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>()
            / real.len() as f64;
        let mut wrng = substream(41, "white", 0);
        let synth: Vec<f32> = (0..count * n * n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut wrng);
                (mean + var.sqrt() * z) as f32
            })
            .collect();

        let cfg = CompareConfig {
            spec: RoiSpec::centered(n, 8),
            sigma2: 0.05 * var,
            n_pairs: 40,
            cov_count: 80,
            seed: 9,
        };
        let s = crate::objects::gaussian_signal(8, 0.3 * var.sqrt(), 1.5, 0.0, 0.0);
        let rep = compare_ensembles(&real, &synth, n, &s, &cfg).unwrap();
        assert!(rep.template_cosine < 0.999, "cosine {}", rep.template_cosine);
        assert!(rep.delta_auc > 0.0, "delta {}", rep.delta_auc);
    }
}
