//! Gaussian-mixture model of historical extra times and the per-order
//! threshold that maximizes `(p - theta) * F(theta)`.
//!
//! The product trades the chance that a group at least as good as `theta`
//! turns up (`F(theta)`) against the slack left after accepting it
//! (`p - theta`). Mixtures can make it multimodal, so the maximizer scans a
//! fixed grid and polishes every grid-local peak with golden-section search.
//!
//! All quantities here are in seconds.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VARIANCE_FLOOR: f64 = 1e-4;
const GRID_POINTS: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("need at least {k} samples, got {n}")]
    TooFewSamples { n: usize, k: usize },
    #[error("component count must be at least 1")]
    ZeroComponents,
    #[error("sample {0} is negative or not finite")]
    BadSample(f64),
    #[error("invalid mixture: {0}")]
    Invalid(String),
}

/// A distribution function usable by [`optimal_theta`].
pub trait Cdf {
    fn cdf(&self, x: f64) -> f64;
}

/// Uniform distribution on `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
pub struct UniformCdf {
    pub lo: f64,
    pub hi: f64,
}

impl Cdf for UniformCdf {
    fn cdf(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    #[serde(rename = "K")]
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    0.5 * libm::erfc(-(x - mean) / (var.sqrt() * SQRT_2))
}

fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self, GmmError> {
        let model = GmmModel { k: weights.len(), weights, means, variances };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), GmmError> {
        if self.k == 0 {
            return Err(GmmError::ZeroComponents);
        }
        if self.weights.len() != self.k || self.means.len() != self.k || self.variances.len() != self.k {
            return Err(GmmError::Invalid(format!("K = {} but arrays differ in length", self.k)));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(GmmError::Invalid(format!("weights sum to {sum}")));
        }
        if self.variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(GmmError::Invalid("variances must be positive and means finite".into()));
        }
        Ok(())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        (0..self.k)
            .map(|j| self.weights[j] * normal_log_pdf(x, self.means[j], self.variances[j]).exp())
            .sum()
    }

    fn log_terms(&self, x: f64, out: &mut [f64]) {
        for j in 0..self.k {
            out[j] = self.weights[j].ln() + normal_log_pdf(x, self.means[j], self.variances[j]);
        }
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        let mut terms = vec![0.0; self.k];
        samples
            .iter()
            .map(|&x| {
                self.log_terms(x, &mut terms);
                log_sum_exp(&terms)
            })
            .sum()
    }

    /// Bayesian information criterion; lower is better.
    pub fn bic(&self, samples: &[f64]) -> f64 {
        let params = (3 * self.k - 1) as f64;
        params * (samples.len() as f64).ln() - 2.0 * self.log_likelihood(samples)
    }
}

impl Cdf for GmmModel {
    fn cdf(&self, x: f64) -> f64 {
        let f: f64 = (0..self.k)
            .map(|j| self.weights[j] * normal_cdf(x, self.means[j], self.variances[j]))
            .sum();
        f.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub k: usize,
    /// Stop once an iteration improves the log-likelihood by less than this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { k: 3, tol: 1e-6, max_iter: 500, seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    /// Log-likelihood of the model entering each iteration, then of the final model.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

fn mean_var(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// k-means++ seeding: first center uniform, later ones proportional to the
/// squared distance from the nearest chosen center.
fn kmeanspp(samples: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers = vec![samples[rng.gen_range(0..samples.len())]];
    let mut d2: Vec<f64> = samples.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = samples.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.gen_range(0..samples.len())
        };
        let c = samples[pick];
        centers.push(c);
        for (d, x) in d2.iter_mut().zip(samples) {
            *d = d.min((x - c).powi(2));
        }
    }
    centers.sort_by(f64::total_cmp);
    centers
}

/// Fits a `k`-component mixture by expectation-maximization.
///
/// Identical samples yield a single component with the floor variance.
pub fn fit_em(samples: &[f64], opts: &EmOptions) -> Result<EmFit, GmmError> {
    let k = opts.k;
    if k == 0 {
        return Err(GmmError::ZeroComponents);
    }
    if samples.len() < k {
        return Err(GmmError::TooFewSamples { n: samples.len(), k });
    }
    if let Some(&bad) = samples.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(GmmError::BadSample(bad));
    }
    let (mean, var) = mean_var(samples);
    if var < VARIANCE_FLOOR || k == 1 {
        let model = GmmModel { k: 1, weights: vec![1.0], means: vec![mean], variances: vec![var.max(VARIANCE_FLOOR)] };
        let ll = model.log_likelihood(samples);
        return Ok(EmFit { model, log_likelihoods: vec![ll], converged: true });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let centers = kmeanspp(samples, k, &mut rng);
    let n = samples.len();
    // hard assignment to the nearest center gives the starting responsibilities
    let mut resp = vec![0.0; n * k];
    for (i, &x) in samples.iter().enumerate() {
        let j = (0..k)
            .min_by(|&a, &b| (x - centers[a]).abs().total_cmp(&(x - centers[b]).abs()))
            .expect("k >= 1");
        resp[i * k + j] = 1.0;
    }
    let mut model = GmmModel { k, weights: vec![1.0 / k as f64; k], means: centers, variances: vec![var; k] };
    m_step(samples, &resp, &mut model);

    let mut lls = Vec::new();
    let mut terms = vec![0.0; k];
    let mut converged = false;
    for _ in 0..opts.max_iter {
        // E-step; also the log-likelihood of the current model
        let mut ll = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            model.log_terms(x, &mut terms);
            let lse = log_sum_exp(&terms);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (terms[j] - lse).exp();
            }
        }
        if let Some(&prev) = lls.last() {
            if ll - prev < opts.tol {
                lls.push(ll);
                converged = true;
                break;
            }
        }
        lls.push(ll);
        m_step(samples, &resp, &mut model);
    }
    if !converged {
        lls.push(model.log_likelihood(samples));
    }
    Ok(EmFit { model, log_likelihoods: lls, converged })
}

fn m_step(samples: &[f64], resp: &[f64], model: &mut GmmModel) {
    let k = model.k;
    let n = samples.len() as f64;
    for j in 0..k {
        let nk: f64 = (0..samples.len()).map(|i| resp[i * k + j]).sum();
        if nk <= f64::MIN_POSITIVE {
            model.weights[j] = 0.0;
            continue;
        }
        let mean = samples.iter().enumerate().map(|(i, x)| resp[i * k + j] * x).sum::<f64>() / nk;
        let var = samples
            .iter()
            .enumerate()
            .map(|(i, x)| resp[i * k + j] * (x - mean) * (x - mean))
            .sum::<f64>()
            / nk;
        model.weights[j] = nk / n;
        model.means[j] = mean;
        model.variances[j] = var.max(VARIANCE_FLOOR);
    }
    let total: f64 = model.weights.iter().sum();
    for w in &mut model.weights {
        *w /= total;
    }
}

/// Fits every `k` in `ks` and keeps the lowest BIC.
pub fn fit_em_bic(samples: &[f64], ks: impl IntoIterator<Item = usize>, opts: &EmOptions) -> Result<EmFit, GmmError> {
    let mut best: Option<(f64, EmFit)> = None;
    for k in ks {
        if k > samples.len() {
            break;
        }
        let fit = fit_em(samples, &EmOptions { k, ..*opts })?;
        let bic = fit.model.bic(samples);
        if best.as_ref().map_or(true, |(b, _)| bic < *b) {
            best = Some((bic, fit));
        }
    }
    best.map(|(_, f)| f).ok_or(GmmError::TooFewSamples { n: samples.len(), k: 1 })
}

pub fn theta_objective<C: Cdf + ?Sized>(cdf: &C, p: f64, theta: f64) -> f64 {
    (p - theta) * cdf.cdf(theta)
}

/// Threshold in `[0, p]` maximizing `(p - theta) * F(theta)`.
pub fn optimal_theta<C: Cdf + ?Sized>(cdf: &C, p: f64) -> f64 {
    if !(p > 0.0) {
        return 0.0;
    }
    let f = |th: f64| theta_objective(cdf, p, th);
    let step = p / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| f(i as f64 * step)).collect();
    let mut best_theta = 0.0;
    let mut best_val = grid[0];
    for i in 0..GRID_POINTS {
        let left = if i > 0 { grid[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < GRID_POINTS { grid[i + 1] } else { f64::NEG_INFINITY };
        if grid[i] < left || grid[i] < right {
            continue;
        }
        let lo = (i as f64 - 1.0).max(0.0) * step;
        let hi = ((i + 1) as f64 * step).min(p);
        let (th, val) = golden_max(&f, lo, hi);
        let (th, val) = if val > grid[i] { (th, val) } else { (i as f64 * step, grid[i]) };
        if val > best_val {
            best_val = val;
            best_theta = th;
        }
    }
    best_theta
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd { (c, fc) } else { (d, fd) }
}
