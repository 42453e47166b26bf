//! Gaussian mixture fitting by expectation-maximization.
//!
//! Densities and posteriors are computed in the log domain with log-sum-exp
//! so small responsibilities survive at d' = 10. Every covariance carries a
//! ridge `eps * I` scaled to the data; the log-likelihood trace is recorded
//! per iteration and must be non-decreasing (EM guarantee).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::select::bic_score;
use crate::error::{Error, Result};

const LOG_2PI: f64 = 1.837877066409345483560659472811; // ln(2*pi)
const WEIGHT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    pub max_iter: usize,
    /// Relative log-likelihood change below which EM stops.
    pub tol: f64,
    /// Independent restarts; the best final log-likelihood wins.
    pub n_init: usize,
    /// Covariance ridge as a fraction of mean data variance.
    pub reg_factor: f64,
    /// Absolute ridge floor. Keeps the BIC sweep from rewarding degenerate
    /// density spikes on small-scale data (normalized-embedding reductions),
    /// where the relative term alone is vanishing.
    pub reg_floor: f64,
    pub covariance: CovarianceKind,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            max_iter: 100,
            tol: 1e-4,
            n_init: 3,
            reg_factor: 1e-6,
            reg_floor: 1e-4,
            covariance: CovarianceKind::Full,
        }
    }
}

/// Fitted mixture parameters.
#[derive(Debug, Clone)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl GmmParams {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, DVector::len)
    }
}

/// Diagnostics from one `fit_gmm` call (best restart).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub log_likelihood_trace: Vec<f64>,
    pub final_log_likelihood: f64,
    pub parameter_count: usize,
    pub bic: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Free parameters of a k-component mixture over d dimensions.
pub fn parameter_count(k: usize, d: usize, covariance: CovarianceKind) -> usize {
    let per_cov = match covariance {
        CovarianceKind::Full => d * (d + 1) / 2,
        CovarianceKind::Diagonal => d,
    };
    (k - 1) + k * d + k * per_cov
}

/// Fit a k-component Gaussian mixture to the rows of `x`.
pub fn fit_gmm(
    x: &DMatrix<f64>,
    k: usize,
    config: &GmmConfig,
    seed: u64,
) -> Result<(GmmParams, FitReport)> {
    let n = x.nrows();
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!(
            "component count k={k} out of range 1..={n}"
        )));
    }
    if x.ncols() == 0 {
        return Err(Error::InvalidArgument("fit_gmm: zero-dimensional input".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("fit_gmm: non-finite input".into()));
    }
    if config.max_iter == 0 || config.n_init == 0 {
        return Err(Error::Config("max_iter and n_init must be >= 1".into()));
    }

    let order = canonical_order(x);
    let ridge = ridge_for(x, config);

    let mut best: Option<(GmmParams, FitReport)> = None;
    for restart in 0..config.n_init {
        let rng_seed = derive_seed(seed, restart as u64);
        let fitted = fit_once(x, k, config, ridge, &order, rng_seed)?;
        let better = match &best {
            None => true,
            Some((_, report)) => fitted.1.final_log_likelihood > report.final_log_likelihood,
        };
        if better {
            best = Some(fitted);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Log posterior responsibilities and total log-likelihood under `params`.
///
/// Returns the normalized responsibility matrix (rows sum to 1) and the sum
/// over points of `log P(x_i)`.
pub fn responsibilities(params: &GmmParams, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = x.nrows();
    let d = x.ncols();
    if d != params.dim() {
        return Err(Error::DimensionMismatch {
            left: params.dim(),
            right: d,
        });
    }
    let k = params.k();
    let mut log_weighted = DMatrix::zeros(n, k);
    for (j, ((mean, cov), &weight)) in params
        .means
        .iter()
        .zip(&params.covariances)
        .zip(&params.weights)
        .enumerate()
    {
        let chol = cholesky_with_jitter(cov)?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_weight = weight.max(WEIGHT_FLOOR).ln();
        for i in 0..n {
            let diff = x.row(i).transpose() - mean;
            let maha = diff.dot(&chol.solve(&diff)).max(0.0);
            log_weighted[(i, j)] =
                log_weight - 0.5 * (d as f64 * LOG_2PI + log_det + maha);
        }
    }

    let mut total = 0.0;
    let mut resp = DMatrix::zeros(n, k);
    for i in 0..n {
        let row = log_weighted.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse;
        for j in 0..k {
            resp[(i, j)] = (log_weighted[(i, j)] - lse).exp();
        }
    }
    Ok((resp, total))
}

fn fit_once(
    x: &DMatrix<f64>,
    k: usize,
    config: &GmmConfig,
    ridge: f64,
    order: &[usize],
    rng_seed: u64,
) -> Result<(GmmParams, FitReport)> {
    let n = x.nrows();
    let d = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let centers = kmeanspp_centers(x, k, order, &mut rng);
    let base_cov = regularized_scatter(x, ridge, config.covariance);
    let mut params = GmmParams {
        weights: vec![1.0 / k as f64; k],
        means: centers.iter().map(|&i| x.row(i).transpose()).collect(),
        covariances: vec![base_cov; k],
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;
    let mut previous = f64::NEG_INFINITY;
    for iter in 0..config.max_iter {
        let (resp, ll) = responsibilities(&params, x)?;
        trace.push(ll);
        if iter > 0 {
            let rel = (ll - previous).abs() / ll.abs().max(1.0);
            if rel < config.tol {
                converged = true;
                break;
            }
        }
        previous = ll;
        m_step(&mut params, x, &resp, ridge, config.covariance);
        iterations += 1;
    }
    if !converged {
        // Params moved in the last M-step; score them so the reported
        // likelihood matches the returned parameters.
        let (_, ll) = responsibilities(&params, x)?;
        trace.push(ll);
    }
    let final_ll = *trace.last().expect("max_iter >= 1");
    let p = parameter_count(k, d, config.covariance);
    let report = FitReport {
        final_log_likelihood: final_ll,
        log_likelihood_trace: trace,
        parameter_count: p,
        bic: bic_score(n, p, final_ll),
        converged,
        iterations,
    };
    Ok((params, report))
}

fn m_step(
    params: &mut GmmParams,
    x: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    ridge: f64,
    covariance: CovarianceKind,
) {
    let n = x.nrows();
    let d = x.ncols();
    let k = params.k();
    for j in 0..k {
        let nk: f64 = (0..n).map(|i| resp[(i, j)]).sum();
        if nk < n as f64 * 1e-12 {
            // Starved component: leave its shape alone, let the weight floor
            // keep the mixture well-defined.
            params.weights[j] = WEIGHT_FLOOR;
            continue;
        }
        let mut mean = DVector::zeros(d);
        for i in 0..n {
            mean += x.row(i).transpose() * resp[(i, j)];
        }
        mean /= nk;

        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let diff = x.row(i).transpose() - &mean;
            cov.syger(resp[(i, j)], &diff, &diff, 1.0);
        }
        cov /= nk;
        // syger fills the lower triangle; mirror it.
        for r in 0..d {
            for c in (r + 1)..d {
                cov[(r, c)] = cov[(c, r)];
            }
        }
        if covariance == CovarianceKind::Diagonal {
            for r in 0..d {
                for c in 0..d {
                    if r != c {
                        cov[(r, c)] = 0.0;
                    }
                }
            }
        }
        for r in 0..d {
            cov[(r, r)] += ridge;
        }
        params.weights[j] = nk / n as f64;
        params.means[j] = mean;
        params.covariances[j] = cov;
    }
    let total: f64 = params.weights.iter().sum();
    for w in &mut params.weights {
        *w = (*w / total).max(WEIGHT_FLOOR);
    }
    let total: f64 = params.weights.iter().sum();
    for w in &mut params.weights {
        *w /= total;
    }
}

/// Ridge scaled to the data: `reg_factor * trace(sample covariance) / d`,
/// floored for zero-variance inputs.
fn ridge_for(x: &DMatrix<f64>, config: &GmmConfig) -> f64 {
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    let mut trace = 0.0;
    for i in 0..x.nrows() {
        let diff = x.row(i) - &mean;
        trace += diff.iter().map(|v| v * v).sum::<f64>();
    }
    trace /= n * x.ncols() as f64;
    (config.reg_factor * trace).max(config.reg_floor)
}

fn regularized_scatter(x: &DMatrix<f64>, ridge: f64, covariance: CovarianceKind) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let mean = x.row_mean();
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..x.nrows() {
        let diff = (x.row(i) - &mean).transpose();
        cov.syger(1.0 / n, &diff, &diff, 1.0);
    }
    for r in 0..d {
        for c in (r + 1)..d {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    if covariance == CovarianceKind::Diagonal {
        for r in 0..d {
            for c in 0..d {
                if r != c {
                    cov[(r, c)] = 0.0;
                }
            }
        }
    }
    for r in 0..d {
        cov[(r, r)] += ridge;
    }
    cov
}

fn cholesky_with_jitter(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(cov.clone()) {
        return Ok(chol);
    }
    let scale = cov.diagonal().iter().copied().fold(0.0f64, f64::max).max(1e-12);
    let mut jitter = scale * 1e-10;
    for _ in 0..8 {
        let mut padded = cov.clone();
        for r in 0..padded.nrows() {
            padded[(r, r)] += jitter;
        }
        if let Some(chol) = Cholesky::new(padded) {
            return Ok(chol);
        }
        jitter *= 10.0;
    }
    Err(Error::Internal(
        "covariance not positive definite after jitter escalation".into(),
    ))
}

/// Row indices sorted by lexicographic row comparison. Restart seeding walks
/// this order instead of storage order, so fits are invariant to permuting
/// the input rows (duplicates are interchangeable).
fn canonical_order(x: &DMatrix<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| {
        for c in 0..x.ncols() {
            let cmp = x[(a, c)].total_cmp(&x[(b, c)]);
            if cmp != std::cmp::Ordering::Equal {
                return cmp;
            }
        }
        std::cmp::Ordering::Equal
    });
    order
}

/// k-means++-style center selection over the canonical order.
fn kmeanspp_centers(
    x: &DMatrix<f64>,
    k: usize,
    order: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = x.nrows();
    let mut centers = Vec::with_capacity(k);
    let first = order[rng.random_range(0..n)];
    centers.push(first);
    let mut dist2: Vec<f64> = (0..n)
        .map(|i| (x.row(i) - x.row(first)).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = *order.last().expect("n >= 1");
            for &idx in order {
                target -= dist2[idx];
                if target <= 0.0 {
                    chosen = idx;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass is zero (duplicate points): take the first
            // canonical index not yet chosen, or recycle the first center.
            order
                .iter()
                .copied()
                .find(|i| !centers.contains(i))
                .unwrap_or(centers[0])
        };
        centers.push(next);
        for i in 0..n {
            let d = (x.row(i) - x.row(next)).norm_squared();
            if d < dist2[i] {
                dist2[i] = d;
            }
        }
    }
    centers
}
