//! BIC scoring and cluster-count selection.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::derive_seed;
use super::gmm::{fit_gmm, FitReport, GmmConfig, GmmParams};
use crate::error::{Error, Result};

/// Bayesian Information Criterion: `ln(n) * p - 2 * L` where `L` is the
/// maximized log-likelihood. Lower is better.
pub fn bic_score(n: usize, p: usize, log_likelihood: f64) -> f64 {
    assert!(n >= 1, "bic_score requires n >= 1");
    assert!(p >= 1, "bic_score requires p >= 1");
    (n as f64).ln() * p as f64 - 2.0 * log_likelihood
}

/// Fit k = 1..=min(k_max, n) and return the k minimizing BIC, ties broken
/// toward smaller k. The sweep runs in parallel; results are reduced in k
/// order so the outcome is deterministic.
pub fn select_num_clusters(
    x: &DMatrix<f64>,
    k_max: usize,
    config: &GmmConfig,
    seed: u64,
) -> Result<(usize, GmmParams, FitReport)> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("select_num_clusters: empty input".into()));
    }
    if k_max < 1 {
        return Err(Error::InvalidArgument("k_max must be >= 1".into()));
    }
    let upper = k_max.min(n);
    let fits: Vec<Result<(GmmParams, FitReport)>> = (1..=upper)
        .into_par_iter()
        .map(|k| fit_gmm(x, k, config, derive_seed(seed, k as u64)))
        .collect();

    let mut best: Option<(usize, GmmParams, FitReport)> = None;
    for (k, fit) in (1..=upper).zip(fits) {
        let (params, report) = fit?;
        let better = match &best {
            None => true,
            Some((_, _, best_report)) => report.bic < best_report.bic,
        };
        if better {
            best = Some((k, params, report));
        }
    }
    Ok(best.expect("at least one k fitted"))
}
