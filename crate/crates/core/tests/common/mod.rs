//! Shared fixtures and an independent reference implementation of
//! mixture-model scoring used as the oracle for clustering assertions.
//!
//! The reference EM here deliberately shares nothing with the library: plain
//! `Vec` math, Gauss-Jordan inversion, quantile initialization instead of
//! k-means++ seeding. On well-separated fixtures both must land in the same
//! optimum, so their BIC sweeps must agree on k.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trex_core::corpus::Chunk;

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

/// `count` Gaussian points around each center (Box-Muller).
pub fn gaussian_blobs(
    centers: &[[f64; 2]],
    sigma: f64,
    count: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut points = Vec::with_capacity(centers.len() * count);
    for center in centers {
        for _ in 0..count {
            points.push(vec![
                center[0] + sigma * normal(),
                center[1] + sigma * normal(),
            ]);
        }
    }
    points
}

/// Per-blob sample centroids, computed directly (the centroid oracle).
pub fn blob_centroids(points: &[Vec<f64>], blob_size: usize) -> Vec<Vec<f64>> {
    points
        .chunks(blob_size)
        .map(|blob| {
            let mut centroid = vec![0.0; blob[0].len()];
            for p in blob {
                for (c, v) in centroid.iter_mut().zip(p) {
                    *c += v;
                }
            }
            for c in &mut centroid {
                *c /= blob.len() as f64;
            }
            centroid
        })
        .collect()
}

/// Chunks drawn from two disjoint vocabularies: the first half samples words
/// `topicaNN`, the second half `topicbNN`. Deterministic for a fixed seed.
pub fn two_vocab_chunks(total: usize, words_per_chunk: usize, seed: u64) -> Vec<Chunk> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..total)
        .map(|i| {
            let vocab = if i < total / 2 { "topica" } else { "topicb" };
            let text = (0..words_per_chunk)
                .map(|_| format!("{vocab}{:02}", rng.random_range(0..20)))
                .collect::<Vec<_>>()
                .join(" ");
            Chunk {
                chunk_id: format!("doc{:03}#0", i),
                doc_id: format!("doc{:03}", i),
                seq: 0,
                text,
                token_count: words_per_chunk,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Reference EM oracle
// ---------------------------------------------------------------------------

pub struct OracleFit {
    pub log_likelihood: f64,
    pub bic: f64,
    pub means: Vec<Vec<f64>>,
}

struct SquareMatrix {
    n: usize,
    a: Vec<f64>,
}

impl SquareMatrix {
    fn get(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.n + c]
    }

    /// Gauss-Jordan inverse with partial pivoting, plus log|det|.
    fn invert(&self) -> Option<(SquareMatrix, f64)> {
        let n = self.n;
        let mut work = self.a.clone();
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n + i] = 1.0;
        }
        let mut log_det = 0.0;
        for col in 0..n {
            let mut pivot = col;
            for r in (col + 1)..n {
                if work[r * n + col].abs() > work[pivot * n + col].abs() {
                    pivot = r;
                }
            }
            let pivot_value = work[pivot * n + col];
            if pivot_value.abs() < 1e-300 {
                return None;
            }
            if pivot != col {
                for c in 0..n {
                    work.swap(col * n + c, pivot * n + c);
                    inv.swap(col * n + c, pivot * n + c);
                }
            }
            log_det += pivot_value.abs().ln();
            let scale = work[col * n + col];
            for c in 0..n {
                work[col * n + c] /= scale;
                inv[col * n + c] /= scale;
            }
            for r in 0..n {
                if r != col {
                    let factor = work[r * n + col];
                    if factor != 0.0 {
                        for c in 0..n {
                            work[r * n + c] -= factor * work[col * n + c];
                            inv[r * n + c] -= factor * inv[col * n + c];
                        }
                    }
                }
            }
        }
        Some((SquareMatrix { n, a: inv }, log_det))
    }
}

fn sample_covariance(data: &[Vec<f64>], ridge: f64) -> SquareMatrix {
    let n = data.len();
    let d = data[0].len();
    let mut mean = vec![0.0; d];
    for p in data {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for p in data {
        for r in 0..d {
            for c in 0..d {
                cov[r * d + c] += (p[r] - mean[r]) * (p[c] - mean[c]) / n as f64;
            }
        }
    }
    for i in 0..d {
        cov[i * d + i] += ridge;
    }
    SquareMatrix { n: d, a: cov }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Fixed-iteration reference EM with quantile initialization over the
/// lexicographically sorted points.
pub fn oracle_fit_gmm(data: &[Vec<f64>], k: usize, iterations: usize) -> OracleFit {
    let n = data.len();
    let d = data[0].len();
    assert!(k >= 1 && k <= n);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        for c in 0..d {
            let cmp = data[x][c].total_cmp(&data[y][c]);
            if cmp != std::cmp::Ordering::Equal {
                return cmp;
            }
        }
        std::cmp::Ordering::Equal
    });

    let global_cov = sample_covariance(data, 1e-9);
    let trace: f64 = (0..d).map(|i| global_cov.get(i, i)).sum();
    let ridge = (1e-6 * trace / d as f64).max(1e-4);

    let mut weights = vec![1.0 / k as f64; k];
    let mut means: Vec<Vec<f64>> = (0..k)
        .map(|j| data[order[(2 * j + 1) * n / (2 * k).max(1)]].clone())
        .collect();
    let mut covariances: Vec<Vec<f64>> = vec![global_cov.a.clone(); k];

    let mut log_likelihood = f64::NEG_INFINITY;
    for _ in 0..iterations {
        // E-step.
        let mut inverses = Vec::with_capacity(k);
        for cov in &covariances {
            let matrix = SquareMatrix { n: d, a: cov.clone() };
            inverses.push(matrix.invert().expect("ridged covariance invertible"));
        }
        let mut responsibilities = vec![vec![0.0; k]; n];
        let mut total = 0.0;
        for (i, point) in data.iter().enumerate() {
            let mut log_terms = vec![0.0; k];
            for j in 0..k {
                let (inv, log_det) = &inverses[j];
                let mut maha = 0.0;
                for r in 0..d {
                    for c in 0..d {
                        maha += (point[r] - means[j][r]) * inv.get(r, c) * (point[c] - means[j][c]);
                    }
                }
                log_terms[j] = weights[j].max(1e-300).ln()
                    - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + maha);
            }
            let lse = log_sum_exp(&log_terms);
            total += lse;
            for j in 0..k {
                responsibilities[i][j] = (log_terms[j] - lse).exp();
            }
        }
        log_likelihood = total;

        // M-step.
        for j in 0..k {
            let nk: f64 = responsibilities.iter().map(|r| r[j]).sum();
            if nk < 1e-12 {
                weights[j] = 1e-12;
                continue;
            }
            let mut mean = vec![0.0; d];
            for (i, point) in data.iter().enumerate() {
                for (m, v) in mean.iter_mut().zip(point) {
                    *m += responsibilities[i][j] * v;
                }
            }
            for m in &mut mean {
                *m /= nk;
            }
            let mut cov = vec![0.0; d * d];
            for (i, point) in data.iter().enumerate() {
                let w = responsibilities[i][j];
                for r in 0..d {
                    for c in 0..d {
                        cov[r * d + c] += w * (point[r] - mean[r]) * (point[c] - mean[c]);
                    }
                }
            }
            for v in &mut cov {
                *v /= nk;
            }
            for i in 0..d {
                cov[i * d + i] += ridge;
            }
            weights[j] = nk / n as f64;
            means[j] = mean;
            covariances[j] = cov;
        }
        let weight_sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= weight_sum;
        }
    }

    let p = (k - 1) + k * d + k * d * (d + 1) / 2;
    OracleFit {
        log_likelihood,
        bic: (n as f64).ln() * p as f64 - 2.0 * log_likelihood,
        means,
    }
}

/// BIC sweep with the reference EM; ties toward smaller k.
pub fn oracle_best_k(data: &[Vec<f64>], k_max: usize) -> usize {
    let mut best_k = 1;
    let mut best_bic = f64::INFINITY;
    for k in 1..=k_max.min(data.len()) {
        let fit = oracle_fit_gmm(data, k, 60);
        if fit.bic < best_bic {
            best_bic = fit.bic;
            best_k = k;
        }
    }
    best_k
}
