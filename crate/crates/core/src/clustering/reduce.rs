//! Dimensionality reduction ahead of mixture fitting.
//!
//! The reducer is a pluggable contract: deterministic for a fixed seed,
//! finite output, `n x d` in, `n x d'` out. The reference implementation is
//! exact PCA; a nonlinear neighbor-graph reducer can be slotted in behind the
//! same trait without touching the clustering pipeline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerMethod {
    #[default]
    Pca,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReducerConfig {
    pub method: ReducerMethod,
}

pub trait DimensionReducer: Send + Sync {
    fn reduce(&self, x: &DMatrix<f64>, target_dim: usize, seed: u64) -> Result<DMatrix<f64>>;
}

/// Default target dimensionality: `min(10, d, n - 2)`, clamped to at least 1.
pub fn default_target_dim(n: usize, d: usize) -> usize {
    10.min(d).min(n.saturating_sub(2)).max(1)
}

/// Reduce `x` to `target_dim` columns with the configured reducer.
///
/// `target_dim == d` short-circuits to the identity, whatever the method.
pub fn reduce_dimensions(
    x: &DMatrix<f64>,
    target_dim: usize,
    config: &ReducerConfig,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let (n, d) = (x.nrows(), x.ncols());
    if n == 0 {
        return Err(Error::InvalidArgument("reduce_dimensions: empty input".into()));
    }
    if target_dim == 0 || target_dim > d {
        return Err(Error::InvalidArgument(format!(
            "target dimension {target_dim} out of range 1..={d}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "reduce_dimensions: non-finite input".into(),
        ));
    }
    if target_dim == d {
        return Ok(x.clone());
    }
    let reduced = match config.method {
        ReducerMethod::Pca => PcaReducer.reduce(x, target_dim, seed)?,
    };
    if reduced.iter().any(|v| !v.is_finite()) {
        return Err(Error::Internal("reducer produced non-finite output".into()));
    }
    Ok(reduced)
}

/// Exact PCA projection onto the top principal components.
///
/// The eigenproblem is solved on whichever Gram matrix is smaller (`d x d`
/// covariance or `n x n` inner products), so wide embedding matrices stay
/// cheap. Component signs are canonicalized (largest-magnitude coordinate
/// positive) so output is reproducible across runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct PcaReducer;

impl DimensionReducer for PcaReducer {
    fn reduce(&self, x: &DMatrix<f64>, target_dim: usize, _seed: u64) -> Result<DMatrix<f64>> {
        let (n, d) = (x.nrows(), x.ncols());
        let mean = x.row_mean();
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }

        let components: Vec<DVector<f64>> = if d <= n {
            let cov = centered.transpose() * &centered / n as f64;
            top_eigenvectors(&cov, target_dim)
        } else {
            // Gram trick: eigenvectors u of (Xc Xc^T)/n map to components
            // Xc^T u, normalized.
            let gram = &centered * centered.transpose() / n as f64;
            top_eigenvectors(&gram, target_dim)
                .into_iter()
                .map(|u| {
                    let v = centered.transpose() * u;
                    let norm = v.norm();
                    if norm > 0.0 {
                        v / norm
                    } else {
                        v
                    }
                })
                .collect()
        };

        let mut out = DMatrix::zeros(n, target_dim);
        for (j, comp) in components.iter().enumerate() {
            let comp = canonical_sign(comp);
            let proj = &centered * &comp;
            out.set_column(j, &proj);
        }
        Ok(out)
    }
}

/// Eigenvectors of a symmetric PSD matrix, ordered by descending eigenvalue.
/// Missing directions (rank-deficient input) come back as whatever orthogonal
/// complement the decomposition produced; projections onto them are zero.
fn top_eigenvectors(sym: &DMatrix<f64>, count: usize) -> Vec<DVector<f64>> {
    let eigen = nalgebra::SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..eigen.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .total_cmp(&eigen.eigenvalues[a])
            .then(a.cmp(&b))
    });
    order
        .into_iter()
        .take(count)
        .map(|i| eigen.eigenvectors.column(i).into_owned())
        .collect()
}

fn canonical_sign(v: &DVector<f64>) -> DVector<f64> {
    let mut mass = 0.0;
    let mut lead = 0.0;
    for &value in v.iter() {
        if value.abs() > mass {
            mass = value.abs();
            lead = value;
        }
    }
    if lead < 0.0 {
        -v
    } else {
        v.clone()
    }
}
