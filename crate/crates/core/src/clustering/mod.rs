//! Clustering for the summary tree: dimensionality reduction, Gaussian
//! mixtures fit by EM, BIC model selection, and membership assignment.

mod assign;
mod gmm;
mod reduce;
mod select;

pub use assign::{assign_clusters, AssignMode, ClusterAssignment, Membership};
pub use gmm::{
    fit_gmm, parameter_count, responsibilities, CovarianceKind, FitReport, GmmConfig, GmmParams,
};
pub use reduce::{
    default_target_dim, reduce_dimensions, DimensionReducer, PcaReducer, ReducerConfig,
    ReducerMethod,
};
pub use select::{bic_score, select_num_clusters};

use serde::{Deserialize, Serialize};

/// Everything the tree builder needs to cluster one level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub reducer: ReducerConfig,
    /// Reduced dimensionality; `None` means `min(10, d, n - 2)`.
    pub target_dim: Option<usize>,
    pub gmm: GmmConfig,
    /// Global cap on the BIC sweep (further capped per level so each tree
    /// level at least halves).
    pub k_max: usize,
    pub assign: AssignMode,
    pub soft_threshold: f64,
    /// Safety cap on tree height; a forced root summary closes the tree if
    /// recursion is still running when it is reached.
    pub max_levels: usize,
    pub seed: u64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            reducer: ReducerConfig::default(),
            target_dim: None,
            gmm: GmmConfig::default(),
            k_max: 50,
            assign: AssignMode::Hard,
            soft_threshold: 0.1,
            max_levels: 8,
            seed: 0,
        }
    }
}

/// Mix a stream index into a base seed (splitmix64 finalizer). Restarts, the
/// k-sweep, and tree levels each get an independent deterministic stream.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
