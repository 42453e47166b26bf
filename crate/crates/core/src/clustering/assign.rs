//! Cluster membership from fitted mixture posteriors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::gmm::{responsibilities, GmmParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignMode {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub cluster: usize,
    pub responsibility: f64,
}

/// Per-point cluster memberships. Hard mode: exactly one membership per
/// point (the posterior argmax, ties toward the lower index). Soft mode:
/// every cluster whose posterior clears the threshold, argmax always
/// included, ordered by cluster index.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub mode: AssignMode,
    pub memberships: Vec<Vec<Membership>>,
}

pub fn assign_clusters(
    params: &GmmParams,
    x: &DMatrix<f64>,
    mode: AssignMode,
    threshold: f64,
) -> Result<ClusterAssignment> {
    if mode == AssignMode::Soft && !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "soft threshold must be in (0, 1], got {threshold}"
        )));
    }
    let (resp, _) = responsibilities(params, x)?;
    let k = params.k();
    let memberships = (0..x.nrows())
        .map(|i| {
            let mut argmax = 0usize;
            for j in 1..k {
                if resp[(i, j)] > resp[(i, argmax)] {
                    argmax = j;
                }
            }
            match mode {
                AssignMode::Hard => vec![Membership {
                    cluster: argmax,
                    responsibility: resp[(i, argmax)],
                }],
                AssignMode::Soft => {
                    let mut members: Vec<Membership> = (0..k)
                        .filter(|&j| j == argmax || resp[(i, j)] >= threshold)
                        .map(|j| Membership {
                            cluster: j,
                            responsibility: resp[(i, j)],
                        })
                        .collect();
                    members.sort_by_key(|m| m.cluster);
                    members
                }
            }
        })
        .collect();
    Ok(ClusterAssignment { mode, memberships })
}
