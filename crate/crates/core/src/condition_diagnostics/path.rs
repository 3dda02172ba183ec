use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::learning_config::BlockTrajectory;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathNorms {
    pub sup_jacobian: f64,
    pub sup_rate: f64,
    /// `sup ‖J‖ + sup ‖J̇‖`.
    pub c_j: f64,
    /// Per-sample `(t, ‖J‖, ‖J̇‖)`; the rate is `None` where unavailable.
    pub samples: Vec<(f64, f64, Option<f64>)>,
    /// Time at which the source trajectory stopped on its divergence guard.
    pub diverged_at: Option<f64>,
}

/// Suprema of `‖J(t)‖` and `‖J̇(t)‖` over the samples of a trajectory.
///
/// Missing rates are filled by central differences where neighbours exist.
pub fn controlled_path_norms(traj: &BlockTrajectory) -> Result<PathNorms> {
    let filled = traj.clone().with_central_difference_rates()?;
    let mut samples = Vec::with_capacity(filled.samples().len());
    let (mut sj, mut sr): (f64, f64) = (0.0, 0.0);
    for (j, r) in filled.samples().iter().zip(filled.rates()) {
        let nj = j.operator_norm()?;
        let nr = match r {
            Some(r) => Some(r.operator_norm()?),
            None => None,
        };
        sj = sj.max(nj);
        if let Some(x) = nr {
            sr = sr.max(x);
        }
        samples.push((j.time(), nj, nr));
    }
    Ok(PathNorms {
        sup_jacobian: sj,
        sup_rate: sr,
        c_j: sj + sr,
        samples,
        diverged_at: traj.divergence(),
    })
}
