use serde::{Deserialize, Serialize};

use crate::error::{GrsdError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthThreshold {
    pub epsilon: f64,
    pub eta: f64,
    pub c1: f64,
    pub c2: f64,
    /// `C_1 / (ε² η²)`.
    pub variance_branch: f64,
    /// `(C_2 / ε²) ln(1/η)`.
    pub mixing_branch: f64,
    /// Ceiling of the larger branch.
    pub l_min: u64,
}

/// `L_min = ⌈max(C_1/(ε²η²), (C_2/ε²) ln(1/η))⌉`.
///
/// A branch within `1e-9` (relative) of an integer counts as that integer.
pub fn depth_threshold(epsilon: f64, eta: f64, c1: f64, c2: f64) -> Result<DepthThreshold> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(GrsdError::InvalidTolerance {
            eta,
            reason: "must lie in (0, 1)".into(),
        });
    }
    for (name, v) in [("epsilon", epsilon), ("c1", c1), ("c2", c2)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(GrsdError::invalid(name, format!("{v} is not positive")));
        }
    }
    let e2 = epsilon * epsilon;
    let variance_branch = c1 / (e2 * eta * eta);
    let mixing_branch = c2 / e2 * (1.0 / eta).ln();
    let top = variance_branch.max(mixing_branch);
    let nearest = top.round();
    let l = if (top - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        top.ceil()
    };
    Ok(DepthThreshold {
        epsilon,
        eta,
        c1,
        c2,
        variance_branch,
        mixing_branch,
        l_min: l as u64,
    })
}
