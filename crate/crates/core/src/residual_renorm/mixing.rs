use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::EnsembleSpec;
use crate::error::{GrsdError, Result};
use crate::learning_config::ResidualStack;
use crate::spectral_core::norm2;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub eta: f64,
    /// `d(ℓ) = ‖E[u_ℓ u_ℓᵀ] − I/n‖_F` for `ℓ = 0..=last`.
    pub distances: Vec<f64>,
    /// First `ℓ` with `d(ℓ) ≤ η`.
    pub tau: Option<usize>,
    /// Slope of `−ln d(ℓ)` over the computed layers.
    pub rate: Option<f64>,
    pub budget: usize,
}

impl MixingEstimate {
    pub fn tau_or_err(&self) -> Result<usize> {
        self.tau.ok_or(GrsdError::NotMixedWithinBudget {
            eta: self.eta,
            budget: self.budget,
        })
    }
}

fn second_moment_distance(dirs: &[Vec<f64>]) -> f64 {
    let n = dirs[0].len();
    let mut m = vec![0.0; n * n];
    for u in dirs {
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] += u[i] * u[j];
            }
        }
    }
    let inv = 1.0 / dirs.len() as f64;
    let target = 1.0 / n as f64;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = m[i * n + j] * inv - if i == j { target } else { 0.0 };
            s += d * d;
        }
    }
    s.sqrt()
}

/// Evolves the ensemble layer by layer until `d(ℓ) ≤ η` or `budget` layers.
///
/// A chain that never mixes is reported through `tau = None`.
pub fn mixing_time(spec: &EnsembleSpec, eta: f64, budget: usize) -> Result<MixingEstimate> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(GrsdError::InvalidTolerance {
            eta,
            reason: "must lie in (0, 1)".into(),
        });
    }
    let distances = evolve(spec, budget, Some(eta))?;
    let tau = distances.iter().position(|&d| d <= eta);
    let rate = decay_rate(&distances);
    Ok(MixingEstimate {
        eta,
        distances,
        tau,
        rate,
        budget,
    })
}

/// `d(ℓ)` for every `ℓ = 0..=depth`, without stopping early.
pub fn mixing_distances(spec: &EnsembleSpec, depth: usize) -> Result<Vec<f64>> {
    evolve(spec, depth, None)
}

fn evolve(spec: &EnsembleSpec, budget: usize, stop: Option<f64>) -> Result<Vec<f64>> {
    let reached = |d: f64| stop.is_some_and(|eta| d <= eta);
    if spec.members == 0 {
        return Err(GrsdError::invalid("members", "ensemble is empty"));
    }
    let n = spec.width;
    let stacks: Vec<ResidualStack> = (0..spec.members)
        .map(|m| spec.member_stack(m, budget))
        .collect::<Result<_>>()?;
    let mut dirs: Vec<Vec<f64>> = (0..spec.members).map(|m| spec.member_start(m)).collect();
    let mut distances = vec![second_moment_distance(&dirs)];
    let mut ell = 0;
    while !reached(distances[ell]) && ell < budget {
        ell += 1;
        dirs.par_iter_mut().zip(stacks.par_iter()).try_for_each_init(
            || (vec![0.0; n * n], vec![0.0; n]),
            |(g, v), (u, stack)| -> Result<()> {
                stack.fill_branch(ell, g);
                let eps = stack.epsilon();
                for r in 0..n {
                    let acc: f64 = g[r * n..(r + 1) * n].iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                    v[r] = u[r] + eps * acc;
                }
                let norm = norm2(v);
                if !(norm > super::chain::COLLAPSE_FLOOR) {
                    return Err(GrsdError::ZeroVectorEncountered { layer: ell });
                }
                for (x, y) in u.iter_mut().zip(v.iter()) {
                    *x = y / norm;
                }
                Ok(())
            },
        )?;
        distances.push(second_moment_distance(&dirs));
    }
    Ok(distances)
}

fn decay_rate(d: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = d
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(l, &x)| (l as f64, x.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}
