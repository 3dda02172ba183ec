use serde::{Deserialize, Serialize};
use libm::erfc;

use super::chain::EnsembleSums;
use crate::error::{GrsdError, Result};

/// Ensembles smaller than this are rejected.
pub const MIN_ENSEMBLE: usize = 1000;

const VARIANCE_FLOOR: f64 = 1e-300;

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Exact Kolmogorov–Smirnov distance between the empirical law of `z` and `N(0, 1)`.
pub fn ks_against_normal(z: &[f64]) -> f64 {
    let mut z = z.to_vec();
    z.sort_by(|a, b| a.total_cmp(b));
    let n = z.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in z.iter().enumerate() {
        let f = standard_normal_cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    d
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KsResult {
    pub depth: usize,
    pub ks: f64,
    pub mu: f64,
    pub sigma: f64,
    pub members: usize,
}

/// `sup_x |P(S_L / (σ√L) ≤ x) − Φ(x)|` over the ensemble with
/// `S_L = Σ(δ_ℓ − μ)`.
pub fn berry_esseen_distance(sums: &[f64], depth: usize, mu: f64, sigma2: f64) -> Result<KsResult> {
    if sums.len() < MIN_ENSEMBLE {
        return Err(GrsdError::InsufficientSamples {
            needed: MIN_ENSEMBLE,
            got: sums.len(),
        });
    }
    if depth == 0 {
        return Err(GrsdError::invalid("depth", "must be positive"));
    }
    if !(sigma2 > VARIANCE_FLOOR * mu.abs().max(1.0)) || !sigma2.is_finite() {
        return Err(GrsdError::DegenerateVariance(sigma2));
    }
    let sigma = sigma2.sqrt();
    let scale = sigma * (depth as f64).sqrt();
    let offset = mu * depth as f64;
    let z: Vec<f64> = sums.iter().map(|s| (s - offset) / scale).collect();
    Ok(KsResult {
        depth,
        ks: ks_against_normal(&z),
        mu,
        sigma,
        members: sums.len(),
    })
}

/// Distance at every checkpoint, using the pooled increment moments.
pub fn berry_esseen_sweep(ens: &EnsembleSums) -> Result<Vec<KsResult>> {
    ens.checkpoints
        .iter()
        .enumerate()
        .map(|(c, &l)| berry_esseen_distance(&ens.sums[c], l, ens.increment_mean[c], ens.increment_variance[c]))
        .collect()
}

/// Least-squares slope of `ln KS` against `ln L`.
pub fn log_log_slope(results: &[KsResult]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = results
        .iter()
        .filter(|r| r.ks > 0.0)
        .map(|r| ((r.depth as f64).ln(), r.ks.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((standard_normal_cdf(0.0) - 0.5).abs() < 1e-16);
        let v = standard_normal_cdf(1.0);
        assert!((v - 0.841_344_746_068_542_9).abs() < 1e-15, "{v:.17}");
    }

    #[test]
    fn two_point_law_against_normal() {
        let sums: Vec<f64> = (0..2000).map(|i| if i % 2 == 0 { 0.3 } else { -0.3 }).collect();
        let r = berry_esseen_distance(&sums, 1, 0.0, 0.09).unwrap();
        assert!((r.ks - (standard_normal_cdf(1.0) - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn small_or_degenerate_ensembles_are_rejected() {
        assert!(berry_esseen_distance(&[0.0; 10], 1, 0.0, 1.0).is_err());
        assert!(matches!(
            berry_esseen_distance(&[0.0; 1000], 1, 0.0, 0.0),
            Err(GrsdError::DegenerateVariance(_))
        ));
    }
}
