use serde::{Deserialize, Serialize};

use crate::error::{GrsdError, Result};
use crate::learning_config::BlockJacobian;
use crate::spectral_core::operator_norm;

pub const DEFAULT_RHO_W: f64 = 0.5;

/// Weights `ρ_w^k` below this are dropped from `U`.
pub const WEIGHT_CUTOFF: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IncoherenceReport {
    pub rho_w: f64,
    pub times: Vec<f64>,
    /// `envelope[i][k] = max_{|l−m|=k} ‖J⁽ˡ⁾ᵀJ⁽ᵐ⁾‖` at sample `i`.
    pub envelope: Vec<Vec<f64>>,
    /// `U(t_i) = Σ_k ρ_w^k u_k(t_i)` over the retained distances.
    pub weighted: Vec<f64>,
    /// Largest distance entering `U`.
    pub max_distance: usize,
    /// Largest forward slope of `ln U`, floored at zero.
    pub c_rho: f64,
    /// `min_i e^{C_ρ (t_i − t_0)} U(t_0) − U(t_i)` with the estimated `C_ρ`.
    pub margin: f64,
}

impl IncoherenceReport {
    /// `ε̃_k = sup_t u_k(t)`.
    pub fn tail(&self) -> Vec<f64> {
        let n = self.envelope[0].len();
        (0..n)
            .map(|k| self.envelope.iter().map(|row| row[k]).fold(0.0, f64::max))
            .collect()
    }

    /// `Σ_{k≥1} ρ_w^k u_k(t_0) / u_0(t_0)`, zero when `u_0 = 0`.
    pub fn relative_off_diagonal(&self) -> f64 {
        let row = &self.envelope[0];
        if row[0] == 0.0 {
            return 0.0;
        }
        let mut w = 1.0;
        let mut s = 0.0;
        for &u in row.iter().skip(1) {
            w *= self.rho_w;
            s += w * u;
        }
        s / row[0]
    }
}

fn truncation_distance(rho_w: f64, depth: usize) -> usize {
    let k = (WEIGHT_CUTOFF.ln() / rho_w.ln()).ceil() as usize;
    k.min(depth.saturating_sub(1))
}

/// `u_k` for `k = 0..=k_max` at one sample.
pub fn envelope_at(j: &BlockJacobian, k_max: usize) -> Result<Vec<f64>> {
    let depth = j.depth();
    let mut u = vec![0.0; k_max + 1];
    for (k, slot) in u.iter_mut().enumerate() {
        for l in 0..depth.saturating_sub(k) {
            let v = operator_norm(&j.cross_gram(l, l + k))?;
            *slot = f64::max(*slot, v);
        }
    }
    Ok(u)
}

pub fn incoherence_envelope(samples: &[BlockJacobian], rho_w: f64) -> Result<IncoherenceReport> {
    if samples.len() < 2 {
        return Err(GrsdError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if !(rho_w > 0.0 && rho_w < 1.0) {
        return Err(GrsdError::invalid("rho_w", "must lie strictly inside (0, 1)"));
    }
    let depth = samples[0].depth();
    let k_max = truncation_distance(rho_w, depth);
    let mut envelope = Vec::with_capacity(samples.len());
    let mut weighted = Vec::with_capacity(samples.len());
    for s in samples {
        let u = envelope_at(s, k_max)?;
        let mut w = 1.0;
        let mut total = 0.0;
        for &x in &u {
            total += w * x;
            w *= rho_w;
        }
        if !total.is_finite() {
            return Err(GrsdError::DivergentWeightedSum);
        }
        envelope.push(u);
        weighted.push(total);
    }
    let times: Vec<f64> = samples.iter().map(BlockJacobian::time).collect();
    let mut c_rho: f64 = 0.0;
    for i in 0..times.len() - 1 {
        let (a, b) = (weighted[i], weighted[i + 1]);
        if a > 0.0 && b > 0.0 {
            c_rho = c_rho.max((b.ln() - a.ln()) / (times[i + 1] - times[i]));
        }
    }
    let margin = gronwall_margins(&times, &weighted, c_rho)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(IncoherenceReport {
        rho_w,
        times,
        envelope,
        weighted,
        max_distance: k_max,
        c_rho,
        margin,
    })
}

fn gronwall_margins(times: &[f64], u: &[f64], c_rho: f64) -> Vec<f64> {
    times
        .iter()
        .zip(u)
        .map(|(&t, &x)| (c_rho * (t - times[0])).exp() * u[0] - x)
        .collect()
}

/// `C_ρ = 2 C_A Σ_{j=−K}^{K} ρ_w^{−j}`.
pub fn theoretical_c_rho(c_a: f64, bandwidth: usize, rho_w: f64) -> f64 {
    let k = bandwidth as i32;
    2.0 * c_a * (-k..=k).map(|j| rho_w.powi(-j)).sum::<f64>()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GronwallCheck {
    pub c_rho: f64,
    /// `e^{C_ρ (t_i − t_0)} U(t_0) − U(t_i)` per sample.
    pub margins: Vec<f64>,
    pub min_margin: f64,
}

impl GronwallCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.min_margin >= -tol
    }
}

/// Compares `U(t)` against `e^{C_ρ t} U(0)` for a supplied growth constant.
pub fn gronwall_bound_check(report: &IncoherenceReport, c_rho: f64) -> GronwallCheck {
    let margins = gronwall_margins(&report.times, &report.weighted, c_rho);
    let min_margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    GronwallCheck {
        c_rho,
        margins,
        min_margin,
    }
}
