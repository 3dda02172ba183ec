//! Exact transport solutions `∂_t ε + ∂_λ(v ε) = 0` with `v = c λ^a`.

use serde::{Deserialize, Serialize};

use super::energy::ShellEnergySeries;
use crate::error::{GrsdError, Result};
use crate::spectral_core::{LogBinGrid, SymmetricEigenSystem};

/// Gaussian pulse in `s = ln λ` advected by `v = c λ^a`, discretized on
/// log-uniform modes `λ_u` with the standard basis as eigenvectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerLawTransport {
    pub c: f64,
    pub a: f64,
    pub center: f64,
    pub width: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub n_modes: usize,
}

impl PowerLawTransport {
    pub fn new(c: f64, a: f64) -> Self {
        Self {
            c,
            a,
            center: 0.0,
            width: 1.0,
            s_lo: -6.0,
            s_hi: 6.0,
            n_modes: 1200,
        }
    }

    fn ds(&self) -> f64 {
        (self.s_hi - self.s_lo) / self.n_modes as f64
    }

    pub fn mode_s(&self) -> Vec<f64> {
        let ds = self.ds();
        (0..self.n_modes).map(|u| self.s_lo + (u as f64 + 0.5) * ds).collect()
    }

    /// Mass per unit `s`, `q = ελ`, traced back along characteristics
    /// `ds/dt = c e^{(a−1)s}`.
    pub fn q(&self, s: f64, t: f64) -> f64 {
        let p = |s0: f64| (-(s0 - self.center).powi(2) / (2.0 * self.width * self.width)).exp();
        let b = self.a - 1.0;
        if b.abs() < 1e-14 {
            return p(s - self.c * t);
        }
        let arg = (-b * s).exp() + b * self.c * t;
        if !(arg > 0.0) {
            return 0.0;
        }
        let s0 = -arg.ln() / b;
        p(s0) * (-b * s).exp() / arg
    }

    pub fn velocity(&self, lambda: f64) -> f64 {
        self.c * lambda.powf(self.a)
    }

    pub fn eigensystem(&self) -> Result<SymmetricEigenSystem> {
        SymmetricEigenSystem::diagonal(self.mode_s().iter().map(|s| s.exp()).collect())
    }

    /// Error vector with `⟨φ_u, e⟩² = q(s_u, t) Δs`.
    pub fn error_vector(&self, t: f64) -> Vec<f64> {
        let ds = self.ds();
        self.mode_s().iter().map(|&s| (self.q(s, t) * ds).sqrt()).collect()
    }

    /// Shell energies at `times` on `grid`.
    pub fn series(&self, grid: LogBinGrid, times: &[f64]) -> Result<ShellEnergySeries> {
        if self.n_modes == 0 || !(self.s_hi > self.s_lo) {
            return Err(GrsdError::invalid("transport", "empty mode range"));
        }
        let eig = self.eigensystem()?;
        let errors: Vec<Vec<f64>> = times.iter().map(|&t| self.error_vector(t)).collect();
        ShellEnergySeries::from_error_vectors(&eig, grid, times.to_vec(), &errors, Some(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_is_conserved_along_characteristics() {
        // For a > 1 characteristics reach λ = ∞ in finite time; keep t short of that.
        for a in [-0.5, 0.7, 1.0, 2.0] {
            let tr = PowerLawTransport::new(0.5, a);
            let mass = |t: f64| -> f64 {
                let n = 20000;
                let ds = 20.0 / n as f64;
                (0..n).map(|i| tr.q(-10.0 + (i as f64 + 0.5) * ds, t) * ds).sum()
            };
            let m0 = mass(0.0);
            assert!((mass(1e-3) - m0).abs() < 1e-6 * m0, "a = {a}");
        }
    }
}
