use serde::{Deserialize, Serialize};

use super::energy::ShellEnergySeries;
use crate::error::{GrsdError, Result};
use crate::spectral_core::LogBinGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum Dissipation {
    Zero,
    /// `D_α = γ E_α`.
    Linear { gamma: f64 },
}

impl Dissipation {
    fn of(&self, energy: f64) -> f64 {
        match self {
            Dissipation::Zero => 0.0,
            Dissipation::Linear { gamma } => gamma * energy,
        }
    }
}

/// Boundary fluxes reconstructed from shell energies.
///
/// `boundary_flux[i][α]` is `F_{α−½}` at sample `i` for `α = 0..=n_bins`; the
/// entry at `n_bins` is the top boundary, fixed at zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShellFluxSeries {
    pub times: Vec<f64>,
    pub d_energy: Vec<Vec<f64>>,
    pub dissipation: Vec<Vec<f64>>,
    pub boundary_flux: Vec<Vec<f64>>,
    pub model: Dissipation,
}

impl ShellFluxSeries {
    /// `max_{i,α} |dE_α/dt − (F_{α−½} − F_{α+½} − D_α)|`.
    pub fn balance_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.times.len() {
            let f = &self.boundary_flux[i];
            for a in 0..self.d_energy[i].len() {
                let r = self.d_energy[i][a] - (f[a] - f[a + 1] - self.dissipation[i][a]);
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    pub fn max_abs_rate(&self) -> f64 {
        self.d_energy
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Derivative weights of the quadratic through `nodes` evaluated at `x`.
fn lagrange_derivative_weights(nodes: [f64; 3], x: f64) -> [f64; 3] {
    let mut w = [0.0; 3];
    for j in 0..3 {
        let denom: f64 = (0..3).filter(|&m| m != j).map(|m| nodes[j] - nodes[m]).product();
        let mut num = 0.0;
        for k in (0..3).filter(|&k| k != j) {
            num += (0..3)
                .filter(|&m| m != j && m != k)
                .map(|m| x - nodes[m])
                .product::<f64>();
        }
        w[j] = num / denom;
    }
    w
}

/// `dE/dt` by three-point differences: central in the interior, one-sided
/// second order at the ends.
pub fn time_derivative(times: &[f64], values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = times.len();
    if n < 3 {
        return Err(GrsdError::TooFewSamples { needed: 3, got: n });
    }
    let width = values[0].len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let base = i.saturating_sub(1).min(n - 3);
        let nodes = [times[base], times[base + 1], times[base + 2]];
        let w = lagrange_derivative_weights(nodes, times[i]);
        out.push(
            (0..width)
                .map(|a| w[0] * values[base][a] + w[1] * values[base + 1][a] + w[2] * values[base + 2][a])
                .collect(),
        );
    }
    Ok(out)
}

/// Inverts `dE_α/dt = F_{α−½} − F_{α+½} − D_α` from the top bin down,
/// with zero flux through the top boundary.
pub fn invert_boundary_fluxes(series: &ShellEnergySeries, dissipation: Dissipation) -> Result<ShellFluxSeries> {
    let d_energy = time_derivative(series.times(), series.energies())?;
    let n_bins = series.grid().n_bins();
    let mut diss = Vec::with_capacity(series.len());
    let mut flux = Vec::with_capacity(series.len());
    for (i, rates) in d_energy.iter().enumerate() {
        let d: Vec<f64> = series.energies()[i].iter().map(|&e| dissipation.of(e)).collect();
        let mut f = vec![0.0; n_bins + 1];
        for a in (0..n_bins).rev() {
            f[a] = f[a + 1] + rates[a] + d[a];
        }
        diss.push(d);
        flux.push(f);
    }
    Ok(ShellFluxSeries {
        times: series.times().to_vec(),
        d_energy,
        dissipation: diss,
        boundary_flux: flux,
        model: dissipation,
    })
}

/// `v = J/ε` at bin centers; `None` where `ε` is below the floor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VelocityField {
    pub grid: LogBinGrid,
    pub times: Vec<f64>,
    pub velocity: Vec<Vec<Option<f64>>>,
    pub density_floor: Vec<f64>,
}

/// Relative floor on bin density below which no velocity is reported.
pub const DENSITY_FLOOR: f64 = 1e-10;

impl VelocityField {
    /// In-window `(time index, λ_center, v)` triples.
    pub fn window_samples(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.velocity.iter().enumerate() {
            for a in self.grid.window() {
                if let Some(v) = row[a] {
                    out.push((i, self.grid.lambda_center(a), v));
                }
            }
        }
        out
    }
}

/// Flux at each bin center (mean of its two boundary fluxes) divided by the
/// bin density `E_α/Δλ_α`.
pub fn velocity_field(flux: &ShellFluxSeries, series: &ShellEnergySeries) -> Result<VelocityField> {
    if flux.times.len() != series.len() {
        return Err(GrsdError::DimensionMismatch("flux and energy series lengths differ".into()));
    }
    let grid = series.grid().clone();
    let mut velocity = Vec::with_capacity(series.len());
    let mut floors = Vec::with_capacity(series.len());
    let mut any = false;
    for i in 0..series.len() {
        let dens = series.densities(i);
        let floor = DENSITY_FLOOR * dens.iter().cloned().fold(0.0, f64::max);
        let f = &flux.boundary_flux[i];
        let row: Vec<Option<f64>> = (0..grid.n_bins())
            .map(|a| {
                (dens[a] > floor && dens[a] > 0.0).then(|| 0.5 * (f[a] + f[a + 1]) / dens[a])
            })
            .collect();
        any |= row.iter().any(Option::is_some);
        velocity.push(row);
        floors.push(floor);
    }
    if !any {
        return Err(GrsdError::AllBinsBelowFloor);
    }
    Ok(VelocityField {
        grid,
        times: series.times().to_vec(),
        velocity,
        density_floor: floors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_weights_are_exact_for_quadratics() {
        let t = [0.0, 0.3, 1.0, 1.2];
        let vals: Vec<Vec<f64>> = t.iter().map(|&x| vec![2.0 * x * x - x + 1.0]).collect();
        let d = time_derivative(&t, &vals).unwrap();
        for (i, &x) in t.iter().enumerate() {
            assert!((d[i][0] - (4.0 * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_energies_give_zero_flux() {
        let grid = LogBinGrid::new(0.0, 1.0, 4).unwrap();
        let series = ShellEnergySeries::new(grid, vec![0.0, 1.0, 2.0], vec![vec![1.0, 2.0, 3.0, 4.0]; 3]).unwrap();
        let f = invert_boundary_fluxes(&series, Dissipation::Zero).unwrap();
        assert!(f.boundary_flux.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn too_few_samples() {
        let grid = LogBinGrid::new(0.0, 1.0, 2).unwrap();
        let series = ShellEnergySeries::new(grid, vec![0.0, 1.0], vec![vec![1.0, 1.0]; 2]).unwrap();
        assert!(matches!(
            invert_boundary_fluxes(&series, Dissipation::Zero),
            Err(GrsdError::TooFewSamples { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn pure_decay_has_zero_flux_under_linear_dissipation() {
        let grid = LogBinGrid::new(0.0, 1.0, 3).unwrap();
        let gamma = 0.7;
        let times: Vec<f64> = (0..5).map(|i| i as f64 * 1e-4).collect();
        let e: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| [1.0, 2.0, 0.5].iter().map(|e0| e0 * (-gamma * t).exp()).collect())
            .collect();
        let series = ShellEnergySeries::new(grid, times, e).unwrap();
        let f = invert_boundary_fluxes(&series, Dissipation::Linear { gamma }).unwrap();
        assert!(f.boundary_flux.iter().flatten().all(|x| x.abs() < 1e-8));
    }
}
