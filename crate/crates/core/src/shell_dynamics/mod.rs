//! Shell energies, boundary-flux inversion, spectral velocities and their
//! power-law and log-shift analyses.

mod energy;
mod fit;
mod flux;
pub mod manufactured;
mod rigidity;

use std::io::Write;

pub use energy::{shell_energies, ShellEnergies, ShellEnergySeries};
pub use fit::{fit_by_sign_region, fit_power_law, fit_velocity_field, PowerLawFit};
pub use flux::{
    invert_boundary_fluxes, time_derivative, velocity_field, Dissipation, ShellFluxSeries,
    VelocityField, DENSITY_FLOOR,
};
pub use rigidity::{log_shift_rigidity_test, ExponentMode, RigidityScore, SampledField};

use crate::error::Result;
use crate::spectral_core::fmt_f64;

/// One row per `(t, α)`: columns
/// `t,bin,s_center,lambda_center,energy,density,d_energy,flux_lower,dissipation,velocity`.
/// Floored velocities are written as `NaN`.
pub fn write_shell_csv<W: Write>(
    series: &ShellEnergySeries,
    flux: &ShellFluxSeries,
    velocity: &VelocityField,
    mut w: W,
) -> Result<()> {
    writeln!(
        w,
        "t,bin,s_center,lambda_center,energy,density,d_energy,flux_lower,dissipation,velocity"
    )?;
    let g = series.grid();
    for i in 0..series.len() {
        let dens = series.densities(i);
        for a in 0..g.n_bins() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(series.times()[i]),
                a,
                fmt_f64(g.s_center(a)),
                fmt_f64(g.lambda_center(a)),
                fmt_f64(series.energies()[i][a]),
                fmt_f64(dens[a]),
                fmt_f64(flux.d_energy[i][a]),
                fmt_f64(flux.boundary_flux[i][a]),
                fmt_f64(flux.dissipation[i][a]),
                fmt_f64(velocity.velocity[i][a].unwrap_or(f64::NAN)),
            )?;
        }
    }
    Ok(())
}
