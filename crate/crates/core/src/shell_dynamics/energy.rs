use serde::{Deserialize, Serialize};

use crate::error::{GrsdError, Result};
use crate::spectral_core::{LogBinGrid, SymmetricEigenSystem};

/// Per-bin energies of one error vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShellEnergies {
    pub energies: Vec<f64>,
    /// Energy in modes below the floor or outside the grid.
    pub excluded: f64,
}

impl ShellEnergies {
    pub fn total(&self) -> f64 {
        self.energies.iter().sum::<f64>() + self.excluded
    }
}

/// `E_α = Σ_{u: λ_u ∈ bin α} ⟨φ_u, e⟩²`; modes with `λ_u ≤ floor` (default
/// `1e-12 λ_max`) or outside the grid are counted in `excluded`.
pub fn shell_energies(
    eig: &SymmetricEigenSystem,
    error: &[f64],
    grid: &LogBinGrid,
    floor: Option<f64>,
) -> Result<ShellEnergies> {
    let coeffs = eig.coefficients(error)?;
    let floor = floor.unwrap_or_else(|| eig.default_floor());
    let mut energies = vec![0.0; grid.n_bins()];
    let mut excluded = 0.0;
    for (&l, c) in eig.eigenvalues().iter().zip(coeffs) {
        let e = c * c;
        match (l > floor).then(|| grid.bin_of_lambda(l)).flatten() {
            Some(b) => energies[b] += e,
            None => excluded += e,
        }
    }
    Ok(ShellEnergies { energies, excluded })
}

/// Shell energies `E_α(t_i)` on a fixed grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShellEnergySeries {
    grid: LogBinGrid,
    times: Vec<f64>,
    energies: Vec<Vec<f64>>,
}

impl ShellEnergySeries {
    pub fn new(grid: LogBinGrid, times: Vec<f64>, energies: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != energies.len() {
            return Err(GrsdError::DimensionMismatch(format!(
                "{} times with {} energy rows",
                times.len(),
                energies.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GrsdError::invalid("times", "must be strictly increasing"));
        }
        for row in &energies {
            if row.len() != grid.n_bins() {
                return Err(GrsdError::DimensionMismatch(format!(
                    "{} energies for {} bins",
                    row.len(),
                    grid.n_bins()
                )));
            }
            if row.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                return Err(GrsdError::invalid("energies", "must be finite and non-negative"));
            }
        }
        Ok(Self { grid, times, energies })
    }

    /// Shell energies of `errors[i]` at `times[i]` against one eigensystem.
    pub fn from_error_vectors(
        eig: &SymmetricEigenSystem,
        grid: LogBinGrid,
        times: Vec<f64>,
        errors: &[Vec<f64>],
        floor: Option<f64>,
    ) -> Result<Self> {
        let energies = errors
            .iter()
            .map(|e| shell_energies(eig, e, &grid, floor).map(|s| s.energies))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, times, energies)
    }

    pub fn grid(&self) -> &LogBinGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn energies(&self) -> &[Vec<f64>] {
        &self.energies
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `ε_α = E_α / (λ_{α+1} − λ_α)` at sample `i`.
    pub fn densities(&self, i: usize) -> Vec<f64> {
        self.energies[i]
            .iter()
            .enumerate()
            .map(|(a, e)| e / self.grid.lambda_width(a))
            .collect()
    }

    /// Largest relative change of total in-grid energy between adjacent samples.
    pub fn max_relative_jump(&self) -> f64 {
        let totals: Vec<f64> = self.energies.iter().map(|r| r.iter().sum()).collect();
        let scale = totals.iter().cloned().fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        totals.windows(2).fold(0.0, |m, w| m.max((w[1] - w[0]).abs() / scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::spectral_core::{symmetric_eigendecompose, DenseMatrix};

    #[test]
    fn eigenvector_puts_all_energy_in_its_bin() {
        let eig = SymmetricEigenSystem::diagonal(vec![0.5, 2.0, 8.0]).unwrap();
        let grid = LogBinGrid::covering(-1.0, 2.5, 1.0).unwrap();
        let s = shell_energies(&eig, &[0.0, 3.0, 0.0], &grid, None).unwrap();
        let b = grid.bin_of_lambda(2.0).unwrap();
        assert_eq!(s.energies[b], 9.0);
        assert_eq!(s.energies.iter().sum::<f64>(), 9.0);
    }

    #[test]
    fn zero_vector_has_zero_energy() {
        let eig = SymmetricEigenSystem::diagonal(vec![1.0, 2.0]).unwrap();
        let grid = LogBinGrid::covering(-1.0, 1.0, 0.5).unwrap();
        let s = shell_energies(&eig, &[0.0, 0.0], &grid, None).unwrap();
        assert!(s.energies.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn parseval_with_excluded_modes() {
        let mut rng = rng_from(8);
        let a = DenseMatrix::gaussian(12, 5, 1.0, &mut rng);
        let eig = symmetric_eigendecompose(&a.outer_gram(), 1e-12).unwrap();
        let grid = LogBinGrid::for_spectrum(&eig, 0.5, None).unwrap();
        let e: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let s = shell_energies(&eig, &e, &grid, None).unwrap();
        let norm2: f64 = e.iter().map(|x| x * x).sum();
        assert!((s.total() - norm2).abs() <= 1e-12 * norm2);
        assert!(s.excluded > 0.0);
    }
}
