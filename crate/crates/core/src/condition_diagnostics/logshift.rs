use serde::{Deserialize, Serialize};

use crate::error::{GrsdError, Result};
use crate::spectral_core::{assign_log_bins, DenseMatrix, LogBinGrid, SymmetricEigenSystem};

/// Window bins with fewer modes than this raise the low-population warning.
pub const LOW_POPULATION: usize = 2;

const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyBinPolicy {
    /// Borrow the modes of the nearest populated window bin (lower on ties).
    Merge,
    /// Leave the row and column of an empty bin at zero.
    Zero,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingOptions {
    /// Minimum `|s_v − s_u|` for pairs entering the Ω statistics; defaults to `h`.
    pub gap: Option<f64>,
    /// Eigenvalue floor; defaults to `1e-12 · λ_max`.
    pub floor: Option<f64>,
    /// Use `X_uv / √(λ_u λ_v)` in place of `X_uv`.
    pub renormalize: bool,
    pub empty_bins: EmptyBinPolicy,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            gap: None,
            floor: None,
            renormalize: false,
            empty_bins: EmptyBinPolicy::Merge,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OmegaStats {
    pub gap: f64,
    pub pairs: usize,
    /// Mean of `Ω_{v→u}² = (X_uv / (λ_v − λ_u))²`.
    pub mean_square: f64,
    pub max_abs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogShiftReport {
    pub grid: LogBinGrid,
    /// Populations of the window bins before merging.
    pub populations: Vec<usize>,
    /// `(window bin, bin whose modes it borrowed)`.
    pub merged: Vec<(usize, usize)>,
    /// Window bins left at zero.
    pub zeroed: Vec<usize>,
    /// Couplings over window bins, indexed from the window start.
    pub k_hat: DenseMatrix,
    /// `K_h(d h)` at `kernel[d + w − 1]` for offsets `d = −(w−1)..=(w−1)`.
    pub kernel: Vec<f64>,
    pub stationarity_error: f64,
    pub omega: Option<OmegaStats>,
    pub low_population: bool,
}

impl LogShiftReport {
    pub fn window_len(&self) -> usize {
        self.k_hat.rows()
    }

    pub fn kernel_at(&self, offset: isize) -> Option<f64> {
        let w = self.window_len() as isize;
        (offset.abs() < w).then(|| self.kernel[(offset + w - 1) as usize])
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.grid.same_layout(&other.grid)
    }

    /// Report for `K̂` supplied directly on a grid's window.
    pub fn from_k_hat(grid: LogBinGrid, k_hat: DenseMatrix) -> Result<Self> {
        let w = grid.window_len();
        if k_hat.shape() != (w, w) {
            return Err(GrsdError::DimensionMismatch(format!(
                "coupling matrix {:?} against window of {w} bins",
                k_hat.shape()
            )));
        }
        let (kernel, err) = stationarity_error(&k_hat);
        Ok(Self {
            grid,
            populations: vec![0; w],
            merged: Vec::new(),
            zeroed: Vec::new(),
            k_hat,
            kernel,
            stationarity_error: err,
            omega: None,
            low_population: false,
        })
    }
}

/// Anti-diagonal means of a square matrix and the relative Frobenius distance
/// to the Toeplitz matrix they define.
pub fn stationarity_error(k_hat: &DenseMatrix) -> (Vec<f64>, f64) {
    let w = k_hat.rows();
    if w == 0 {
        return (Vec::new(), 0.0);
    }
    let mut sum = vec![0.0; 2 * w - 1];
    let mut count = vec![0usize; 2 * w - 1];
    for i in 0..w {
        for j in 0..w {
            let d = j + w - 1 - i;
            sum[d] += k_hat[(i, j)];
            count[d] += 1;
        }
    }
    let kernel: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let norm = k_hat.frobenius_norm();
    if norm == 0.0 {
        return (kernel, 0.0);
    }
    let mut diff = 0.0;
    for i in 0..w {
        for j in 0..w {
            let r = k_hat[(i, j)] - kernel[j + w - 1 - i];
            diff += r * r;
        }
    }
    (kernel, diff.sqrt() / norm)
}

fn check_symmetric(a: &DenseMatrix, n: usize) -> Result<()> {
    if a.shape() != (n, n) {
        return Err(GrsdError::DimensionMismatch(format!(
            "operator {:?} against {n} modes",
            a.shape()
        )));
    }
    let scale = a.max_abs();
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(GrsdError::AsymmetryExceedsTol {
            asymmetry: asym,
            tol: SYMMETRY_TOL,
        });
    }
    Ok(())
}

struct WindowModes {
    modes: Vec<usize>,
    /// Positions into `modes` for each window bin after the empty-bin policy.
    members: Vec<Vec<usize>>,
    populations: Vec<usize>,
    merged: Vec<(usize, usize)>,
    zeroed: Vec<usize>,
}

fn window_modes(eig: &SymmetricEigenSystem, grid: &LogBinGrid, opts: &CouplingOptions) -> Result<WindowModes> {
    let assignment = assign_log_bins(eig, grid, opts.floor)?;
    let window: Vec<usize> = grid.window().collect();
    let mut modes = Vec::new();
    let mut own: Vec<Vec<usize>> = Vec::with_capacity(window.len());
    for &b in &window {
        let m = assignment.members(b);
        own.push((modes.len()..modes.len() + m.len()).collect());
        modes.extend(m);
    }
    let populations: Vec<usize> = own.iter().map(Vec::len).collect();
    let populated: Vec<usize> = (0..window.len()).filter(|&i| populations[i] > 0).collect();
    let mut merged = Vec::new();
    let mut zeroed = Vec::new();
    let mut members = own.clone();
    for i in 0..window.len() {
        if populations[i] > 0 {
            continue;
        }
        match opts.empty_bins {
            EmptyBinPolicy::Zero => zeroed.push(window[i]),
            EmptyBinPolicy::Merge => {
                if populated.len() < 2 && window.len() >= 2 {
                    return Err(GrsdError::EmptyBinPair(format!(
                        "window bins {}..={} hold {} populated bin(s)",
                        window[0],
                        window[window.len() - 1],
                        populated.len()
                    )));
                }
                let src = *populated
                    .iter()
                    .min_by_key(|&&j| (j as isize - i as isize).unsigned_abs())
                    .expect("some window bin is populated");
                members[i] = own[src].clone();
                merged.push((window[i], window[src]));
            }
        }
    }
    Ok(WindowModes {
        modes,
        members,
        populations,
        merged,
        zeroed,
    })
}

fn bin_means(members: &[Vec<usize>], entry: impl Fn(usize, usize) -> f64) -> DenseMatrix {
    let w = members.len();
    DenseMatrix::from_fn(w, w, |i, j| {
        let (a, b) = (&members[i], &members[j]);
        if a.is_empty() || b.is_empty() {
            return 0.0;
        }
        let mut s = 0.0;
        for &u in a {
            for &v in b {
                s += entry(u, v);
            }
        }
        s / (a.len() * b.len()) as f64
    })
}

fn projected(
    eig: &SymmetricEigenSystem,
    a: &DenseMatrix,
    wm: &WindowModes,
    renormalize: bool,
) -> Result<DenseMatrix> {
    check_symmetric(a, eig.len())?;
    let mut x = eig.project_operator(a, &wm.modes)?;
    if renormalize {
        let lam: Vec<f64> = wm.modes.iter().map(|&u| eig.eigenvalues()[u]).collect();
        let n = lam.len();
        for u in 0..n {
            for v in 0..n {
                x[(u, v)] /= (lam[u] * lam[v]).sqrt();
            }
        }
    }
    Ok(x)
}

fn finish(
    grid: &LogBinGrid,
    wm: WindowModes,
    k_hat: DenseMatrix,
    omega: Option<OmegaStats>,
) -> LogShiftReport {
    let (kernel, err) = stationarity_error(&k_hat);
    let low_population = wm.populations.iter().any(|&p| p < LOW_POPULATION);
    LogShiftReport {
        grid: grid.clone(),
        populations: wm.populations,
        merged: wm.merged,
        zeroed: wm.zeroed,
        k_hat,
        kernel,
        stationarity_error: err,
        omega,
        low_population,
    }
}

/// `K̂_ij = mean_{u∈I_i, v∈I_j} X_uv²` with `X = ΦᵀAΦ` over the window bins.
pub fn log_bin_couplings(
    eig: &SymmetricEigenSystem,
    a: &DenseMatrix,
    grid: &LogBinGrid,
    opts: &CouplingOptions,
) -> Result<LogShiftReport> {
    let wm = window_modes(eig, grid, opts)?;
    let x = projected(eig, a, &wm, opts.renormalize)?;
    let k_hat = bin_means(&wm.members, |u, v| x[(u, v)] * x[(u, v)]);

    let gap = opts.gap.unwrap_or(grid.h());
    if gap < 0.0 {
        return Err(GrsdError::invalid("gap", "must be non-negative"));
    }
    let raw = if opts.renormalize {
        projected(eig, a, &wm, false)?
    } else {
        x
    };
    let lam: Vec<f64> = wm.modes.iter().map(|&u| eig.eigenvalues()[u]).collect();
    let (mut pairs, mut sq, mut mx) = (0usize, 0.0, 0.0f64);
    for u in 0..lam.len() {
        for v in 0..lam.len() {
            if u == v || (lam[v].ln() - lam[u].ln()).abs() < gap || lam[v] == lam[u] {
                continue;
            }
            let om = raw[(u, v)] / (lam[v] - lam[u]);
            pairs += 1;
            sq += om * om;
            mx = mx.max(om.abs());
        }
    }
    let omega = OmegaStats {
        gap,
        pairs,
        mean_square: if pairs > 0 { sq / pairs as f64 } else { 0.0 },
        max_abs: mx,
    };
    Ok(finish(grid, wm, k_hat, Some(omega)))
}

/// `K̂_ij = mean_{u∈I_i, v∈I_j} X_uv^{op} X_uv^{probe}`.
///
/// Linear in `op`, so it adds exactly over operators sharing the eigenbasis.
pub fn log_bin_cross_couplings(
    eig: &SymmetricEigenSystem,
    op: &DenseMatrix,
    probe: &DenseMatrix,
    grid: &LogBinGrid,
    opts: &CouplingOptions,
) -> Result<LogShiftReport> {
    let wm = window_modes(eig, grid, opts)?;
    let x = projected(eig, op, &wm, opts.renormalize)?;
    let y = projected(eig, probe, &wm, opts.renormalize)?;
    let k_hat = bin_means(&wm.members, |u, v| x[(u, v)] * y[(u, v)]);
    Ok(finish(grid, wm, k_hat, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(per_bin: usize, n_bins: usize) -> SymmetricEigenSystem {
        let mut l = Vec::new();
        for b in 0..n_bins {
            for k in 0..per_bin {
                l.push(((b as f64 + (k as f64 + 0.5) / per_bin as f64) * 0.5).exp());
            }
        }
        SymmetricEigenSystem::diagonal(l).unwrap()
    }

    #[test]
    fn identity_coupling_is_diagonal_and_stationary() {
        let eig = spectrum(3, 8);
        let grid = LogBinGrid::new(0.0, 0.5, 8).unwrap();
        let r = log_bin_couplings(&eig, &DenseMatrix::identity(24), &grid, &CouplingOptions::default()).unwrap();
        let w = r.window_len();
        for i in 0..w {
            for j in 0..w {
                let expect = if i == j { 1.0 / 3.0 } else { 0.0 };
                assert!((r.k_hat[(i, j)] - expect).abs() < 1e-15);
            }
        }
        assert!(r.stationarity_error < 1e-15);
        assert!(!r.low_population);
    }

    #[test]
    fn position_dependent_couplings_are_detected() {
        let grid = LogBinGrid::new(0.0, 0.5, 10).unwrap();
        let w = grid.window_len();
        let k = DenseMatrix::from_fn(w, w, |i, _| grid.s_center(i + 2));
        let r = LogShiftReport::from_k_hat(grid, k).unwrap();
        assert!(r.stationarity_error >= 0.1);
    }

    #[test]
    fn empty_bins_are_merged_or_zeroed() {
        let eig = SymmetricEigenSystem::diagonal(vec![0.3f64.exp(), 1.3f64.exp(), 2.3f64.exp()]).unwrap();
        let grid = LogBinGrid::new(0.0, 0.5, 5).unwrap().with_edge_margin(0).unwrap();
        let a = DenseMatrix::identity(3);
        let r = log_bin_couplings(&eig, &a, &grid, &CouplingOptions::default()).unwrap();
        assert_eq!(r.merged, vec![(1, 0), (3, 2)]);
        assert!(r.low_population);
        let z = log_bin_couplings(
            &eig,
            &a,
            &grid,
            &CouplingOptions {
                empty_bins: EmptyBinPolicy::Zero,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(z.zeroed, vec![1, 3]);
        assert_eq!(z.k_hat[(1, 1)], 0.0);
    }

    #[test]
    fn single_populated_bin_cannot_be_merged() {
        let eig = SymmetricEigenSystem::diagonal(vec![0.1f64.exp()]).unwrap();
        let grid = LogBinGrid::new(0.0, 0.5, 3).unwrap().with_edge_margin(0).unwrap();
        let r = log_bin_couplings(&eig, &DenseMatrix::identity(1), &grid, &CouplingOptions::default());
        assert!(matches!(r, Err(GrsdError::EmptyBinPair(_))));
    }

    #[test]
    fn omega_respects_gap() {
        let eig = spectrum(2, 8);
        let grid = LogBinGrid::new(0.0, 0.5, 8).unwrap();
        let a = DenseMatrix::from_fn(16, 16, |_, _| 1.0);
        let r = log_bin_couplings(&eig, &a, &grid, &CouplingOptions::default()).unwrap();
        let om = r.omega.unwrap();
        assert!(om.pairs > 0 && om.max_abs.is_finite());
    }
}
