use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::condition_diagnostics::{
    log_bin_couplings, log_bin_cross_couplings, stationarity_error, CouplingOptions, EmptyBinPolicy, LogShiftReport,
};
use crate::error::{GrsdError, Result};
use crate::learning_config::ResidualStack;
use crate::spectral_core::{symmetric_eigendecompose, DenseMatrix, LogBinGrid, SymmetricEigenSystem};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DilutionReport {
    pub depth: usize,
    pub ell_star: usize,
    /// `(1/L) Σ_ℓ K̂⁽ˡ⁾`.
    pub combined: DenseMatrix,
    pub combined_err: f64,
    /// Stationarity error of `(1/L) Σ_{ℓ>ℓ*} K̂⁽ˡ⁾`.
    pub bulk_err: f64,
    /// `max |(1/L) Σ_{ℓ≤ℓ*} K̂⁽ˡ⁾|`.
    pub boundary_contribution: f64,
    /// `C_K = max_ℓ max |K̂⁽ˡ⁾|`.
    pub c_k: f64,
    /// `C_K ℓ* / L`.
    pub boundary_bound: f64,
    /// `max |K̂(assembled) − combined| / max |K̂(assembled)|` when an assembled report is given.
    pub additivity_discrepancy: Option<f64>,
}

/// Splits the depth average of per-layer couplings into the first `ell_star`
/// layers and the rest.
pub fn depth_average_dilution(
    layers: &[LogShiftReport],
    ell_star: usize,
    assembled: Option<&LogShiftReport>,
) -> Result<DilutionReport> {
    let first = layers.first().ok_or_else(|| GrsdError::invalid("layers", "empty"))?;
    if layers.iter().any(|r| !r.same_layout(first)) || assembled.is_some_and(|a| !a.same_layout(first)) {
        return Err(GrsdError::GridMismatch);
    }
    let depth = layers.len();
    if ell_star >= depth {
        return Err(GrsdError::invalid("ell_star", format!("{ell_star} is not below depth {depth}")));
    }
    let w = first.window_len();
    let inv = 1.0 / depth as f64;
    let mut boundary = DenseMatrix::zeros(w, w);
    let mut bulk = DenseMatrix::zeros(w, w);
    let mut c_k: f64 = 0.0;
    for (l, r) in layers.iter().enumerate() {
        let target = if l < ell_star { &mut boundary } else { &mut bulk };
        target.add_assign_scaled(&r.k_hat, inv)?;
        c_k = c_k.max(r.k_hat.max_abs());
    }
    let combined = boundary.add(&bulk)?;
    let additivity_discrepancy = assembled.map(|a| {
        let scale = a.k_hat.max_abs();
        let diff = a.k_hat.sub(&combined).expect("same layout").max_abs();
        if scale > 0.0 {
            diff / scale
        } else {
            diff
        }
    });
    Ok(DilutionReport {
        depth,
        ell_star,
        combined_err: stationarity_error(&combined).1,
        bulk_err: stationarity_error(&bulk).1,
        boundary_contribution: boundary.max_abs(),
        c_k,
        boundary_bound: c_k * ell_star as f64 * inv,
        combined,
        additivity_discrepancy,
    })
}

/// Residual products `P_L = A_L ⋯ A_1` applied to a log-spread input
/// `B = diag(e^{b_i})`, with `b` evenly spaced over `input_span`.
///
/// Layer `L` contributes `M⁽ᴸ⁾ = P_L B Bᵀ P_Lᵀ`; couplings are read off with
/// the probe `BBᵀ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogShiftDepthSpec {
    pub width: usize,
    pub epsilon: f64,
    pub h: f64,
    pub input_span: (f64, f64),
    pub edge_margin: usize,
    pub renormalize: bool,
    pub seed: u64,
}

impl LogShiftDepthSpec {
    pub fn new(width: usize, epsilon: f64, seed: u64) -> Self {
        Self {
            width,
            epsilon,
            h: 0.5,
            input_span: (-2.0, 2.0),
            edge_margin: 2,
            renormalize: false,
            seed,
        }
    }

    pub fn input(&self) -> DenseMatrix {
        let n = self.width;
        let (lo, hi) = self.input_span;
        let b: Vec<f64> = (0..n)
            .map(|i| {
                let x = if n > 1 { lo + (hi - lo) * i as f64 / (n - 1) as f64 } else { lo };
                x.exp()
            })
            .collect();
        DenseMatrix::diagonal(&b)
    }

    pub fn probe(&self) -> DenseMatrix {
        self.input().outer_gram()
    }

    fn options(&self, empty: EmptyBinPolicy) -> CouplingOptions {
        CouplingOptions {
            renormalize: self.renormalize,
            empty_bins: empty,
            ..CouplingOptions::default()
        }
    }

    /// `M⁽ᴸ⁾` for every `L = 1..=depth`, visiting each in order.
    pub fn for_each_layer(&self, depth: usize, mut f: impl FnMut(usize, &DenseMatrix) -> Result<()>) -> Result<()> {
        let stack = ResidualStack::gaussian(self.width, depth.max(1), self.epsilon, self.seed)?;
        let mut p = self.input();
        for l in 1..=depth {
            p = stack.propagator(l).matmul(&p)?;
            f(l, &p.outer_gram())?;
        }
        Ok(())
    }

    /// Couplings of `M⁽ᴸ⁾` at each requested depth, each on a grid covering its own spectrum.
    pub fn stationarity_by_depth(&self, depths: &[usize]) -> Result<Vec<LogShiftReport>> {
        let max = depths.iter().copied().max().unwrap_or(0);
        let probe = self.probe();
        let mut found: BTreeMap<usize, LogShiftReport> = BTreeMap::new();
        self.for_each_layer(max, |l, m| {
            if depths.contains(&l) {
                let eig = symmetric_eigendecompose(m, 1e-8)?;
                let grid = LogBinGrid::for_spectrum(&eig, self.h, None)?.with_edge_margin(self.edge_margin)?;
                found.insert(l, log_bin_couplings(&eig, &probe, &grid, &self.options(EmptyBinPolicy::Merge))?);
            }
            Ok(())
        })?;
        depths
            .iter()
            .map(|d| found.get(d).cloned().ok_or_else(|| GrsdError::invalid("depths", "must be positive")))
            .collect()
    }

    /// Per-layer couplings for `ℓ = 1..=depth`, each in its own eigenbasis, on
    /// one lattice-anchored grid covering all layer spectra.
    pub fn layer_couplings(&self, depth: usize) -> Result<Vec<LogShiftReport>> {
        let mut eigs: Vec<SymmetricEigenSystem> = Vec::with_capacity(depth);
        self.for_each_layer(depth, |_, m| {
            eigs.push(symmetric_eigendecompose(m, 1e-8)?);
            Ok(())
        })?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for e in &eigs {
            let floor = e.default_floor();
            for &l in e.eigenvalues().iter().filter(|&&l| l > floor) {
                lo = lo.min(l.ln());
                hi = hi.max(l.ln());
            }
        }
        let grid = LogBinGrid::anchored(lo, hi, self.h)?.with_edge_margin(self.edge_margin)?;
        let probe = self.probe();
        let opts = self.options(EmptyBinPolicy::Zero);
        eigs.iter()
            .map(|e| match log_bin_couplings(e, &probe, &grid, &opts) {
                Err(GrsdError::EmptyWindow) => {
                    let w = grid.window_len();
                    LogShiftReport::from_k_hat(grid.clone(), DenseMatrix::zeros(w, w))
                }
                other => other,
            })
            .collect()
    }

    /// Per-layer cross couplings of `M⁽ˡ⁾` against the probe, all in the
    /// eigenbasis of `M̄ = (1/L) Σ_ℓ M⁽ˡ⁾`, plus the couplings of `M̄` itself.
    pub fn shared_basis_couplings(&self, depth: usize) -> Result<(Vec<LogShiftReport>, LogShiftReport)> {
        let mut ms = Vec::with_capacity(depth);
        self.for_each_layer(depth, |_, m| {
            ms.push(m.clone());
            Ok(())
        })?;
        let first = ms.first().ok_or_else(|| GrsdError::invalid("depth", "must be positive"))?;
        let mut mean = DenseMatrix::zeros(first.rows(), first.cols());
        for m in &ms {
            mean.add_assign_scaled(m, 1.0 / depth as f64)?;
        }
        let eig = symmetric_eigendecompose(&mean, 1e-8)?;
        let grid = LogBinGrid::for_spectrum(&eig, self.h, None)?.with_edge_margin(self.edge_margin)?;
        let probe = self.probe();
        let opts = self.options(EmptyBinPolicy::Merge);
        let layers = ms
            .iter()
            .map(|m| log_bin_cross_couplings(&eig, m, &probe, &grid, &opts))
            .collect::<Result<Vec<_>>>()?;
        let assembled = log_bin_cross_couplings(&eig, &mean, &probe, &grid, &opts)?;
        Ok((layers, assembled))
    }
}
