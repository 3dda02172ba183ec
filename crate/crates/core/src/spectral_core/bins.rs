use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::eigen::SymmetricEigenSystem;
use crate::error::{GrsdError, Result};

pub const DEFAULT_EDGE_MARGIN: usize = 2;

// Positions within this many bin widths of an edge are treated as on the edge,
// so that `ln(e^{s_α})` lands in bin α despite rounding.
const EDGE_SNAP: f64 = 1e-9;

/// Uniform grid in `s = ln λ`: bin α is `[s_min + αh, s_min + (α+1)h)`.
///
/// The analysis window is an inclusive range of bin indices kept away from the
/// spectral edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogBinGrid {
    s_min: f64,
    h: f64,
    n_bins: usize,
    window_lo: usize,
    window_hi: usize,
}

impl LogBinGrid {
    /// Grid with the default edge margin.
    pub fn new(s_min: f64, h: f64, n_bins: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(GrsdError::InvalidGrid(format!("bin width {h}")));
        }
        if !s_min.is_finite() {
            return Err(GrsdError::InvalidGrid(format!("s_min {s_min}")));
        }
        if n_bins == 0 {
            return Err(GrsdError::InvalidGrid("no bins".into()));
        }
        let grid = Self {
            s_min,
            h,
            n_bins,
            window_lo: 0,
            window_hi: n_bins - 1,
        };
        grid.with_edge_margin(DEFAULT_EDGE_MARGIN)
    }

    /// Smallest grid starting at `s_lo` whose bins contain `s_hi`.
    pub fn covering(s_lo: f64, s_hi: f64, h: f64) -> Result<Self> {
        if !(s_hi >= s_lo) {
            return Err(GrsdError::InvalidGrid(format!("range [{s_lo}, {s_hi}]")));
        }
        let n = ((s_hi - s_lo) / h).floor() as usize + 1;
        Self::new(s_lo, h, n)
    }

    /// Grid whose edges sit on the lattice `hℤ` and that covers `[s_lo, s_hi]`.
    pub fn anchored(s_lo: f64, s_hi: f64, h: f64) -> Result<Self> {
        if !(s_hi >= s_lo) || !(h > 0.0) {
            return Err(GrsdError::InvalidGrid(format!("range [{s_lo}, {s_hi}]")));
        }
        let start = (s_lo / h).floor() * h;
        let n = ((s_hi - start) / h + EDGE_SNAP).floor() as usize + 1;
        Self::new(start, h, n)
    }

    /// Grid spanning the retained part of a spectrum (eigenvalues above `floor`).
    pub fn for_spectrum(eig: &SymmetricEigenSystem, h: f64, floor: Option<f64>) -> Result<Self> {
        let floor = floor.unwrap_or_else(|| eig.default_floor());
        let retained: Vec<f64> = eig
            .eigenvalues()
            .iter()
            .filter(|&&l| l > floor && l > 0.0)
            .map(|l| l.ln())
            .collect();
        if retained.is_empty() {
            return Err(GrsdError::EmptyWindow);
        }
        let lo = retained.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = retained.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self::covering(lo, hi, h)
    }

    /// Window `[margin, n_bins − 1 − margin]`.
    pub fn with_edge_margin(mut self, margin: usize) -> Result<Self> {
        if 2 * margin >= self.n_bins {
            // Too few bins for the requested margin: keep the whole grid as window.
            self.window_lo = 0;
            self.window_hi = self.n_bins - 1;
            return Ok(self);
        }
        self.window_lo = margin;
        self.window_hi = self.n_bins - 1 - margin;
        Ok(self)
    }

    pub fn with_window(mut self, lo: usize, hi: usize) -> Result<Self> {
        if lo > hi || hi >= self.n_bins {
            return Err(GrsdError::InvalidGrid(format!(
                "window [{lo}, {hi}] on {} bins",
                self.n_bins
            )));
        }
        self.window_lo = lo;
        self.window_hi = hi;
        Ok(self)
    }

    /// Restricts the window to bins lying inside `[s_lo, s_hi]`.
    pub fn with_window_in(self, s_lo: f64, s_hi: f64) -> Result<Self> {
        let lo = ((s_lo - self.s_min) / self.h - EDGE_SNAP).ceil().max(0.0) as usize;
        let hi_edge = ((s_hi - self.s_min) / self.h + EDGE_SNAP).floor();
        if hi_edge < 1.0 {
            return Err(GrsdError::InvalidGrid(format!("window [{s_lo}, {s_hi}]")));
        }
        let hi = (hi_edge as usize - 1).min(self.n_bins - 1);
        let (wlo, whi) = (self.window_lo, self.window_hi);
        self.with_window(lo.max(0), hi).map_err(|_| {
            GrsdError::InvalidGrid(format!("window [{s_lo}, {s_hi}] outside grid ({wlo}..={whi})"))
        })
    }

    pub fn s_min(&self) -> f64 {
        self.s_min
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn s_max(&self) -> f64 {
        self.s_edge(self.n_bins)
    }

    pub fn window(&self) -> RangeInclusive<usize> {
        self.window_lo..=self.window_hi
    }

    pub fn window_len(&self) -> usize {
        self.window_hi - self.window_lo + 1
    }

    pub fn in_window(&self, bin: usize) -> bool {
        bin >= self.window_lo && bin <= self.window_hi
    }

    /// Lower edge `s_α`.
    pub fn s_edge(&self, alpha: usize) -> f64 {
        self.s_min + alpha as f64 * self.h
    }

    pub fn s_center(&self, alpha: usize) -> f64 {
        self.s_min + (alpha as f64 + 0.5) * self.h
    }

    pub fn lambda_edge(&self, alpha: usize) -> f64 {
        self.s_edge(alpha).exp()
    }

    /// Geometric bin center `e^{s_α + h/2}`.
    pub fn lambda_center(&self, alpha: usize) -> f64 {
        self.s_center(alpha).exp()
    }

    /// Bin width in λ.
    pub fn lambda_width(&self, alpha: usize) -> f64 {
        self.lambda_edge(alpha) * self.h.exp_m1()
    }

    pub fn bin_of_s(&self, s: f64) -> Option<usize> {
        if !s.is_finite() {
            return None;
        }
        let x = (s - self.s_min) / self.h;
        let r = x.round();
        let x = if (x - r).abs() <= EDGE_SNAP { r } else { x };
        if x < 0.0 {
            return None;
        }
        let k = x.floor() as usize;
        (k < self.n_bins).then_some(k)
    }

    pub fn bin_of_lambda(&self, lambda: f64) -> Option<usize> {
        if lambda > 0.0 {
            self.bin_of_s(lambda.ln())
        } else {
            None
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self == other
    }
}

/// Mode-to-bin map produced by [`assign_log_bins`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BinAssignment {
    bins: Vec<Option<usize>>,
    n_bins: usize,
    floor: f64,
    below_floor: Vec<usize>,
    outside_grid: Vec<usize>,
}

impl BinAssignment {
    pub fn bin(&self, mode: usize) -> Option<usize> {
        self.bins[mode]
    }

    pub fn bins(&self) -> &[Option<usize>] {
        &self.bins
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Modes whose eigenvalue is at or below the floor.
    pub fn below_floor(&self) -> &[usize] {
        &self.below_floor
    }

    /// Retained modes whose eigenvalue lies outside the grid.
    pub fn outside_grid(&self) -> &[usize] {
        &self.outside_grid
    }

    pub fn members(&self, alpha: usize) -> Vec<usize> {
        self.bins
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == Some(alpha))
            .map(|(u, _)| u)
            .collect()
    }

    pub fn populations(&self) -> Vec<usize> {
        let mut pop = vec![0; self.n_bins];
        for b in self.bins.iter().flatten() {
            pop[*b] += 1;
        }
        pop
    }
}

/// Assigns every retained eigenvalue (`λ > floor`) to its log-bin.
///
/// `floor` defaults to `1e-12 · λ_max`. Fails with `EmptyWindow` when no
/// retained eigenvalue falls in the grid window.
pub fn assign_log_bins(
    eig: &SymmetricEigenSystem,
    grid: &LogBinGrid,
    floor: Option<f64>,
) -> Result<BinAssignment> {
    let floor = floor.unwrap_or_else(|| eig.default_floor()).max(0.0);
    let mut bins = Vec::with_capacity(eig.len());
    let mut below_floor = Vec::new();
    let mut outside_grid = Vec::new();
    let mut any_in_window = false;
    for (u, &l) in eig.eigenvalues().iter().enumerate() {
        if !(l > floor) {
            below_floor.push(u);
            bins.push(None);
            continue;
        }
        let b = grid.bin_of_lambda(l);
        if b.is_none() {
            outside_grid.push(u);
        }
        any_in_window |= b.is_some_and(|b| grid.in_window(b));
        bins.push(b);
    }
    if !any_in_window {
        return Err(GrsdError::EmptyWindow);
    }
    Ok(BinAssignment {
        bins,
        n_bins: grid.n_bins(),
        floor,
        below_floor,
        outside_grid,
    })
}
