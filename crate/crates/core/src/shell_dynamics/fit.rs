use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::flux::VelocityField;
use crate::error::{GrsdError, Result};

/// Least-squares fit of `v = c(t) λ^a` with a shared exponent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    /// `(sample index, c)` per time sample, carrying the sign of `v`.
    pub c: Vec<(usize, f64)>,
    pub r2: f64,
    pub max_abs_residual: f64,
    pub n_samples: usize,
    /// `[λ_lo, λ_hi)` of the fitted samples.
    pub window: (f64, f64),
}

impl PowerLawFit {
    pub fn c_values(&self) -> Vec<f64> {
        self.c.iter().map(|&(_, c)| c).collect()
    }
}

/// Fits `log|v| = a log λ + log|c(t)|` over samples `(time index, λ, v)` with
/// `λ ∈ [window.0, window.1)`.
pub fn fit_power_law(samples: &[(usize, f64, f64)], window: (f64, f64)) -> Result<PowerLawFit> {
    let inside: Vec<(usize, f64, f64)> = samples
        .iter()
        .copied()
        .filter(|&(_, l, _)| l >= window.0 && l < window.1 && l > 0.0)
        .collect();
    if inside.len() < 3 {
        return Err(GrsdError::InsufficientSamples {
            needed: 3,
            got: inside.len(),
        });
    }
    let sign = inside[0].2.signum();
    if inside.iter().any(|&(_, _, v)| v == 0.0 || v.signum() != sign) {
        return Err(GrsdError::MixedSignVelocities);
    }

    let mut groups: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for &(i, l, v) in &inside {
        groups.entry(i).or_default().push((l.ln(), v.abs().ln()));
    }
    let means: BTreeMap<usize, (f64, f64)> = groups
        .iter()
        .map(|(&i, pts)| {
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            (i, (mx, my))
        })
        .collect();
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (i, pts) in &groups {
        let (mx, my) = means[i];
        for &(x, y) in pts {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
            syy += (y - my) * (y - my);
        }
    }
    if !(sxx > 0.0) {
        return Err(GrsdError::InsufficientSamples {
            needed: 2,
            got: 1,
        });
    }
    let a = sxy / sxx;
    let mut ss_res = 0.0;
    let mut max_res: f64 = 0.0;
    for (i, pts) in &groups {
        let (mx, my) = means[i];
        for &(x, y) in pts {
            let r = y - (my + a * (x - mx));
            ss_res += r * r;
            max_res = max_res.max(r.abs());
        }
    }
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let c = means
        .iter()
        .map(|(&i, &(mx, my))| (i, sign * (my - a * mx).exp()))
        .collect();
    Ok(PowerLawFit {
        a,
        c,
        r2,
        max_abs_residual: max_res,
        n_samples: inside.len(),
        window,
    })
}

/// Fit over the grid window of a recovered velocity field.
pub fn fit_velocity_field(field: &VelocityField) -> Result<PowerLawFit> {
    let g = &field.grid;
    let w = g.window();
    let window = (g.lambda_edge(*w.start()), g.lambda_edge(*w.end() + 1));
    fit_power_law(&field.window_samples(), window)
}

/// Separate fits on maximal runs of window bins whose velocity has one sign
/// at every time; runs with fewer than three bins are skipped.
pub fn fit_by_sign_region(field: &VelocityField) -> Vec<PowerLawFit> {
    let g = &field.grid;
    let bin_sign = |a: usize| -> Option<f64> {
        let mut s = None;
        for row in &field.velocity {
            let v = row[a]?;
            if v == 0.0 {
                return None;
            }
            match s {
                None => s = Some(v.signum()),
                Some(prev) if prev != v.signum() => return None,
                _ => {}
            }
        }
        s
    };
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut current: Option<(usize, usize, f64)> = None;
    for a in g.window() {
        match (bin_sign(a), current) {
            (Some(s), Some((lo, _, cs))) if s == cs => current = Some((lo, a, cs)),
            (Some(s), _) => {
                if let Some((lo, hi, _)) = current {
                    runs.push((lo, hi));
                }
                current = Some((a, a, s));
            }
            (None, _) => {
                if let Some((lo, hi, _)) = current.take() {
                    runs.push((lo, hi));
                }
            }
        }
    }
    if let Some((lo, hi, _)) = current {
        runs.push((lo, hi));
    }
    runs.into_iter()
        .filter(|(lo, hi)| hi - lo + 1 >= 3)
        .filter_map(|(lo, hi)| {
            let window = (g.lambda_edge(lo), g.lambda_edge(hi + 1));
            fit_power_law(&field.window_samples(), window).ok()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_velocity_has_zero_exponent() {
        let s: Vec<(usize, f64, f64)> = (1..=4).map(|i| (0, i as f64, 5.0)).collect();
        let f = fit_power_law(&s, (0.5, 10.0)).unwrap();
        assert!(f.a.abs() < 1e-14);
        assert!((f.c[0].1 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let s: Vec<(usize, f64, f64)> = (0..20)
            .flat_map(|i| {
                let l = (0.2 * i as f64 - 2.0).exp();
                [(0, l, 2.0 * l.powf(0.7)), (1, l, 3.0 * l.powf(0.7))]
            })
            .collect();
        let f = fit_power_law(&s, (0.0, f64::INFINITY)).unwrap();
        assert!((f.a - 0.7).abs() < 1e-12);
        assert!((f.c_values()[0] - 2.0).abs() < 1e-12 && (f.c_values()[1] - 3.0).abs() < 1e-12);
        assert!(f.max_abs_residual < 1e-12);
    }

    #[test]
    fn negative_velocities_keep_their_sign() {
        let s: Vec<(usize, f64, f64)> = (1..6).map(|i| (0, i as f64, -(i as f64).powi(2))).collect();
        let f = fit_power_law(&s, (0.0, 100.0)).unwrap();
        assert!((f.a - 2.0).abs() < 1e-12 && (f.c[0].1 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_and_mixed_samples_are_rejected() {
        let two = [(0, 1.0, 1.0), (0, 2.0, 2.0)];
        assert!(matches!(fit_power_law(&two, (0.0, 10.0)), Err(GrsdError::InsufficientSamples { .. })));
        let mixed = [(0, 1.0, 1.0), (0, 2.0, -2.0), (0, 3.0, 3.0)];
        assert!(matches!(fit_power_law(&mixed, (0.0, 10.0)), Err(GrsdError::MixedSignVelocities)));
    }
}
