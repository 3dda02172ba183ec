use serde::{Deserialize, Serialize};

use crate::error::{GrsdError, Result};

/// Velocity samples `v[i][j] = v(s_j, t_i)` on a tensor grid with `t > 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampledField {
    s: Vec<f64>,
    t: Vec<f64>,
    log_t: Vec<f64>,
    log_v: Vec<Vec<f64>>,
    sign: f64,
}

impl SampledField {
    pub fn new(s: Vec<f64>, t: Vec<f64>, v: Vec<Vec<f64>>) -> Result<Self> {
        if s.len() < 2 || t.is_empty() || v.len() != t.len() || v.iter().any(|r| r.len() != s.len()) {
            return Err(GrsdError::DimensionMismatch("field grid shape".into()));
        }
        if s.windows(2).any(|w| !(w[1] > w[0])) || t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GrsdError::invalid("grid", "coordinates must be strictly increasing"));
        }
        if !(t[0] > 0.0) {
            return Err(GrsdError::invalid("t", "times must be positive"));
        }
        let sign = v[0][0].signum();
        if v.iter().flatten().any(|&x| x == 0.0 || !x.is_finite() || x.signum() != sign) {
            return Err(GrsdError::MixedSignVelocities);
        }
        let log_v = v.iter().map(|r| r.iter().map(|x| x.abs().ln()).collect()).collect();
        let log_t = t.iter().map(|x| x.ln()).collect();
        Ok(Self {
            s,
            t,
            log_t,
            log_v,
            sign,
        })
    }

    /// Samples `f(s, t)` on the given grid.
    pub fn from_fn(s: Vec<f64>, t: Vec<f64>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let v = t.iter().map(|&ti| s.iter().map(|&sj| f(sj, ti)).collect()).collect();
        Self::new(s, t, v)
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    /// `ln|v|` by bilinear interpolation in `(s, ln t)`; `None` out of range.
    pub fn log_abs_at(&self, s: f64, t: f64) -> Option<f64> {
        let (js, ws) = locate(&self.s, s)?;
        if self.t.len() == 1 {
            let tol = 1e-12 * self.t[0];
            if (t - self.t[0]).abs() > tol {
                return None;
            }
            let row = &self.log_v[0];
            return Some(row[js] * (1.0 - ws) + row[js + 1] * ws);
        }
        let (it, wt) = locate(&self.log_t, t.ln())?;
        let at = |i: usize| self.log_v[i][js] * (1.0 - ws) + self.log_v[i][js + 1] * ws;
        Some(at(it) * (1.0 - wt) + at(it + 1) * wt)
    }
}

fn locate(grid: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = grid.len();
    let span = grid[n - 1] - grid[0];
    let tol = 1e-12 * span.abs().max(1.0);
    if !(x >= grid[0] - tol && x <= grid[n - 1] + tol) {
        return None;
    }
    let x = x.clamp(grid[0], grid[n - 1]);
    let j = match grid.partition_point(|&g| g <= x) {
        0 => 0,
        p => (p - 1).min(n - 2),
    };
    let w = (x - grid[j]) / (grid[j + 1] - grid[j]);
    Some((j, w))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ExponentMode {
    /// Least-squares `β` from `ln v(s+τ,t) − ln v(s,e^{kτ}t) = βτ`.
    Fitted,
    Fixed { beta: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigidityScore {
    /// `sup |v(s+τ,t) − e^{βτ} v(s,e^{kτ}t)| / |v(s+τ,t)|`.
    pub score: f64,
    pub exponent: f64,
    pub tested: usize,
    pub skipped: usize,
}

/// Tests `v(s+τ, t) = e^{βτ} v(s, e^{kτ} t)` at every grid point `(s_j, t_i)`
/// and shift `τ` for which both sides lie inside the sampled field.
pub fn log_shift_rigidity_test(
    field: &SampledField,
    shifts: &[f64],
    k: f64,
    mode: ExponentMode,
) -> Result<RigidityScore> {
    let mut pairs: Vec<(f64, f64, f64)> = Vec::new();
    let mut skipped = 0;
    for &tau in shifts {
        for &t in &field.t {
            for &s in &field.s {
                let lhs = field.log_abs_at(s + tau, t);
                let rhs = field.log_abs_at(s, (k * tau).exp() * t);
                match (lhs, rhs) {
                    (Some(l), Some(r)) => pairs.push((tau, l, r)),
                    _ => skipped += 1,
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(GrsdError::RangeExceeded);
    }
    let beta = match mode {
        ExponentMode::Fixed { beta } => beta,
        ExponentMode::Fitted => {
            let stt: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
            let str_: f64 = pairs.iter().map(|p| p.0 * (p.1 - p.2)).sum();
            if stt > 0.0 {
                str_ / stt
            } else {
                0.0
            }
        }
    };
    let score = pairs
        .iter()
        .map(|&(tau, l, r)| (1.0 - (beta * tau - (l - r)).exp()).abs())
        .fold(0.0, f64::max);
    Ok(RigidityScore {
        score,
        exponent: beta,
        tested: pairs.len(),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn stationary_power_law_passes_with_its_exponent() {
        let f = SampledField::from_fn(grid(-3.0, 3.0, 61), vec![1.0], |s, _| 2.0 * (0.7 * s).exp()).unwrap();
        let r = log_shift_rigidity_test(&f, &[0.5, 1.0], 0.0, ExponentMode::Fitted).unwrap();
        assert!(r.score < 1e-12);
        assert!((r.exponent - 0.7).abs() < 1e-12);
    }

    #[test]
    fn self_similar_field_fits_combined_exponent() {
        // v = (λ/t)^a is invariant with β = a(1 + k).
        let (a, k) = (0.7, 0.5);
        let t = grid(1.0, 3.0, 41);
        let f = SampledField::from_fn(grid(-3.0, 3.0, 61), t, |s, t| (a * (s - t.ln())).exp()).unwrap();
        let r = log_shift_rigidity_test(&f, &[0.5, 1.0], k, ExponentMode::Fitted).unwrap();
        assert!(r.score < 1e-10, "{}", r.score);
        assert!((r.exponent - a * (1.0 + k)).abs() < 1e-10);
        let pinned = log_shift_rigidity_test(&f, &[0.5, 1.0], k, ExponentMode::Fixed { beta: a }).unwrap();
        assert!(pinned.score > 0.1);
    }

    #[test]
    fn shifts_beyond_the_field_are_rejected() {
        let f = SampledField::from_fn(grid(0.0, 1.0, 11), vec![1.0], |_, _| 1.0).unwrap();
        assert!(matches!(
            log_shift_rigidity_test(&f, &[5.0], 0.0, ExponentMode::Fitted),
            Err(GrsdError::RangeExceeded)
        ));
    }
}
