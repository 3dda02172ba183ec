use serde::{Deserialize, Serialize};

use super::blocks::{orthonormal_columns, BlockJacobian};
use crate::error::{GrsdError, Result};
use crate::rng::{derive_named, rng_from};
use crate::spectral_core::{operator_norm, DenseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionKind {
    /// `A(τ) = ρ I`.
    Scalar,
    /// `A(τ) = ρ Q_τ` with independent Haar-orthogonal `Q_τ`.
    Orthogonal,
}

/// Parameters for [`StableSsm::build`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SsmSpec {
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Contraction factor used to build the transitions.
    pub rho: f64,
    /// Declared stability bound; defaults to `rho` when `None`.
    pub rho_bound: Option<f64>,
    pub c_a: f64,
    pub kind: TransitionKind,
    /// Relative drift `Ȧ = κ A + σ ρ N/√d`.
    pub drift_relative: f64,
    pub drift_noise: f64,
    pub seed: u64,
}

impl Default for SsmSpec {
    fn default() -> Self {
        Self {
            horizon: 200,
            state_dim: 1,
            input_dim: 1,
            output_dim: 1,
            rho: 0.9,
            rho_bound: None,
            c_a: 1.05,
            kind: TransitionKind::Scalar,
            drift_relative: -0.5,
            drift_noise: 0.0,
            seed: 0,
        }
    }
}

/// Linear recurrence `h_τ = A(τ)h_{τ−1} + B(τ)u_τ`, `y_τ = C(τ)h_τ`, with
/// transitions drifting in training time at rate `Ȧ(τ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StableSsm {
    a: Vec<DenseMatrix>,
    a_rate: Vec<DenseMatrix>,
    b: Vec<DenseMatrix>,
    c: Vec<DenseMatrix>,
    inputs: Vec<Vec<f64>>,
    rho_bound: f64,
    c_a: f64,
    time: f64,
}

impl StableSsm {
    /// Builds and verifies `‖A(τ+k−1)⋯A(τ)‖ ≤ C_A ρ^k`.
    pub fn build(spec: &SsmSpec) -> Result<Self> {
        let ssm = Self::build_unchecked(spec)?;
        ssm.verify_stability()?;
        Ok(ssm)
    }

    /// Builds without the stability check; for injecting unstable recurrences.
    pub fn build_unchecked(spec: &SsmSpec) -> Result<Self> {
        if spec.horizon == 0 || spec.state_dim == 0 || spec.input_dim == 0 || spec.output_dim == 0 {
            return Err(GrsdError::invalid("ssm", "dimensions and horizon must be positive"));
        }
        let rho_bound = spec.rho_bound.unwrap_or(spec.rho);
        if !(rho_bound > 0.0 && rho_bound < 1.0) {
            return Err(GrsdError::invalid("rho_bound", format!("{rho_bound} not in (0, 1)")));
        }
        if !(spec.c_a >= 1.0) {
            return Err(GrsdError::invalid("c_a", "must be at least 1"));
        }
        let d = spec.state_dim;
        let mut rng = rng_from(derive_named(spec.seed, "ssm"));
        let mut a = Vec::with_capacity(spec.horizon);
        let mut a_rate = Vec::with_capacity(spec.horizon);
        let mut b = Vec::with_capacity(spec.horizon);
        let mut c = Vec::with_capacity(spec.horizon);
        let mut inputs = Vec::with_capacity(spec.horizon);
        for _ in 0..spec.horizon {
            let q = match spec.kind {
                TransitionKind::Scalar => DenseMatrix::identity(d),
                TransitionKind::Orthogonal => orthonormal_columns(d, d, &mut rng),
            };
            let at = q.scale(spec.rho);
            let noise = DenseMatrix::gaussian(d, d, 1.0 / d as f64, &mut rng);
            let mut rate = at.scale(spec.drift_relative);
            rate.add_assign_scaled(&noise, spec.drift_noise * spec.rho)?;
            a.push(at);
            a_rate.push(rate);
            b.push(DenseMatrix::gaussian(d, spec.input_dim, 1.0 / spec.input_dim as f64, &mut rng));
            c.push(DenseMatrix::gaussian(spec.output_dim, d, 1.0 / d as f64, &mut rng));
            inputs.push(
                (0..spec.input_dim)
                    .map(|_| crate::rng::standard_normal(&mut rng))
                    .collect(),
            );
        }
        Ok(Self {
            a,
            a_rate,
            b,
            c,
            inputs,
            rho_bound,
            c_a: spec.c_a,
            time: 0.0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a[0].rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.c[0].rows()
    }

    pub fn rho_bound(&self) -> f64 {
        self.rho_bound
    }

    pub fn c_a(&self) -> f64 {
        self.c_a
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Lags checked by [`Self::verify_stability`]: `min(T, 4⌈1/(1−ρ)⌉)`.
    pub fn stability_lags(&self) -> usize {
        let k = (1.0 / (1.0 - self.rho_bound)).ceil() as usize * 4;
        k.min(self.horizon())
    }

    /// Largest `‖A(τ+k−1)⋯A(τ)‖ / ρ^k` over checked lags, together with the lag.
    pub fn measured_c_a(&self) -> Result<(f64, usize)> {
        let t = self.horizon();
        let kmax = self.stability_lags();
        let mut worst = (1.0, 0);
        for start in 0..t {
            let mut p = DenseMatrix::identity(self.state_dim());
            for k in 1..=kmax.min(t - start) {
                p = self.a[start + k - 1].matmul(&p)?;
                let ratio = operator_norm(&p)? / self.rho_bound.powi(k as i32);
                if ratio > worst.0 {
                    worst = (ratio, k);
                }
            }
        }
        Ok(worst)
    }

    pub fn verify_stability(&self) -> Result<()> {
        let (measured, lag) = self.measured_c_a()?;
        if measured > self.c_a * (1.0 + 1e-12) {
            return Err(GrsdError::UnstableSsm {
                measured,
                allowed: self.c_a,
                lag,
            });
        }
        Ok(())
    }

    /// Transitions moved along their drift by `dt` of training time.
    pub fn evolved(&self, dt: f64) -> Self {
        let mut s = self.clone();
        for (a, r) in s.a.iter_mut().zip(&self.a_rate) {
            a.add_assign_scaled(r, dt).expect("same shape");
        }
        s.time += dt;
        s
    }
}

/// Per-step parameter blocks of the unrolled recurrence.
///
/// Block `l` holds the derivatives of the stacked outputs `(y_1, …, y_T)` with
/// respect to the entries of `B(τ)` for the `window` steps starting at
/// `τ = l·window + 1`; entries are ordered `(i, j) ↦ i·d_u + j`.
pub fn unroll_ssm_jacobian(ssm: &StableSsm, window: usize) -> Result<BlockJacobian> {
    ssm.verify_stability()?;
    unroll_ssm_jacobian_unchecked(ssm, window)
}

pub fn unroll_ssm_jacobian_unchecked(ssm: &StableSsm, window: usize) -> Result<BlockJacobian> {
    unroll(ssm, window, false)
}

/// Exact training-time derivative of [`unroll_ssm_jacobian`] under the drift `Ȧ`.
pub fn unroll_ssm_jacobian_rate(ssm: &StableSsm, window: usize) -> Result<BlockJacobian> {
    unroll(ssm, window, true)
}

fn unroll(ssm: &StableSsm, window: usize, rate: bool) -> Result<BlockJacobian> {
    let t_len = ssm.horizon();
    if window == 0 || t_len % window != 0 {
        return Err(GrsdError::invalid("window", format!("{window} must divide horizon {t_len}")));
    }
    let (dh, du, dy) = (ssm.state_dim(), ssm.input_dim(), ssm.output_dim());
    let p = dh * du;
    let n_f = t_len * dy;
    let mut blocks = Vec::with_capacity(t_len / window);
    for l in 0..t_len / window {
        let mut block = DenseMatrix::zeros(n_f, p * window);
        for w in 0..window {
            let tau = l * window + w;
            // V holds ∂h_t/∂B(τ) columnwise; Vdot its training-time derivative.
            let mut v = DenseMatrix::zeros(dh, p);
            for i in 0..dh {
                for j in 0..du {
                    v[(i, i * du + j)] = ssm.inputs[tau][j];
                }
            }
            let mut vdot = DenseMatrix::zeros(dh, p);
            for t in tau..t_len {
                if t > tau {
                    if rate {
                        vdot = ssm.a_rate[t].matmul(&v)?.add(&ssm.a[t].matmul(&vdot)?)?;
                    }
                    v = ssm.a[t].matmul(&v)?;
                }
                let y = ssm.c[t].matmul(if rate { &vdot } else { &v })?;
                for r in 0..dy {
                    for col in 0..p {
                        block[(t * dy + r, w * p + col)] = y[(r, col)];
                    }
                }
            }
        }
        blocks.push(block);
    }
    Ok(BlockJacobian::new(blocks, ssm.time)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_recurrence_has_geometric_gram() {
        let spec = SsmSpec {
            horizon: 40,
            rho: 0.8,
            drift_relative: 0.0,
            ..SsmSpec::default()
        };
        let ssm = StableSsm::build(&spec).unwrap();
        let bj = unroll_ssm_jacobian(&ssm, 1).unwrap();
        // Block l is c b u_l ρ^{t−l} on t ≥ l, so C_lm / (C_ll · ρ^{m−l}) is independent of
        // the inputs up to the finite horizon; compare two pairs sharing m.
        let c = |l: usize, m: usize| bj.cross_gram(l, m)[(0, 0)];
        let ratio = c(5, 8) * c(6, 6) / (c(6, 8) * c(5, 6));
        assert!((ratio - 1.0).abs() < 1e-10, "{ratio}");
    }

    #[test]
    fn zero_transition_decouples_blocks() {
        let spec = SsmSpec {
            horizon: 10,
            rho: 1e-300,
            rho_bound: Some(0.5),
            drift_relative: 0.0,
            ..SsmSpec::default()
        };
        let ssm = StableSsm::build(&spec).unwrap();
        let bj = unroll_ssm_jacobian(&ssm, 1).unwrap();
        for l in 0..10 {
            for m in (l + 1)..10 {
                assert!(bj.cross_gram(l, m).max_abs() < 1e-200);
            }
        }
    }

    #[test]
    fn unstable_recurrence_is_rejected() {
        let spec = SsmSpec {
            horizon: 30,
            rho: 1.05,
            rho_bound: Some(0.9),
            ..SsmSpec::default()
        };
        assert!(matches!(StableSsm::build(&spec), Err(GrsdError::UnstableSsm { .. })));
        assert!(StableSsm::build_unchecked(&spec).is_ok());
    }

    #[test]
    fn analytic_rate_matches_central_difference() {
        let spec = SsmSpec {
            horizon: 24,
            state_dim: 2,
            input_dim: 2,
            output_dim: 2,
            kind: TransitionKind::Orthogonal,
            drift_noise: 0.3,
            seed: 5,
            ..SsmSpec::default()
        };
        let ssm = StableSsm::build(&spec).unwrap();
        let rate = unroll_ssm_jacobian_rate(&ssm, 2).unwrap();
        let dt = 1e-6;
        let plus = unroll_ssm_jacobian_unchecked(&ssm.evolved(dt), 2).unwrap();
        let minus = unroll_ssm_jacobian_unchecked(&ssm.evolved(-dt), 2).unwrap();
        let fd = plus.combine(0.5 / dt, &minus, -0.5 / dt).unwrap();
        assert!(fd.max_abs_difference(&rate).unwrap() < 1e-7);
    }
}
