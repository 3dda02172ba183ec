//! Gradient flow `θ̇ = −∇L(θ)` on small supervised models, with sampled
//! Jacobians and the time-rescaling covariance check.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{GrsdError, Result};
use crate::learning_config::{BlockJacobian, BlockTrajectory};
use crate::rng::{derive_named, rng_from};
use crate::spectral_core::{fmt_f64, norm2, operator_norm, DenseMatrix};

/// Parameter-norm threshold beyond which an integration is declared divergent.
pub const DIVERGENCE_GUARD: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ToyKind {
    /// `f(x) = W x`.
    LinearRegression,
    /// `f(x) = W₂ W₁ x`; blocks `[W₁, W₂]`.
    TwoLayerLinear { hidden: usize },
    /// `f(x) = a · tanh(W x)`; blocks `[W, a]`.
    ShallowTanh { hidden: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    Euler,
    Rk4,
}

/// Model with mean-squared loss `L(θ) = (1/2N) Σ_i ‖f(x_i; θ) − y_i‖²`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyModel {
    kind: ToyKind,
    x: DenseMatrix,
    y: DenseMatrix,
    theta0: Vec<f64>,
    loss_scale: f64,
}

impl ToyModel {
    pub fn new(kind: ToyKind, x: DenseMatrix, y: DenseMatrix, theta0: Vec<f64>) -> Result<Self> {
        if x.rows() == 0 || x.rows() != y.rows() {
            return Err(GrsdError::DimensionMismatch(format!(
                "{} inputs with {} targets",
                x.rows(),
                y.rows()
            )));
        }
        let m = Self {
            kind,
            x,
            y,
            theta0,
            loss_scale: 1.0,
        };
        if m.theta0.len() != m.n_params() {
            return Err(GrsdError::DimensionMismatch(format!(
                "{} initial parameters for a model with {}",
                m.theta0.len(),
                m.n_params()
            )));
        }
        if m.theta0.iter().any(|v| !v.is_finite()) {
            return Err(GrsdError::invalid("theta0", "non-finite entry"));
        }
        Ok(m)
    }

    /// `L(θ) = ½‖θ‖²` on `θ ∈ ℝ²`, realized as regression with `X = √2·I₂`, `y = 0`.
    pub fn half_squared_norm(theta0: [f64; 2]) -> Self {
        let s = std::f64::consts::SQRT_2;
        let x = DenseMatrix::diagonal(&[s, s]);
        let y = DenseMatrix::zeros(2, 1);
        Self::new(ToyKind::LinearRegression, x, y, theta0.to_vec()).expect("consistent shapes")
    }

    /// Gaussian inputs with entry variance `1/d_in`, targets from a random
    /// teacher of the same family, and a small random initialization.
    pub fn synthetic(kind: ToyKind, n_samples: usize, d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from(derive_named(seed, "toy-data"));
        let x = DenseMatrix::gaussian(n_samples, d_in, 1.0 / d_in as f64, &mut rng);
        let shape = Self {
            kind,
            x: x.clone(),
            y: DenseMatrix::zeros(n_samples, d_out),
            theta0: Vec::new(),
            loss_scale: 1.0,
        };
        let p = shape.n_params();
        let teacher: Vec<f64> = (0..p).map(|_| crate::rng::standard_normal(&mut rng)).collect();
        let targets = shape.predict(&teacher);
        let y = DenseMatrix::new(n_samples, d_out, targets)?;
        let theta0: Vec<f64> = (0..p).map(|_| 0.5 * crate::rng::standard_normal(&mut rng)).collect();
        Self::new(kind, x, y, theta0)
    }

    pub fn kind(&self) -> ToyKind {
        self.kind
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    pub fn with_theta0(mut self, theta0: Vec<f64>) -> Result<Self> {
        if theta0.len() != self.n_params() {
            return Err(GrsdError::DimensionMismatch("theta0 length".into()));
        }
        self.theta0 = theta0;
        Ok(self)
    }

    /// Same model with loss `α·L`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let mut m = self.clone();
        m.loss_scale = self.loss_scale * alpha;
        m
    }

    fn d_in(&self) -> usize {
        self.x.cols()
    }

    fn d_out(&self) -> usize {
        self.y.cols()
    }

    fn n_samples(&self) -> usize {
        self.x.rows()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        let (d, o) = (self.d_in(), self.d_out());
        match self.kind {
            ToyKind::LinearRegression => vec![o * d],
            ToyKind::TwoLayerLinear { hidden } | ToyKind::ShallowTanh { hidden } => {
                vec![hidden * d, o * hidden]
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.block_dims().iter().sum()
    }

    /// Outputs `f(x_i)_o` at index `i·d_out + o`.
    pub fn predict(&self, theta: &[f64]) -> Vec<f64> {
        let (d, o, n) = (self.d_in(), self.d_out(), self.n_samples());
        let mut out = vec![0.0; n * o];
        match self.kind {
            ToyKind::LinearRegression => {
                for i in 0..n {
                    let xi = self.x.row(i);
                    for k in 0..o {
                        out[i * o + k] = crate::spectral_core::dot(&theta[k * d..(k + 1) * d], xi);
                    }
                }
            }
            ToyKind::TwoLayerLinear { hidden } | ToyKind::ShallowTanh { hidden } => {
                let (w1, w2) = theta.split_at(hidden * d);
                let tanh = matches!(self.kind, ToyKind::ShallowTanh { .. });
                for i in 0..n {
                    let hid = self.hidden_activations(w1, hidden, i, tanh);
                    for k in 0..o {
                        out[i * o + k] = crate::spectral_core::dot(&w2[k * hidden..(k + 1) * hidden], &hid);
                    }
                }
            }
        }
        out
    }

    fn hidden_activations(&self, w1: &[f64], hidden: usize, i: usize, tanh: bool) -> Vec<f64> {
        let d = self.d_in();
        let xi = self.x.row(i);
        (0..hidden)
            .map(|j| {
                let z = crate::spectral_core::dot(&w1[j * d..(j + 1) * d], xi);
                if tanh {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect()
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let f = self.predict(theta);
        let r2: f64 = f.iter().zip(self.y.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
        self.loss_scale * r2 / (2.0 * self.n_samples() as f64)
    }

    /// Output Jacobian `∂f/∂θ`, rows `i·d_out + o`, split into parameter blocks.
    pub fn jacobian(&self, theta: &[f64], time: f64) -> Result<BlockJacobian> {
        let (d, o, n) = (self.d_in(), self.d_out(), self.n_samples());
        let rows = n * o;
        let blocks = match self.kind {
            ToyKind::LinearRegression => {
                let mut j = DenseMatrix::zeros(rows, o * d);
                for i in 0..n {
                    let xi = self.x.row(i);
                    for k in 0..o {
                        for c in 0..d {
                            j[(i * o + k, k * d + c)] = xi[c];
                        }
                    }
                }
                vec![j]
            }
            ToyKind::TwoLayerLinear { hidden } | ToyKind::ShallowTanh { hidden } => {
                let tanh = matches!(self.kind, ToyKind::ShallowTanh { .. });
                let (w1, w2) = theta.split_at(hidden * d);
                let mut j1 = DenseMatrix::zeros(rows, hidden * d);
                let mut j2 = DenseMatrix::zeros(rows, o * hidden);
                for i in 0..n {
                    let xi = self.x.row(i);
                    let hid = self.hidden_activations(w1, hidden, i, tanh);
                    for k in 0..o {
                        let r = i * o + k;
                        for h in 0..hidden {
                            let gate = if tanh { 1.0 - hid[h] * hid[h] } else { 1.0 };
                            let coef = w2[k * hidden + h] * gate;
                            for c in 0..d {
                                j1[(r, h * d + c)] = coef * xi[c];
                            }
                            j2[(r, k * hidden + h)] = hid[h];
                        }
                    }
                }
                vec![j1, j2]
            }
        };
        BlockJacobian::new(blocks, time)
    }

    /// `∇(αL) = (α/N) Jᵀ (f − y)`.
    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let j = self.jacobian(theta, 0.0)?.concat();
        let f = self.predict(theta);
        let r: Vec<f64> = f.iter().zip(self.y.as_slice()).map(|(a, b)| a - b).collect();
        let s = self.loss_scale / self.n_samples() as f64;
        let mut g = vec![0.0; j.cols()];
        for (row, &ri) in r.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            for (gc, &jc) in g.iter_mut().zip(j.row(row)) {
                *gc += s * ri * jc;
            }
        }
        Ok(g)
    }
}

/// Sampled gradient-flow path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    losses: Vec<f64>,
    jacobians: Vec<BlockJacobian>,
    step: f64,
    method: Integrator,
    divergence: Option<f64>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn jacobians(&self) -> &[BlockJacobian] {
        &self.jacobians
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn method(&self) -> Integrator {
        self.method
    }

    pub fn divergence(&self) -> Option<f64> {
        self.divergence
    }

    /// Largest increase of the loss between consecutive samples.
    pub fn max_loss_increase(&self) -> f64 {
        self.losses.windows(2).fold(0.0, |m, w| m.max(w[1] - w[0]))
    }

    pub fn to_block_trajectory(&self, family: &str) -> Result<BlockTrajectory> {
        let rates = (0..self.len())
            .map(|i| jacobian_rate(self, i).ok())
            .collect();
        BlockTrajectory::new(family, self.jacobians.clone(), rates, self.divergence)
    }

    /// Columns `t, loss, jacobian_norm, jacobian_rate_norm`; the rate is `NaN` at endpoints.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,loss,jacobian_norm,jacobian_rate_norm")?;
        for i in 0..self.len() {
            let jn = self.jacobians[i].operator_norm()?;
            let rn = match jacobian_rate(self, i) {
                Ok(r) => r.operator_norm()?,
                Err(_) => f64::NAN,
            };
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(self.times[i]),
                fmt_f64(self.losses[i]),
                fmt_f64(jn),
                fmt_f64(rn)
            )?;
        }
        Ok(())
    }
}

fn step_state(model: &ToyModel, theta: &[f64], h: f64, method: Integrator, time: f64) -> Result<Vec<f64>> {
    let grad = |th: &[f64]| -> Result<Vec<f64>> {
        let g = model.gradient(th)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(GrsdError::NonFiniteGradient { time });
        }
        Ok(g)
    };
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - s * y).collect() };
    Ok(match method {
        Integrator::Euler => axpy(theta, h, &grad(theta)?),
        Integrator::Rk4 => {
            let k1 = grad(theta)?;
            let k2 = grad(&axpy(theta, 0.5 * h, &k1))?;
            let k3 = grad(&axpy(theta, 0.5 * h, &k2))?;
            let k4 = grad(&axpy(theta, h, &k3))?;
            theta
                .iter()
                .enumerate()
                .map(|(i, t)| t - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect()
        }
    })
}

fn n_steps(t_end: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && t_end >= 0.0 && t_end.is_finite()) {
        return Err(GrsdError::invalid("step", format!("h = {h}, T = {t_end}")));
    }
    Ok(((t_end / h) - 1e-9).ceil().max(0.0) as usize)
}

/// Integrates `θ̇ = −∇L` on `[0, t_end]` with step `h`, recording every
/// `sample_every`-th step and the final state.
///
/// The final step is shortened when `t_end/h` is not an integer. On a guard
/// trip (`‖θ‖ > 1e6` or a non-finite loss) the error carries the partial path.
pub fn integrate_gradient_flow(
    model: &ToyModel,
    t_end: f64,
    h: f64,
    method: Integrator,
    sample_every: usize,
) -> Result<Trajectory> {
    let steps = n_steps(t_end, h)?;
    let every = sample_every.max(1);
    let mut theta = model.theta0.clone();
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![theta.clone()],
        losses: vec![model.loss(&theta)],
        jacobians: vec![model.jacobian(&theta, 0.0)?],
        step: h,
        method,
        divergence: None,
    };
    let mut t = 0.0;
    for s in 1..=steps {
        let dt = if s == steps { t_end - (steps - 1) as f64 * h } else { h };
        theta = step_state(model, &theta, dt, method, t)?;
        t = if s == steps { t_end } else { s as f64 * h };
        let loss = model.loss(&theta);
        if !(norm2(&theta) <= DIVERGENCE_GUARD) || !loss.is_finite() {
            traj.divergence = Some(t);
            return Err(GrsdError::DivergedTrajectory {
                time: t,
                partial: Box::new(traj),
            });
        }
        if s % every == 0 || s == steps {
            traj.times.push(t);
            traj.jacobians.push(model.jacobian(&theta, t)?);
            traj.states.push(theta.clone());
            traj.losses.push(loss);
        }
    }
    Ok(traj)
}

/// Central difference `(J(t_{i+1}) − J(t_{i−1}))/(t_{i+1} − t_{i−1})` at an interior sample.
pub fn jacobian_rate(traj: &Trajectory, index: usize) -> Result<BlockJacobian> {
    if index == 0 || index + 1 >= traj.len() {
        return Err(GrsdError::BoundarySample { index });
    }
    let (a, b) = (&traj.jacobians[index - 1], &traj.jacobians[index + 1]);
    let dt = traj.times[index + 1] - traj.times[index - 1];
    Ok(b.combine(1.0 / dt, a, -1.0 / dt)?.with_time(traj.times[index]))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub alpha: f64,
    pub horizon: f64,
    pub step: f64,
    pub deviation: f64,
    pub compared: usize,
}

/// Compares `θ_α(t)` (flow of `αL`) with `θ(αt)` (flow of `L`) on `[0, t_end]`.
///
/// Both flows use step `h`; `θ(αt)` off the grid comes from cubic Hermite
/// interpolation with the exact slopes `−∇L`.
pub fn check_time_rescaling_covariance(
    model: &ToyModel,
    alpha: f64,
    t_end: f64,
    h: f64,
    method: Integrator,
) -> Result<CovarianceReport> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(GrsdError::invalid("alpha", format!("{alpha} is not positive")));
    }
    let fast = dense_flow(&model.scaled(alpha), t_end, h, method)?;
    let slow = dense_flow(model, alpha * t_end, h, method)?;
    let mut deviation: f64 = 0.0;
    for (i, theta_a) in fast.iter().enumerate() {
        let x = alpha * i as f64;
        let j = x.floor() as usize;
        let frac = x - j as f64;
        let reference = if frac < 1e-9 || j + 1 >= slow.len() {
            slow[j.min(slow.len() - 1)].clone()
        } else {
            hermite(model, &slow[j], &slow[j + 1], h, frac)?
        };
        let d = norm2(&theta_a.iter().zip(&reference).map(|(a, b)| a - b).collect::<Vec<_>>());
        deviation = deviation.max(d);
    }
    Ok(CovarianceReport {
        alpha,
        horizon: t_end,
        step: h,
        deviation,
        compared: fast.len(),
    })
}

fn dense_flow(model: &ToyModel, t_end: f64, h: f64, method: Integrator) -> Result<Vec<Vec<f64>>> {
    let steps = n_steps(t_end, h)?;
    let mut theta = model.theta0.clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(theta.clone());
    for s in 1..=steps {
        let dt = if s == steps { t_end - (steps - 1) as f64 * h } else { h };
        theta = step_state(model, &theta, dt, method, (s - 1) as f64 * h)?;
        if !(norm2(&theta) <= DIVERGENCE_GUARD) {
            return Err(GrsdError::DivergedTrajectory {
                time: s as f64 * h,
                partial: Box::new(Trajectory {
                    times: vec![],
                    states: vec![],
                    losses: vec![],
                    jacobians: vec![],
                    step: h,
                    method,
                    divergence: Some(s as f64 * h),
                }),
            });
        }
        out.push(theta.clone());
    }
    Ok(out)
}

fn hermite(model: &ToyModel, y0: &[f64], y1: &[f64], h: f64, s: f64) -> Result<Vec<f64>> {
    let m0 = model.gradient(y0)?;
    let m1 = model.gradient(y1)?;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    Ok((0..y0.len())
        .map(|i| h00 * y0[i] - h10 * h * m0[i] + h01 * y1[i] - h11 * h * m1[i])
        .collect())
}

/// `sup_t ‖J(t)‖` and `sup_t ‖J̇(t)‖` over the sampled path, using only
/// samples recorded before any divergence.
pub fn path_operator_norms(traj: &Trajectory) -> Result<(f64, f64)> {
    let mut sj: f64 = 0.0;
    let mut sr: f64 = 0.0;
    for i in 0..traj.len() {
        sj = sj.max(operator_norm(&traj.jacobians[i].concat())?);
        if let Ok(r) = jacobian_rate(traj, i) {
            sr = sr.max(operator_norm(&r.concat())?);
        }
    }
    Ok((sj, sr))
}
