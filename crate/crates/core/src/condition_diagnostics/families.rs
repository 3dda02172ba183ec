//! Sampled Jacobian trajectories for the generator families.

use crate::error::{GrsdError, Result};
use crate::learning_config::{
    residual_layer_jacobian_rates, residual_layer_jacobians, unroll_ssm_jacobian_rate, unroll_ssm_jacobian_unchecked,
    BlockJacobian, BlockTrajectory, ResidualStack, StableSsm,
};
use crate::rng::{derive_named, derive_seed, rng_from};
use crate::spectral_core::DenseMatrix;

/// Readout `n_f × n` and per-layer branch Jacobians `n × p` shared by every
/// sample of a residual trajectory.
#[derive(Clone, Debug)]
pub struct ResidualReadout {
    pub loss_grad: DenseMatrix,
    pub branch_jacs: Vec<DenseMatrix>,
}

impl ResidualReadout {
    /// Gaussian readout with entry variances `1/(nL)` and `1/p`, so that
    /// `M = Σ_ℓ J⁽ˡ⁾J⁽ˡ⁾ᵀ` is a depth average.
    pub fn gaussian(stack: &ResidualStack, n_f: usize, p: usize) -> Self {
        let n = stack.width();
        let mut rng = rng_from(derive_named(stack.seed(), "loss_grad"));
        let var = 1.0 / (n * stack.depth()) as f64;
        let loss_grad = DenseMatrix::gaussian(n_f, n, var, &mut rng);
        let base = derive_named(stack.seed(), "branch_jac");
        let branch_jacs = (1..=stack.depth())
            .map(|l| DenseMatrix::gaussian(n, p, 1.0 / p as f64, &mut rng_from(derive_seed(base, l as u64))))
            .collect();
        Self { loss_grad, branch_jacs }
    }
}

/// Layer Jacobians of a drifting residual stack at `times`, with exact rates.
pub fn residual_trajectory(stack: &ResidualStack, readout: &ResidualReadout, times: &[f64]) -> Result<BlockTrajectory> {
    let mut samples = Vec::with_capacity(times.len());
    let mut rates = Vec::with_capacity(times.len());
    for &t in times {
        let s = stack.at_time(t);
        let j = residual_layer_jacobians(&s, &readout.loss_grad, &readout.branch_jacs)?;
        let r = residual_layer_jacobian_rates(&s, &readout.loss_grad, &readout.branch_jacs)?;
        samples.push(BlockJacobian::new(j, t)?);
        rates.push(Some(BlockJacobian::new(r, t)?));
    }
    BlockTrajectory::new("residual", samples, rates, None)
}

/// Unrolled recurrence at `times` along its linear drift, with exact rates.
///
/// Stability is not re-checked, so unstable recurrences can be sampled.
pub fn ssm_trajectory(ssm: &StableSsm, window: usize, times: &[f64]) -> Result<BlockTrajectory> {
    let t0 = *times.first().ok_or_else(|| GrsdError::invalid("times", "empty"))?;
    let mut samples = Vec::with_capacity(times.len());
    let mut rates = Vec::with_capacity(times.len());
    for &t in times {
        let s = ssm.evolved(t - t0);
        samples.push(unroll_ssm_jacobian_unchecked(&s, window)?.with_time(t));
        rates.push(Some(unroll_ssm_jacobian_rate(&s, window)?.with_time(t)));
    }
    BlockTrajectory::new("ssm", samples, rates, None)
}
