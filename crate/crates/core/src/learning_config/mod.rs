//! Layer-blocked Jacobian configurations: generic incoherent blocks, residual
//! stacks, unrolled linear recurrences and exactly banded block dynamics.

mod banded;
mod blocks;
mod residual;
mod ssm;

pub use banded::{BandedEvolution, BlockTrajectory};
pub use blocks::{make_incoherent_blocks, BlockJacobian, IncoherenceProfile};
pub use residual::{
    assemble_additive_m, residual_layer_jacobian, residual_layer_jacobian_rates,
    residual_layer_jacobians, BranchLaw, ResidualStack,
};
pub use ssm::{
    unroll_ssm_jacobian, unroll_ssm_jacobian_rate, unroll_ssm_jacobian_unchecked, SsmSpec,
    StableSsm, TransitionKind,
};
