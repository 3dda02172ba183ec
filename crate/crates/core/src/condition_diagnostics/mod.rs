//! Estimators for the four sufficient conditions and the envelope bounds.

mod banded;
mod families;
mod incoherence;
mod logshift;
mod path;
mod suite;

pub use banded::{bandedness_residual, range_profile, BandednessReport, RangeProfile, SPAN_RIDGE};
pub use families::{residual_trajectory, ssm_trajectory, ResidualReadout};
pub use incoherence::{
    envelope_at, gronwall_bound_check, incoherence_envelope, theoretical_c_rho, GronwallCheck, IncoherenceReport,
    DEFAULT_RHO_W, WEIGHT_CUTOFF,
};
pub use logshift::{
    log_bin_couplings, log_bin_cross_couplings, stationarity_error, CouplingOptions, EmptyBinPolicy, LogShiftReport,
    OmegaStats, LOW_POPULATION,
};
pub use path::{controlled_path_norms, PathNorms};
pub use suite::{
    condition_suite, BandednessSummary, ConditionDetails, ConditionReport, CouplingOperator, IncoherenceSummary,
    LogShiftSummary, PathSummary, SuiteConfig, Thresholds, REPORT_VERSION,
};
