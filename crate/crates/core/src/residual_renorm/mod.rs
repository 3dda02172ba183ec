//! Log-norm increments of deep residual products: CLT distance, mixing of the
//! direction chain, depth thresholds and dilution of per-layer couplings.

mod berry;
mod chain;
mod dilution;
mod mixing;
mod threshold;

pub use berry::{
    berry_esseen_distance, berry_esseen_sweep, ks_against_normal, log_log_slope, standard_normal_cdf, KsResult,
    MIN_ENSEMBLE,
};
pub use chain::{
    centered_sum, direction_chain_increments, ensemble_sums, run_direction_chain, EnsembleSpec, EnsembleSums,
    ResidualChainTrace, StartLaw, COLLAPSE_FLOOR,
};
pub use dilution::{depth_average_dilution, DilutionReport, LogShiftDepthSpec};
pub use mixing::{mixing_distances, mixing_time, MixingEstimate};
pub use threshold::{depth_threshold, DepthThreshold};
