//! Dense matrices, symmetric eigensystems and log-spectral bins.

mod bins;
mod eigen;
mod matrix;

pub use bins::{assign_log_bins, BinAssignment, LogBinGrid, DEFAULT_EDGE_MARGIN};
pub use eigen::{operator_norm, symmetric_eigendecompose, SymmetricEigenSystem};
pub(crate) use eigen::orthogonal_residual;
pub use matrix::{dot, fmt_f64, norm2, DenseMatrix};
