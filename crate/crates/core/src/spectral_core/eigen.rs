use serde::{Deserialize, Serialize};

use super::matrix::{dot, DenseMatrix};
use crate::error::{GrsdError, Result};

const MAX_SWEEP_FACTOR: usize = 1000;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors as columns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymmetricEigenSystem {
    eigenvalues: Vec<f64>,
    eigenvectors: DenseMatrix,
}

impl SymmetricEigenSystem {
    /// Builds a system from known eigenpairs; `tol` bounds `max|ΦᵀΦ − I|`.
    pub fn from_parts(eigenvalues: Vec<f64>, eigenvectors: DenseMatrix, tol: f64) -> Result<Self> {
        let n = eigenvalues.len();
        if eigenvectors.shape() != (n, n) {
            return Err(GrsdError::DimensionMismatch(format!(
                "{} eigenvalues with a {:?} basis",
                n,
                eigenvectors.shape()
            )));
        }
        if eigenvalues.windows(2).any(|w| w[0] > w[1]) {
            return Err(GrsdError::invalid("eigenvalues", "must be ascending"));
        }
        let defect = eigenvectors
            .gram()
            .sub(&DenseMatrix::identity(n))
            .expect("square")
            .max_abs();
        if defect > tol {
            return Err(GrsdError::invalid(
                "eigenvectors",
                format!("orthonormality defect {defect:e} exceeds {tol:e}"),
            ));
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    /// Diagonal operator in the standard basis.
    pub fn diagonal(eigenvalues: Vec<f64>) -> Result<Self> {
        let n = eigenvalues.len();
        Self::from_parts(eigenvalues, DenseMatrix::identity(n), 0.0)
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DenseMatrix {
        &self.eigenvectors
    }

    pub fn eigenvector(&self, u: usize) -> Vec<f64> {
        self.eigenvectors.column(u)
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// Eigenvalues clamped at zero, for PSD inputs carrying rounding noise.
    pub fn clamped_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|&l| l.max(0.0)).collect()
    }

    /// Default retention floor `1e-12 · λ_max`.
    pub fn default_floor(&self) -> f64 {
        1e-12 * self.lambda_max().max(0.0)
    }

    /// Coefficients `⟨φ_u, e⟩` for every mode.
    pub fn coefficients(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.len() {
            return Err(GrsdError::DimensionMismatch(format!(
                "vector of length {} against {} modes",
                e.len(),
                self.len()
            )));
        }
        let phi = &self.eigenvectors;
        let mut out = vec![0.0; self.len()];
        for (r, &er) in e.iter().enumerate() {
            if er == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(phi.row(r)) {
                *o += p * er;
            }
        }
        Ok(out)
    }

    /// `Φ diag(λ) Φᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.len();
        let phi = &self.eigenvectors;
        let scaled = DenseMatrix::from_fn(n, n, |r, c| phi[(r, c)] * self.eigenvalues[c]);
        scaled.matmul_t(phi).expect("square")
    }

    /// `Φ_Sᵀ A Φ_S` for the modes listed in `modes`.
    pub fn project_operator(&self, a: &DenseMatrix, modes: &[usize]) -> Result<DenseMatrix> {
        let n = self.len();
        if a.shape() != (n, n) {
            return Err(GrsdError::DimensionMismatch(format!(
                "operator {:?} against {} modes",
                a.shape(),
                n
            )));
        }
        let phi_s = DenseMatrix::from_fn(n, modes.len(), |r, c| self.eigenvectors[(r, modes[c])]);
        let a_phi = a.matmul(&phi_s)?;
        phi_s.t_matmul(&a_phi)
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// The input is accepted when `max|m_ij − m_ji| ≤ tol · max|m|` and is
/// symmetrized before factoring. Each eigenvector is signed so that its
/// largest-magnitude component is positive.
pub fn symmetric_eigendecompose(m: &DenseMatrix, tol: f64) -> Result<SymmetricEigenSystem> {
    if !m.is_square() {
        return Err(GrsdError::NonSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let n = m.rows();
    let scale = m.max_abs();
    let asym = m.max_asymmetry();
    if asym > tol * scale {
        return Err(GrsdError::AsymmetryExceedsTol {
            asymmetry: asym,
            tol: tol * scale,
        });
    }
    if n == 0 {
        return Ok(SymmetricEigenSystem {
            eigenvalues: Vec::new(),
            eigenvectors: DenseMatrix::zeros(0, 0),
        });
    }
    let sym = m.symmetrized().to_nalgebra();
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, MAX_SWEEP_FACTOR * n)
        .ok_or(GrsdError::NoConvergence)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (c, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..n {
            if col[r].abs() > col[pivot].abs() + 1e-14 {
                pivot = r;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, c)] = sign * col[r];
        }
    }
    Ok(SymmetricEigenSystem {
        eigenvalues,
        eigenvectors: vectors,
    })
}

/// Largest singular value.
pub fn operator_norm(m: &DenseMatrix) -> Result<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(0.0);
    }
    if r == 1 || c == 1 {
        return Ok(m.frobenius_norm());
    }
    let g = if c <= r { m.gram() } else { m.outer_gram() };
    let n = g.rows();
    let top = nalgebra::SymmetricEigen::try_new(g.to_nalgebra(), f64::EPSILON, MAX_SWEEP_FACTOR * n)
        .ok_or(GrsdError::NoConvergence)?
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b));
    Ok(top.sqrt())
}

/// `‖v‖` of the component of `v` orthogonal to the orthonormal columns in `basis`.
pub(crate) fn orthogonal_residual(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    // Two passes of classical Gram-Schmidt keep the residual orthogonal to rounding level.
    for _ in 0..2 {
        for q in basis {
            let p = dot(q, v);
            for (x, &qq) in v.iter_mut().zip(q) {
                *x -= p * qq;
            }
        }
    }
    dot(v, v).sqrt()
}
