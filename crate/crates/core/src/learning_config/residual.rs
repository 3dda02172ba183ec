use serde::{Deserialize, Serialize};

use crate::error::{GrsdError, Result};
use crate::rng::{derive_named, derive_seed, rng_from, standard_normal};
use crate::spectral_core::{operator_norm, DenseMatrix};

/// Distribution of the residual branch operators `G_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BranchLaw {
    /// i.i.d. entries `N(0, variance)`.
    Gaussian { variance: f64 },
    /// `G_k = g·I`.
    ScaledIdentity(f64),
    /// `G_k = ±I` with a fair random sign.
    RademacherIdentity,
    /// Fixed operators; the stack depth is their count.
    Explicit(Vec<DenseMatrix>),
}

/// Residual stack with propagators `A_k = I + ε G_k(t)`, `G_k(t) = G_k + t Ġ_k`.
///
/// Branch operators are regenerated on demand from `derive_seed(seed, k)`, so a
/// stack is a prefix of any deeper stack with the same seed. Any `G_k(t)`
/// whose operator norm exceeds `g_max` is rescaled onto that bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualStack {
    width: usize,
    depth: usize,
    epsilon: f64,
    g_max: f64,
    seed: u64,
    law: BranchLaw,
    drift: f64,
    time: f64,
}

impl ResidualStack {
    pub fn new(width: usize, depth: usize, epsilon: f64, law: BranchLaw, seed: u64) -> Result<Self> {
        if width == 0 || depth == 0 {
            return Err(GrsdError::invalid("stack", "width and depth must be positive"));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(GrsdError::invalid("epsilon", format!("{epsilon} is negative or not finite")));
        }
        match &law {
            BranchLaw::Gaussian { variance } if !(*variance > 0.0) => {
                return Err(GrsdError::invalid("variance", "must be positive"))
            }
            BranchLaw::Explicit(g) => {
                if g.len() != depth {
                    return Err(GrsdError::DimensionMismatch(format!(
                        "{} explicit branches for depth {depth}",
                        g.len()
                    )));
                }
                if g.iter().any(|m| m.shape() != (width, width)) {
                    return Err(GrsdError::DimensionMismatch("explicit branch shape".into()));
                }
            }
            _ => {}
        }
        Ok(Self {
            width,
            depth,
            epsilon,
            g_max: 4.0,
            seed,
            law,
            drift: 0.0,
            time: 0.0,
        })
    }

    /// Gaussian branches with entry variance `1/n`.
    pub fn gaussian(width: usize, depth: usize, epsilon: f64, seed: u64) -> Result<Self> {
        Self::new(
            width,
            depth,
            epsilon,
            BranchLaw::Gaussian {
                variance: 1.0 / width as f64,
            },
            seed,
        )
    }

    pub fn with_g_max(mut self, g_max: f64) -> Result<Self> {
        if !(g_max > 0.0) {
            return Err(GrsdError::invalid("g_max", "must be positive"));
        }
        self.g_max = g_max;
        Ok(self)
    }

    /// Training drift `Ġ_k` with entry variance `drift²/n`.
    pub fn with_drift(mut self, drift: f64) -> Self {
        self.drift = drift;
        self
    }

    pub fn at_time(&self, time: f64) -> Self {
        let mut s = self.clone();
        s.time = time;
        s
    }

    pub fn with_depth(&self, depth: usize) -> Result<Self> {
        if matches!(self.law, BranchLaw::Explicit(_)) {
            return Err(GrsdError::invalid("depth", "explicit stacks have fixed depth"));
        }
        let mut s = self.clone();
        s.depth = depth;
        Ok(s)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn law(&self) -> &BranchLaw {
        &self.law
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Writes `G_k` (row-major, `k` 1-based) into `buf`.
    pub fn fill_branch(&self, k: usize, buf: &mut [f64]) {
        let n = self.width;
        debug_assert_eq!(buf.len(), n * n);
        match &self.law {
            BranchLaw::Gaussian { variance } => {
                let sd = variance.sqrt();
                let mut rng = rng_from(derive_seed(self.seed, k as u64));
                for x in buf.iter_mut() {
                    *x = sd * standard_normal(&mut rng);
                }
            }
            BranchLaw::ScaledIdentity(g) => identity_into(buf, n, *g),
            BranchLaw::RademacherIdentity => {
                let mut rng = rng_from(derive_seed(self.seed, k as u64));
                let g = if rand::Rng::random::<bool>(&mut rng) { 1.0 } else { -1.0 };
                identity_into(buf, n, g);
            }
            BranchLaw::Explicit(g) => buf.copy_from_slice(g[k - 1].as_slice()),
        }
        if self.drift != 0.0 && self.time != 0.0 {
            let sd = self.drift / (n as f64).sqrt() * self.time;
            let mut rng = rng_from(derive_seed(derive_named(self.seed, "drift"), k as u64));
            for x in buf.iter_mut() {
                *x += sd * standard_normal(&mut rng);
            }
        }
        let frob2: f64 = buf.iter().map(|x| x * x).sum();
        if frob2 > self.g_max * self.g_max {
            let m = DenseMatrix::new(n, n, buf.to_vec()).expect("finite");
            let op = operator_norm(&m).expect("small dense matrix");
            if op > self.g_max {
                let s = self.g_max / op;
                buf.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    /// `G_k`, 1-based.
    pub fn branch(&self, k: usize) -> DenseMatrix {
        let mut buf = vec![0.0; self.width * self.width];
        self.fill_branch(k, &mut buf);
        DenseMatrix::new(self.width, self.width, buf).expect("finite")
    }

    /// `A_k = I + ε G_k`, 1-based.
    pub fn propagator(&self, k: usize) -> DenseMatrix {
        let mut a = self.branch(k).scale(self.epsilon);
        for i in 0..self.width {
            a[(i, i)] += 1.0;
        }
        a
    }

    /// `d/dt A_k = ε Ġ_k`, ignoring the `g_max` projection.
    pub fn propagator_rate(&self, k: usize) -> DenseMatrix {
        let n = self.width;
        if self.drift == 0.0 {
            return DenseMatrix::zeros(n, n);
        }
        let sd = self.drift / (n as f64).sqrt();
        let mut rng = rng_from(derive_seed(derive_named(self.seed, "drift"), k as u64));
        DenseMatrix::from_fn(n, n, |_, _| self.epsilon * sd * standard_normal(&mut rng))
    }
}

fn identity_into(buf: &mut [f64], n: usize, g: f64) {
    buf.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..n {
        buf[i * n + i] = g;
    }
}

/// `J⁽ˡ⁾ = loss_grad · A_{L−1} ⋯ A_{ℓ+1} · branch_jac` for `ℓ ∈ 1..=L`.
///
/// The final propagator is taken to be part of `loss_grad`; for `ℓ ≥ L − 1`
/// the product is empty.
pub fn residual_layer_jacobian(
    stack: &ResidualStack,
    ell: usize,
    loss_grad: &DenseMatrix,
    branch_jac: &DenseMatrix,
) -> Result<DenseMatrix> {
    let depth = stack.depth();
    if ell == 0 || ell > depth {
        return Err(GrsdError::IndexOutOfRange {
            index: ell,
            max: depth,
        });
    }
    check_shapes(stack, loss_grad, branch_jac)?;
    let mut x = branch_jac.clone();
    for k in (ell + 1)..depth {
        x = stack.propagator(k).matmul(&x)?;
    }
    loss_grad.matmul(&x)
}

/// All layer Jacobians by suffix accumulation of `loss_grad · A_{L−1} ⋯`.
pub fn residual_layer_jacobians(
    stack: &ResidualStack,
    loss_grad: &DenseMatrix,
    branch_jacs: &[DenseMatrix],
) -> Result<Vec<DenseMatrix>> {
    let depth = stack.depth();
    if branch_jacs.len() != depth {
        return Err(GrsdError::DimensionMismatch(format!(
            "{} branch Jacobians for depth {depth}",
            branch_jacs.len()
        )));
    }
    for b in branch_jacs {
        check_shapes(stack, loss_grad, b)?;
    }
    let mut out = vec![DenseMatrix::zeros(0, 0); depth];
    let mut r = loss_grad.clone();
    for ell in (1..=depth).rev() {
        if ell + 2 <= depth {
            r = r.matmul(&stack.propagator(ell + 1))?;
        }
        out[ell - 1] = r.matmul(&branch_jacs[ell - 1])?;
    }
    Ok(out)
}

/// Exact training-time derivative of every layer Jacobian under the stack drift.
pub fn residual_layer_jacobian_rates(
    stack: &ResidualStack,
    loss_grad: &DenseMatrix,
    branch_jacs: &[DenseMatrix],
) -> Result<Vec<DenseMatrix>> {
    let depth = stack.depth();
    if branch_jacs.len() != depth {
        return Err(GrsdError::DimensionMismatch(format!(
            "{} branch Jacobians for depth {depth}",
            branch_jacs.len()
        )));
    }
    // R_ℓ = g A_{L−1}⋯A_{ℓ+1} and its derivative, accumulated from the top.
    let n = stack.width();
    let mut out = vec![DenseMatrix::zeros(0, 0); depth];
    let mut r = loss_grad.clone();
    let mut rdot = DenseMatrix::zeros(loss_grad.rows(), n);
    for ell in (1..=depth).rev() {
        if ell + 2 <= depth {
            let a = stack.propagator(ell + 1);
            let adot = stack.propagator_rate(ell + 1);
            let next_rdot = rdot.matmul(&a)?.add(&r.matmul(&adot)?)?;
            r = r.matmul(&a)?;
            rdot = next_rdot;
        }
        out[ell - 1] = rdot.matmul(&branch_jacs[ell - 1])?;
    }
    Ok(out)
}

fn check_shapes(stack: &ResidualStack, loss_grad: &DenseMatrix, branch_jac: &DenseMatrix) -> Result<()> {
    let n = stack.width();
    if loss_grad.cols() != n || branch_jac.rows() != n {
        return Err(GrsdError::DimensionMismatch(format!(
            "loss_grad {:?} and branch_jac {:?} against width {n}",
            loss_grad.shape(),
            branch_jac.shape()
        )));
    }
    Ok(())
}

/// `M = Σ_ℓ J⁽ˡ⁾ J⁽ˡ⁾ᵀ`.
pub fn assemble_additive_m(layer_jacobians: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = layer_jacobians
        .first()
        .ok_or_else(|| GrsdError::invalid("layer_jacobians", "empty"))?;
    let n_f = first.rows();
    let mut m = DenseMatrix::zeros(n_f, n_f);
    for j in layer_jacobians {
        if j.rows() != n_f {
            return Err(GrsdError::DimensionMismatch(format!(
                "layer Jacobian with {} rows, expected {n_f}",
                j.rows()
            )));
        }
        m.add_assign_scaled(&j.outer_gram(), 1.0)?;
    }
    Ok(m)
}
