use serde::{Deserialize, Serialize};

use crate::error::{GrsdError, Result};
use crate::rng::{derive_named, rng_from, standard_normal};
use crate::spectral_core::{operator_norm, DenseMatrix};

/// Layer-blocked Jacobian `J = [J⁽¹⁾ | … | J⁽ᴸ⁾]` at one training time.
///
/// Blocks are stored 0-based; block `l` here is layer `l + 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockJacobian {
    n_f: usize,
    blocks: Vec<DenseMatrix>,
    time: f64,
}

impl BlockJacobian {
    pub fn new(blocks: Vec<DenseMatrix>, time: f64) -> Result<Self> {
        let n_f = blocks
            .first()
            .ok_or_else(|| GrsdError::invalid("blocks", "at least one block required"))?
            .rows();
        if let Some(b) = blocks.iter().find(|b| b.rows() != n_f) {
            return Err(GrsdError::DimensionMismatch(format!(
                "block with {} rows among blocks with {n_f}",
                b.rows()
            )));
        }
        Ok(Self { n_f, blocks, time })
    }

    pub fn n_f(&self) -> usize {
        self.n_f
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn blocks(&self) -> &[DenseMatrix] {
        &self.blocks
    }

    pub fn block(&self, l: usize) -> &DenseMatrix {
        &self.blocks[l]
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(DenseMatrix::cols).collect()
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(DenseMatrix::cols).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_f == other.n_f && self.block_dims() == other.block_dims()
    }

    pub fn concat(&self) -> DenseMatrix {
        let parts: Vec<&DenseMatrix> = self.blocks.iter().collect();
        DenseMatrix::hcat(self.n_f, &parts).expect("rows agree")
    }

    /// `M = JJᵀ = Σ_l J⁽ˡ⁾J⁽ˡ⁾ᵀ`.
    pub fn function_gram(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n_f, self.n_f);
        for b in &self.blocks {
            m.add_assign_scaled(&b.outer_gram(), 1.0).expect("square");
        }
        m
    }

    /// `C_lm = J⁽ˡ⁾ᵀ J⁽ᵐ⁾`.
    pub fn cross_gram(&self, l: usize, m: usize) -> DenseMatrix {
        self.blocks[l].t_matmul(&self.blocks[m]).expect("rows agree")
    }

    pub fn operator_norm(&self) -> Result<f64> {
        operator_norm(&self.concat())
    }

    /// Blockwise `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(GrsdError::DimensionMismatch("block layouts differ".into()));
        }
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(x, y)| {
                let mut z = x.scale(a);
                z.add_assign_scaled(y, b).expect("same shape");
                z
            })
            .collect();
        Ok(Self {
            n_f: self.n_f,
            blocks,
            time: self.time,
        })
    }

    pub fn max_abs_difference(&self, other: &Self) -> Result<f64> {
        Ok(self.combine(1.0, other, -1.0)?.blocks.iter().fold(0.0, |m, b| m.max(b.max_abs())))
    }
}

/// Upper bounds `ε_k` on `‖J⁽ˡ⁾ᵀJ⁽ᵐ⁾‖` for `|l − m| = k ≥ 1`; zero beyond the stored tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncoherenceProfile {
    tail: Vec<f64>,
}

impl IncoherenceProfile {
    /// `tail[k − 1] = ε_k`.
    pub fn new(tail: Vec<f64>) -> Result<Self> {
        if tail.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(GrsdError::invalid("profile", "entries must be finite and non-negative"));
        }
        Ok(Self { tail })
    }

    pub fn zero() -> Self {
        Self { tail: Vec::new() }
    }

    /// `ε_k = eps1 · ratio^{k−1}` for `k ≤ kmax`.
    pub fn geometric(eps1: f64, ratio: f64, kmax: usize) -> Result<Self> {
        Self::new((0..kmax).map(|k| eps1 * ratio.powi(k as i32)).collect())
    }

    pub fn eps(&self, k: usize) -> f64 {
        if k == 0 {
            return f64::INFINITY;
        }
        self.tail.get(k - 1).copied().unwrap_or(0.0)
    }

    pub fn tail(&self) -> &[f64] {
        &self.tail
    }

    pub fn summable_bound(&self) -> f64 {
        self.tail.iter().sum()
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.tail.windows(2).all(|w| w[1] <= w[0])
    }
}

const PROFILE_SLACK: f64 = 0.1;

/// Random blocks whose cross-block Grams respect `profile` within 10% slack.
///
/// For `L ≥ 2` and `Σ d_l ≤ n_f` the blocks start from Haar-orthonormal
/// columns and are coupled through `J⁽ˡ⁾ = Q_l + β Σ_{m≠l} ε_{|l−m|} Q_m E_ml`,
/// with `E_ml` the truncated identity; `β` is reduced until every measured
/// cross-Gram norm satisfies the profile. A single block is plain Gaussian
/// with entry variance `1/n_f`.
pub fn make_incoherent_blocks(
    n_f: usize,
    block_dims: &[usize],
    profile: &IncoherenceProfile,
    seed: u64,
) -> Result<BlockJacobian> {
    let depth = block_dims.len();
    if depth == 0 || n_f == 0 || block_dims.contains(&0) {
        return Err(GrsdError::invalid("block_dims", "need non-empty blocks and n_f > 0"));
    }
    let mut rng = rng_from(derive_named(seed, "incoherent-blocks"));
    let total: usize = block_dims.iter().sum();
    if depth == 1 {
        let b = DenseMatrix::gaussian(n_f, block_dims[0], 1.0 / n_f as f64, &mut rng);
        return BlockJacobian::new(vec![b], 0.0);
    }
    if total > n_f {
        let variance = 1.0 / n_f as f64;
        let blocks: Vec<DenseMatrix> = block_dims
            .iter()
            .map(|&d| DenseMatrix::gaussian(n_f, d, variance, &mut rng))
            .collect();
        let bj = BlockJacobian::new(blocks, 0.0)?;
        return match profile_violation(&bj, profile)? {
            None => Ok(bj),
            Some((l, m, got)) => Err(GrsdError::InfeasibleProfile(format!(
                "{total} columns exceed n_f = {n_f}; blocks {l},{m} have cross norm {got:e} > {:e}",
                profile.eps(l.abs_diff(m))
            ))),
        };
    }

    let q = orthonormal_columns(n_f, total, &mut rng);
    let offsets: Vec<usize> = block_dims
        .iter()
        .scan(0, |acc, &d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();

    let build = |beta: f64| -> BlockJacobian {
        let blocks = (0..depth)
            .map(|l| {
                let dl = block_dims[l];
                let mut b = q.column_block(offsets[l], dl);
                if beta > 0.0 {
                    for m in 0..depth {
                        let w = beta * profile.eps(l.abs_diff(m));
                        if m == l || w == 0.0 {
                            continue;
                        }
                        for c in 0..dl.min(block_dims[m]) {
                            for r in 0..n_f {
                                b[(r, c)] += w * q[(r, offsets[m] + c)];
                            }
                        }
                    }
                }
                b
            })
            .collect();
        BlockJacobian::new(blocks, 0.0).expect("consistent rows")
    };

    let mut beta = 0.45;
    for _ in 0..40 {
        let bj = build(beta);
        if profile_violation(&bj, profile)?.is_none() {
            return Ok(bj);
        }
        beta *= 0.6;
    }
    Ok(build(0.0))
}

fn profile_violation(
    bj: &BlockJacobian,
    profile: &IncoherenceProfile,
) -> Result<Option<(usize, usize, f64)>> {
    let depth = bj.depth();
    for l in 0..depth {
        for m in (l + 1)..depth {
            let got = operator_norm(&bj.cross_gram(l, m))?;
            let allowed = profile.eps(m - l) * (1.0 + PROFILE_SLACK) + 1e-12;
            if got > allowed {
                return Ok(Some((l, m, got)));
            }
        }
    }
    Ok(None)
}

/// `n x k` matrix with orthonormal columns from Gram-Schmidt on a Gaussian draw.
pub(crate) fn orthonormal_columns(n: usize, k: usize, rng: &mut crate::rng::Rng) -> DenseMatrix {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
        let norm = crate::spectral_core::orthogonal_residual(&mut v, &basis);
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    DenseMatrix::from_fn(n, k, |r, c| basis[c][r])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_profile_gives_orthogonal_blocks() {
        let bj = make_incoherent_blocks(12, &[3, 3, 3, 3], &IncoherenceProfile::zero(), 1).unwrap();
        for l in 0..4 {
            for m in (l + 1)..4 {
                assert!(bj.cross_gram(l, m).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn geometric_profile_is_respected() {
        let profile = IncoherenceProfile::geometric(0.5, 0.5, 5).unwrap();
        let bj = make_incoherent_blocks(40, &[4; 6], &profile, 9).unwrap();
        assert!(profile_violation(&bj, &profile).unwrap().is_none());
        // The coupling is actually engaged, not collapsed to zero.
        assert!(operator_norm(&bj.cross_gram(0, 1)).unwrap() > 1e-3);
    }

    #[test]
    fn single_block_is_unconstrained_gaussian() {
        let bj = make_incoherent_blocks(5, &[3], &IncoherenceProfile::zero(), 2).unwrap();
        assert_eq!(bj.depth(), 1);
        assert!(bj.block(0).max_abs() > 0.0);
    }

    #[test]
    fn oversubscribed_blocks_with_tight_profile_are_infeasible() {
        let r = make_incoherent_blocks(4, &[4, 4], &IncoherenceProfile::zero(), 3);
        assert!(matches!(r, Err(GrsdError::InfeasibleProfile(_))));
    }

    #[test]
    fn function_gram_matches_concatenation() {
        let profile = IncoherenceProfile::geometric(0.3, 0.5, 3).unwrap();
        let bj = make_incoherent_blocks(10, &[2, 3, 1], &profile, 4).unwrap();
        let j = bj.concat();
        let d = bj.function_gram().sub(&j.outer_gram()).unwrap().max_abs();
        assert!(d < 1e-13);
    }
}
