use serde::{Deserialize, Serialize};

use crate::error::{GrsdError, Result};
use crate::learning_config::BlockJacobian;
use crate::spectral_core::{dot, operator_norm, orthogonal_residual, symmetric_eigendecompose, DenseMatrix};

/// Relative ridge added to the normal equations of the span projection.
pub const SPAN_RIDGE: f64 = 1e-12;

/// Projection of each `J̇⁽ˡ⁾` onto the column span of its neighbours `|p − l| ≤ K`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandednessReport {
    pub bandwidth: usize,
    /// `r_l(K) = ‖J̇⁽ˡ⁾ − P_K J̇⁽ˡ⁾‖_F / ‖J̇⁽ˡ⁾‖_F`, zero when `J̇⁽ˡ⁾ = 0`.
    pub residuals: Vec<f64>,
    /// Fitted `A_pl` for every `l`, as `(p, A_pl)`.
    pub coefficients: Vec<Vec<(usize, DenseMatrix)>>,
    /// `max_l Σ_p ‖A_pl‖`.
    pub c_a: f64,
    /// Set when some neighbourhood Gram matrix is numerically singular.
    pub rank_deficient: bool,
}

impl BandednessReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }
}

/// Least-squares fit `J̇⁽ˡ⁾ ≈ Σ_{|p−l|≤K} J⁽ᵖ⁾ A_pl` for every layer.
pub fn bandedness_residual(blocks: &BlockJacobian, rates: &BlockJacobian, k: usize) -> Result<BandednessReport> {
    if !blocks.same_shape(rates) {
        return Err(GrsdError::DimensionMismatch("blocks and rates differ in layout".into()));
    }
    let depth = blocks.depth();
    let dims = blocks.block_dims();
    let mut residuals = Vec::with_capacity(depth);
    let mut coefficients = Vec::with_capacity(depth);
    let mut c_a: f64 = 0.0;
    let mut rank_deficient = false;
    for l in 0..depth {
        let lo = l.saturating_sub(k);
        let hi = (l + k).min(depth - 1);
        let parts: Vec<&DenseMatrix> = (lo..=hi).map(|p| blocks.block(p)).collect();
        let n = DenseMatrix::hcat(blocks.n_f(), &parts)?;
        let target = rates.block(l);
        let wide = n.cols() > n.rows();
        // (NᵀN + rI)⁻¹Nᵀ = Nᵀ(NNᵀ + rI)⁻¹; factor whichever Gram is smaller.
        let g = if wide { n.outer_gram() } else { n.gram() };
        let eig = symmetric_eigendecompose(&g, 1e-10)?;
        let lmax = eig.lambda_max().max(0.0);
        let ridge = SPAN_RIDGE * lmax.max(f64::MIN_POSITIVE);
        let lmin = eig.eigenvalues().first().copied().unwrap_or(0.0);
        rank_deficient |= wide || lmin < 1e-10 * lmax;
        let rhs = if wide { target.clone() } else { n.t_matmul(target)? };
        let v = eig.eigenvectors();
        let mut w = v.t_matmul(&rhs)?;
        for (i, &lam) in eig.eigenvalues().iter().enumerate() {
            let s = 1.0 / (lam.max(0.0) + ridge);
            for c in 0..w.cols() {
                w[(i, c)] *= s;
            }
        }
        let a = if wide { n.t_matmul(&v.matmul(&w)?)? } else { v.matmul(&w)? };
        let fitted = n.matmul(&a)?;
        let tn = target.frobenius_norm();
        let rn = target.sub(&fitted)?.frobenius_norm();
        residuals.push(if tn > 0.0 { rn / tn } else { 0.0 });

        let mut row = Vec::with_capacity(hi - lo + 1);
        let mut off = 0;
        let mut total = 0.0;
        for p in lo..=hi {
            let apl = DenseMatrix::from_fn(dims[p], dims[l], |r, c| a[(off + r, c)]);
            off += dims[p];
            total += operator_norm(&apl)?;
            row.push((p, apl));
        }
        c_a = c_a.max(total);
        coefficients.push(row);
    }
    Ok(BandednessReport {
        bandwidth: k,
        residuals,
        coefficients,
        c_a,
        rank_deficient,
    })
}

/// Bandedness residual as a function of `K` for a set of layers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RangeProfile {
    pub layers: Vec<usize>,
    /// `per_layer[i][K] = r_{layers[i]}(K)`.
    pub per_layer: Vec<Vec<f64>>,
    /// `sqrt(Σ_l ‖J̇⁽ˡ⁾ − P_K J̇⁽ˡ⁾‖² / Σ_l ‖J̇⁽ˡ⁾‖²)` per `K`.
    pub aggregate: Vec<f64>,
}

impl RangeProfile {
    pub fn k_max(&self) -> usize {
        self.aggregate.len() - 1
    }

    /// Smallest `K` with aggregate residual at most `delta`.
    pub fn effective_range(&self, delta: f64) -> Option<usize> {
        self.aggregate.iter().position(|&r| r <= delta)
    }

    /// Largest per-layer residual at bandwidth `k`.
    pub fn max_at(&self, k: usize) -> f64 {
        self.per_layer.iter().map(|r| r[k]).fold(0.0, f64::max)
    }

    /// Slope of `−ln r(K)` against `K` over aggregate residuals in `[lo, hi]`.
    pub fn decay_rate(&self, lo: f64, hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .aggregate
            .iter()
            .enumerate()
            .filter(|(_, &r)| r >= lo && r <= hi && r > 0.0)
            .map(|(k, &r)| (k as f64, r.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        (sxx > 0.0).then(|| -sxy / sxx)
    }
}

/// `r_l(K)` for `K = 0..=k_max` by growing an orthonormal basis of the
/// neighbourhood one block pair at a time.
///
/// `layers` defaults to every layer.
pub fn range_profile(
    blocks: &BlockJacobian,
    rates: &BlockJacobian,
    k_max: usize,
    layers: Option<&[usize]>,
) -> Result<RangeProfile> {
    if !blocks.same_shape(rates) {
        return Err(GrsdError::DimensionMismatch("blocks and rates differ in layout".into()));
    }
    let depth = blocks.depth();
    let n_f = blocks.n_f();
    let layers: Vec<usize> = match layers {
        Some(ls) => {
            if let Some(&bad) = ls.iter().find(|&&l| l >= depth) {
                return Err(GrsdError::IndexOutOfRange {
                    index: bad + 1,
                    max: depth,
                });
            }
            ls.to_vec()
        }
        None => (0..depth).collect(),
    };
    let columns = |m: &DenseMatrix| -> Vec<Vec<f64>> { (0..m.cols()).map(|c| m.column(c)).collect() };
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut res_sq = vec![0.0; k_max + 1];
    let mut total_sq = 0.0;
    for &l in &layers {
        let mut residual = columns(rates.block(l));
        let norm_sq: f64 = residual.iter().map(|c| dot(c, c)).sum();
        total_sq += norm_sq;
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut profile = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            if basis.len() >= n_f {
                let last = *profile.last().expect("K = 0 always adds a block");
                res_sq[k] += last * last * norm_sq;
                profile.push(last);
                continue;
            }
            let mut new_blocks = Vec::new();
            if k == 0 {
                new_blocks.push(l);
            } else {
                if l >= k {
                    new_blocks.push(l - k);
                }
                if l + k < depth {
                    new_blocks.push(l + k);
                }
            }
            for p in new_blocks {
                for mut col in columns(blocks.block(p)) {
                    if basis.len() >= n_f {
                        break;
                    }
                    let scale = dot(&col, &col).sqrt();
                    let norm = orthogonal_residual(&mut col, &basis);
                    if norm <= 1e-10 * scale || norm == 0.0 {
                        continue;
                    }
                    col.iter_mut().for_each(|x| *x /= norm);
                    for r in residual.iter_mut() {
                        let p = dot(&col, r);
                        for (x, &q) in r.iter_mut().zip(&col) {
                            *x -= p * q;
                        }
                    }
                    basis.push(col);
                }
            }
            let rsq: f64 = residual.iter().map(|c| dot(c, c)).sum();
            res_sq[k] += rsq;
            profile.push(if norm_sq > 0.0 { (rsq / norm_sq).sqrt() } else { 0.0 });
        }
        per_layer.push(profile);
    }
    let aggregate = res_sq
        .iter()
        .map(|&r| if total_sq > 0.0 { (r / total_sq).sqrt() } else { 0.0 })
        .collect();
    Ok(RangeProfile {
        layers,
        per_layer,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning_config::{make_incoherent_blocks, BandedEvolution, IncoherenceProfile};

    #[test]
    fn exactly_banded_rates_have_zero_residual() {
        let init = make_incoherent_blocks(30, &[3; 6], &IncoherenceProfile::zero(), 1).unwrap();
        let ev = BandedEvolution::random(&[3; 6], 1, 0.8, 2).unwrap();
        let rates = ev.rate(&init).unwrap();
        let rep = bandedness_residual(&init, &rates, 1).unwrap();
        assert!(rep.max_residual() <= 1e-10);
        assert!((rep.c_a - 0.8).abs() < 1e-8);
        let prof = range_profile(&init, &rates, 2, None).unwrap();
        assert!(prof.aggregate[0] > 0.1);
        assert!(prof.aggregate[1] <= 1e-10);
    }

    #[test]
    fn zero_rates_give_zero_residual() {
        let init = make_incoherent_blocks(8, &[2; 3], &IncoherenceProfile::zero(), 1).unwrap();
        let zero = init.combine(0.0, &init, 0.0).unwrap();
        let rep = bandedness_residual(&init, &zero, 0).unwrap();
        assert!(rep.residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn full_neighbourhood_spans_everything() {
        let init = make_incoherent_blocks(6, &[2; 3], &IncoherenceProfile::zero(), 5).unwrap();
        let mut rng = crate::rng::rng_from(6);
        let rates = crate::learning_config::BlockJacobian::new(
            (0..3).map(|_| DenseMatrix::gaussian(6, 2, 1.0, &mut rng)).collect(),
            0.0,
        )
        .unwrap();
        let rep = bandedness_residual(&init, &rates, 2).unwrap();
        assert!(rep.max_residual() < 1e-10);
    }
}
