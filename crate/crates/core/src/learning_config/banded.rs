use serde::{Deserialize, Serialize};

use super::blocks::BlockJacobian;
use crate::error::{GrsdError, Result};
use crate::rng::{derive_named, rng_from};
use crate::spectral_core::{operator_norm, DenseMatrix};

/// Exactly banded block dynamics `J̇⁽ˡ⁾ = Σ_{|p−l|≤K} J⁽ᵖ⁾ A_pl`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandedEvolution {
    bandwidth: usize,
    dims: Vec<usize>,
    // per layer l: (p, A_pl) for every p in the band
    coeffs: Vec<Vec<(usize, DenseMatrix)>>,
}

impl BandedEvolution {
    /// Gaussian coefficients rescaled so that `Σ_p ‖A_pl‖ = c_a` for every layer `l`.
    pub fn random(dims: &[usize], bandwidth: usize, c_a: f64, seed: u64) -> Result<Self> {
        if dims.is_empty() || !(c_a >= 0.0) {
            return Err(GrsdError::invalid("banded", "need blocks and c_a ≥ 0"));
        }
        let depth = dims.len();
        let mut rng = rng_from(derive_named(seed, "banded-coefficients"));
        let mut coeffs = Vec::with_capacity(depth);
        for l in 0..depth {
            let lo = l.saturating_sub(bandwidth);
            let hi = (l + bandwidth).min(depth - 1);
            let mut row: Vec<(usize, DenseMatrix)> = (lo..=hi)
                .map(|p| (p, DenseMatrix::gaussian(dims[p], dims[l], 1.0, &mut rng)))
                .collect();
            let total: f64 = row
                .iter()
                .map(|(_, a)| operator_norm(a))
                .sum::<Result<f64>>()?;
            let s = if total > 0.0 { c_a / total } else { 0.0 };
            for (_, a) in row.iter_mut() {
                *a = a.scale(s);
            }
            coeffs.push(row);
        }
        Ok(Self {
            bandwidth,
            dims: dims.to_vec(),
            coeffs,
        })
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// `C_A = max_l Σ_p ‖A_pl‖`.
    pub fn c_a(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for row in &self.coeffs {
            let s: f64 = row.iter().map(|(_, a)| operator_norm(a)).sum::<Result<f64>>()?;
            worst = worst.max(s);
        }
        Ok(worst)
    }

    pub fn coefficient(&self, p: usize, l: usize) -> Option<&DenseMatrix> {
        self.coeffs.get(l)?.iter().find(|(q, _)| *q == p).map(|(_, a)| a)
    }

    pub fn rate(&self, j: &BlockJacobian) -> Result<BlockJacobian> {
        if j.block_dims() != self.dims {
            return Err(GrsdError::DimensionMismatch("block layout differs from coefficients".into()));
        }
        let blocks = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(l, row)| {
                let mut acc = DenseMatrix::zeros(j.n_f(), self.dims[l]);
                for (p, a) in row {
                    acc.add_assign_scaled(&j.block(*p).matmul(a)?, 1.0)?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        BlockJacobian::new(blocks, j.time())
    }

    /// RK4 with `steps_per_sample` substeps between `n_samples` equally spaced samples on `[0, t_end]`.
    pub fn integrate(
        &self,
        initial: &BlockJacobian,
        t_end: f64,
        n_samples: usize,
        steps_per_sample: usize,
    ) -> Result<BlockTrajectory> {
        if n_samples < 2 || steps_per_sample == 0 || !(t_end > 0.0) {
            return Err(GrsdError::invalid("integrate", "need ≥ 2 samples, ≥ 1 step and t_end > 0"));
        }
        let dt_sample = t_end / (n_samples - 1) as f64;
        let h = dt_sample / steps_per_sample as f64;
        let mut j = initial.clone().with_time(0.0);
        let mut samples = vec![j.clone()];
        let mut rates = vec![Some(self.rate(&j)?)];
        for s in 1..n_samples {
            for _ in 0..steps_per_sample {
                let k1 = self.rate(&j)?;
                let k2 = self.rate(&j.combine(1.0, &k1, 0.5 * h)?)?;
                let k3 = self.rate(&j.combine(1.0, &k2, 0.5 * h)?)?;
                let k4 = self.rate(&j.combine(1.0, &k3, h)?)?;
                let incr = k1.combine(1.0, &k2, 2.0)?.combine(1.0, &k3, 2.0)?.combine(1.0, &k4, 1.0)?;
                j = j.combine(1.0, &incr, h / 6.0)?;
            }
            j = j.with_time(s as f64 * dt_sample);
            rates.push(Some(self.rate(&j)?));
            samples.push(j.clone());
        }
        BlockTrajectory::new("banded", samples, rates, None)
    }
}

/// Time-sampled block Jacobians with rates where available.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockTrajectory {
    family: String,
    samples: Vec<BlockJacobian>,
    rates: Vec<Option<BlockJacobian>>,
    divergence: Option<f64>,
}

impl BlockTrajectory {
    pub fn new(
        family: impl Into<String>,
        samples: Vec<BlockJacobian>,
        rates: Vec<Option<BlockJacobian>>,
        divergence: Option<f64>,
    ) -> Result<Self> {
        if samples.is_empty() || samples.len() != rates.len() {
            return Err(GrsdError::invalid("trajectory", "need one rate slot per sample"));
        }
        let first = &samples[0];
        if samples.iter().any(|s| !s.same_shape(first))
            || rates.iter().flatten().any(|r| !r.same_shape(first))
        {
            return Err(GrsdError::DimensionMismatch("samples change block layout".into()));
        }
        if samples.windows(2).any(|w| !(w[1].time() > w[0].time())) {
            return Err(GrsdError::invalid("trajectory", "sample times must increase"));
        }
        Ok(Self {
            family: family.into(),
            samples,
            rates,
            divergence,
        })
    }

    /// Fills missing interior rates by central differences of the samples.
    pub fn with_central_difference_rates(mut self) -> Result<Self> {
        for i in 1..self.samples.len().saturating_sub(1) {
            if self.rates[i].is_none() {
                let (a, b) = (&self.samples[i - 1], &self.samples[i + 1]);
                let dt = b.time() - a.time();
                let r = b.combine(1.0 / dt, a, -1.0 / dt)?.with_time(self.samples[i].time());
                self.rates[i] = Some(r);
            }
        }
        Ok(self)
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn samples(&self) -> &[BlockJacobian] {
        &self.samples
    }

    pub fn rates(&self) -> &[Option<BlockJacobian>] {
        &self.rates
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(BlockJacobian::time).collect()
    }

    pub fn depth(&self) -> usize {
        self.samples[0].depth()
    }

    /// Training time at which a divergence guard fired, if any.
    pub fn divergence(&self) -> Option<f64> {
        self.divergence
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning_config::{make_incoherent_blocks, IncoherenceProfile};

    #[test]
    fn coefficient_budget_is_exact() {
        let ev = BandedEvolution::random(&[2, 3, 2, 2], 1, 0.7, 1).unwrap();
        assert!((ev.c_a().unwrap() - 0.7).abs() < 1e-12);
        assert!(ev.coefficient(3, 0).is_none());
        assert!(ev.coefficient(1, 0).is_some());
    }

    #[test]
    fn rk4_matches_matrix_exponential_for_single_block() {
        let init = make_incoherent_blocks(4, &[2], &IncoherenceProfile::zero(), 3).unwrap();
        let ev = BandedEvolution::random(&[2], 0, 0.5, 2).unwrap();
        let a = ev.coefficient(0, 0).unwrap().clone();
        let traj = ev.integrate(&init, 1.0, 3, 200).unwrap();
        // J(t) = J(0) exp(tA); compare against a long Taylor series.
        let mut term = DenseMatrix::identity(2);
        let mut expm = DenseMatrix::identity(2);
        for k in 1..30 {
            term = term.matmul(&a).unwrap().scale(1.0 / k as f64);
            expm = expm.add(&term).unwrap();
        }
        let exact = init.block(0).matmul(&expm).unwrap();
        let got = traj.samples()[2].block(0);
        assert!(got.sub(&exact).unwrap().max_abs() < 1e-10);
    }
}
