use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GrsdError, Result};
use crate::learning_config::{BranchLaw, ResidualStack};
use crate::rng::{derive_named, derive_seed, rng_from, standard_normal};
use crate::spectral_core::norm2;

/// `‖(I + εG)u‖` at or below this aborts the chain.
pub const COLLAPSE_FLOOR: f64 = 1e-12;

/// Direction process `u_ℓ = A_ℓ u_{ℓ−1} / ‖A_ℓ u_{ℓ−1}‖` with increments
/// `δ_ℓ = ln ‖A_ℓ u_{ℓ−1}‖`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualChainTrace {
    /// `u_0, …, u_L`.
    pub directions: Vec<Vec<f64>>,
    /// `δ_1, …, δ_L`.
    pub increments: Vec<f64>,
    /// Running `Σ (δ_ℓ − μ)`.
    pub sum: f64,
    pub mu: f64,
    /// Sample variance of the increments.
    pub sigma2: f64,
}

impl ResidualChainTrace {
    pub fn depth(&self) -> usize {
        self.increments.len()
    }

    /// Same trace with centering `mu`.
    pub fn recentered(mut self, mu: f64) -> Self {
        self.mu = mu;
        self.sum = centered_sum(&self.increments, mu);
        self
    }
}

/// `Σ (δ_ℓ − μ)` accumulated left to right.
pub fn centered_sum(increments: &[f64], mu: f64) -> f64 {
    let mut s = 0.0;
    for &d in increments {
        s += d - mu;
    }
    s
}

fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
}

/// One step `u ← A_k u / ‖A_k u‖`; returns `ln ‖A_k u‖`.
fn step(stack: &ResidualStack, k: usize, u: &mut [f64], g: &mut [f64], v: &mut [f64]) -> Result<f64> {
    let n = u.len();
    stack.fill_branch(k, g);
    let eps = stack.epsilon();
    for r in 0..n {
        let row = &g[r * n..(r + 1) * n];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(u.iter()) {
            acc += a * b;
        }
        v[r] = u[r] + eps * acc;
    }
    let norm = norm2(v);
    if !(norm > COLLAPSE_FLOOR) {
        return Err(GrsdError::ZeroVectorEncountered { layer: k });
    }
    for (x, y) in u.iter_mut().zip(v.iter()) {
        *x = y / norm;
    }
    Ok(norm.ln())
}

fn check_start(stack: &ResidualStack, u0: &[f64], depth: usize) -> Result<()> {
    if u0.len() != stack.width() {
        return Err(GrsdError::DimensionMismatch(format!(
            "start vector of length {} for width {}",
            u0.len(),
            stack.width()
        )));
    }
    if depth > stack.depth() {
        return Err(GrsdError::IndexOutOfRange {
            index: depth,
            max: stack.depth(),
        });
    }
    let n = norm2(u0);
    if (n - 1.0).abs() > 1e-10 {
        return Err(GrsdError::invalid("u0", format!("norm {n} is not 1")));
    }
    Ok(())
}

/// Runs the first `depth` layers of `stack` from `u0`, keeping every direction.
pub fn run_direction_chain(stack: &ResidualStack, u0: &[f64], depth: usize) -> Result<ResidualChainTrace> {
    check_start(stack, u0, depth)?;
    let n = stack.width();
    let mut u = u0.to_vec();
    let mut g = vec![0.0; n * n];
    let mut v = vec![0.0; n];
    let mut directions = Vec::with_capacity(depth + 1);
    directions.push(u.clone());
    let mut increments = Vec::with_capacity(depth);
    let mut sum = 0.0;
    for k in 1..=depth {
        let d = step(stack, k, &mut u, &mut g, &mut v)?;
        increments.push(d);
        sum += d;
        directions.push(u.clone());
    }
    let sigma2 = sample_variance(&increments);
    Ok(ResidualChainTrace {
        directions,
        increments,
        sum,
        mu: 0.0,
        sigma2,
    })
}

/// Increments only, for long chains.
pub fn direction_chain_increments(stack: &ResidualStack, u0: &[f64], depth: usize) -> Result<Vec<f64>> {
    check_start(stack, u0, depth)?;
    let n = stack.width();
    let mut u = u0.to_vec();
    let mut g = vec![0.0; n * n];
    let mut v = vec![0.0; n];
    (1..=depth).map(|k| step(stack, k, &mut u, &mut g, &mut v)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartLaw {
    /// `u_0 = e_1`.
    FirstBasis,
    /// `u_0` uniform on the sphere.
    Uniform,
}

/// Independent chains, member `m` using stack seed `derive_seed(seed, m)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub width: usize,
    pub epsilon: f64,
    /// Branch law; defaults to Gaussian entries of variance `1/n`.
    pub law: Option<BranchLaw>,
    pub members: usize,
    pub start: StartLaw,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(width: usize, epsilon: f64, members: usize, seed: u64) -> Self {
        Self {
            width,
            epsilon,
            law: None,
            members,
            start: StartLaw::FirstBasis,
            seed,
        }
    }

    pub fn member_seed(&self, m: usize) -> u64 {
        derive_seed(self.seed, m as u64)
    }

    pub fn member_stack(&self, m: usize, depth: usize) -> Result<ResidualStack> {
        let law = self.law.clone().unwrap_or(BranchLaw::Gaussian {
            variance: 1.0 / self.width as f64,
        });
        ResidualStack::new(self.width, depth.max(1), self.epsilon, law, self.member_seed(m))
    }

    pub fn member_start(&self, m: usize) -> Vec<f64> {
        let n = self.width;
        match self.start {
            StartLaw::FirstBasis => {
                let mut u = vec![0.0; n];
                u[0] = 1.0;
                u
            }
            StartLaw::Uniform => {
                let mut rng = rng_from(derive_named(self.member_seed(m), "start"));
                loop {
                    let u: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
                    let r = norm2(&u);
                    if r > 0.0 {
                        return u.into_iter().map(|x| x / r).collect();
                    }
                }
            }
        }
    }
}

/// Raw increment sums `Σ_{ℓ≤L} δ_ℓ` of every member at each checkpoint `L`,
/// with increment moments pooled over members and layers `≤ L`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleSums {
    pub checkpoints: Vec<usize>,
    /// `sums[c][m]`.
    pub sums: Vec<Vec<f64>>,
    pub increment_mean: Vec<f64>,
    pub increment_variance: Vec<f64>,
}

/// Runs every member to the largest checkpoint.
pub fn ensemble_sums(spec: &EnsembleSpec, checkpoints: &[usize]) -> Result<EnsembleSums> {
    if checkpoints.is_empty() || checkpoints.contains(&0) || checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GrsdError::invalid("checkpoints", "must be positive and increasing"));
    }
    if spec.members == 0 {
        return Err(GrsdError::invalid("members", "ensemble is empty"));
    }
    let depth = *checkpoints.last().expect("non-empty");
    // Per member: partial sums and partial sums of squares at each checkpoint.
    let per_member: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..spec.members)
        .into_par_iter()
        .map(|m| {
            let stack = spec.member_stack(m, depth)?;
            let inc = direction_chain_increments(&stack, &spec.member_start(m), depth)?;
            let mut s = Vec::with_capacity(checkpoints.len());
            let mut q = Vec::with_capacity(checkpoints.len());
            let (mut acc, mut acc2, mut c) = (0.0, 0.0, 0);
            for (l, d) in inc.iter().enumerate() {
                acc += d;
                acc2 += d * d;
                if l + 1 == checkpoints[c] {
                    s.push(acc);
                    q.push(acc2);
                    c += 1;
                }
            }
            Ok((s, q))
        })
        .collect();
    let per_member: Vec<(Vec<f64>, Vec<f64>)> = per_member.into_iter().collect::<Result<_>>()?;
    let mut sums = vec![Vec::with_capacity(spec.members); checkpoints.len()];
    let mut mean = Vec::with_capacity(checkpoints.len());
    let mut var = Vec::with_capacity(checkpoints.len());
    for (c, &l) in checkpoints.iter().enumerate() {
        let (mut s1, mut s2) = (0.0, 0.0);
        for (s, q) in &per_member {
            sums[c].push(s[c]);
            s1 += s[c];
            s2 += q[c];
        }
        let count = (l * spec.members) as f64;
        let mu = s1 / count;
        mean.push(mu);
        var.push(((s2 / count - mu * mu) * count / (count - 1.0).max(1.0)).max(0.0));
    }
    Ok(EnsembleSums {
        checkpoints: checkpoints.to_vec(),
        sums,
        increment_mean: mean,
        increment_variance: var,
    })
}
