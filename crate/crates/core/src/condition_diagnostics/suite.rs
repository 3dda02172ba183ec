use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::banded::{bandedness_residual, range_profile, RangeProfile};
use super::incoherence::{gronwall_bound_check, incoherence_envelope, theoretical_c_rho, IncoherenceReport, DEFAULT_RHO_W};
use super::logshift::{log_bin_couplings, CouplingOptions, LogShiftReport};
use super::path::{controlled_path_norms, PathNorms};
use crate::error::{GrsdError, Result};
use crate::learning_config::{BlockJacobian, BlockTrajectory};
use crate::spectral_core::{assign_log_bins, fmt_f64, symmetric_eigendecompose, DenseMatrix, LogBinGrid};

pub const REPORT_VERSION: u32 = 1;

/// Pass/fail thresholds for [`condition_suite`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Relative residual below which a rate counts as lying in the span.
    pub span_tol: f64,
    /// Tolerance `δ` defining the effective range `K_δ`.
    pub range_delta: f64,
    /// Condition 1 passes when `K_δ ≤ max(1, range_fraction·(L − 1))`.
    pub range_fraction: f64,
    /// Bound on `Σ_{k≥1} ρ_w^k u_k(0) / u_0(0)`.
    pub incoherence_max: f64,
    pub gronwall_tol: f64,
    /// Bound on the measured `C_J`.
    pub path_max: f64,
    /// Bound on the stationarity error of the log-bin couplings.
    pub stationarity_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            span_tol: 1e-8,
            range_delta: 1e-3,
            range_fraction: 0.5,
            incoherence_max: 1.0,
            gronwall_tol: 1e-8,
            path_max: 1e3,
            stationarity_max: 0.9,
        }
    }
}

/// Operator whose eigen-couplings are tested for log-shift invariance.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingOperator {
    /// Symmetrized `dM/dt`, by central difference of neighbouring samples.
    RateFiniteDifference,
    /// `M` itself.
    Gram,
    Supplied(DenseMatrix),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub rho_w: f64,
    pub h: f64,
    pub edge_margin: usize,
    pub operator: CouplingOperator,
    pub renormalize: bool,
    /// Largest bandwidth tried; defaults to `L − 1`.
    pub k_max: Option<usize>,
    /// Layers entering the bandedness profile; defaults to all.
    pub range_layers: Option<Vec<usize>>,
    /// Sample used for Conditions 1 and 4; defaults to the middle one.
    pub sample: Option<usize>,
    pub seeds: BTreeMap<String, u64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            rho_w: DEFAULT_RHO_W,
            h: 1.0,
            edge_margin: 2,
            operator: CouplingOperator::RateFiniteDifference,
            renormalize: true,
            k_max: None,
            range_layers: None,
            sample: None,
            seeds: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandednessSummary {
    pub pass: bool,
    pub vacuous: bool,
    pub k_max: usize,
    /// Smallest `K` whose aggregate residual is within `span_tol`.
    pub exact_range: Option<usize>,
    pub effective_range: Option<usize>,
    pub allowed_range: usize,
    pub aggregate_residual_at_range: Option<f64>,
    pub decay_rate: Option<f64>,
    /// `max_l Σ_p ‖A_pl‖` fitted at the effective range.
    pub c_a: Option<f64>,
    pub rank_deficient: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IncoherenceSummary {
    pub pass: bool,
    pub score: f64,
    pub rho_w: f64,
    pub max_distance: usize,
    pub u0: f64,
    pub c_rho_estimated: f64,
    pub margin_estimated: f64,
    pub c_rho_theoretical: Option<f64>,
    pub margin_theoretical: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathSummary {
    pub pass: bool,
    pub sup_jacobian: f64,
    pub sup_rate: f64,
    pub c_j: f64,
    pub diverged_at: Option<f64>,
    /// `max_i ‖q(t_{i+1}) − q(t_i)‖₁ / (t_{i+1} − t_i)` for the window mass fractions `q`.
    pub bin_statistic_lipschitz: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogShiftSummary {
    pub pass: bool,
    pub stationarity_error: Option<f64>,
    pub window_bins: usize,
    pub window_s: Option<(f64, f64)>,
    pub min_population: Option<usize>,
    pub merged_bins: usize,
    pub omega_pairs: Option<usize>,
    pub omega_max_abs: Option<f64>,
    pub sample_time: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ConditionDetails {
    pub profile: Option<RangeProfile>,
    pub incoherence: Option<IncoherenceReport>,
    pub path: Option<PathNorms>,
    pub couplings: Option<LogShiftReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    pub version: u32,
    pub family: String,
    pub depth: usize,
    pub n_f: usize,
    pub samples: usize,
    pub h: f64,
    pub edge_margin: usize,
    pub seeds: BTreeMap<String, u64>,
    pub thresholds: Thresholds,
    pub condition_1: BandednessSummary,
    pub condition_2: IncoherenceSummary,
    pub condition_3: PathSummary,
    pub condition_4: LogShiftSummary,
    pub warnings: Vec<String>,
    pub all_pass: bool,
    #[serde(skip)]
    pub details: ConditionDetails,
}

fn condition_1(
    cfg: &SuiteConfig,
    th: &Thresholds,
    j: &BlockJacobian,
    rate: &BlockJacobian,
) -> Result<(BandednessSummary, RangeProfile)> {
    let depth = j.depth();
    let k_max = cfg.k_max.unwrap_or(depth - 1).min(depth - 1);
    let profile = range_profile(j, rate, k_max, cfg.range_layers.as_deref())?;
    let allowed = ((th.range_fraction * (depth - 1) as f64).floor() as usize).max(1);
    let exact = profile.effective_range(th.span_tol);
    let eff = profile.effective_range(th.range_delta);
    let (c_a, rank_deficient) = match eff {
        Some(k) => {
            let rep = bandedness_residual(j, rate, k)?;
            (Some(rep.c_a), rep.rank_deficient)
        }
        None => (None, false),
    };
    let r0 = profile.aggregate[0];
    let decay_rate = profile.decay_rate(th.span_tol.max(1e-12 * r0), r0);
    let vacuous = depth == 1;
    Ok((
        BandednessSummary {
            pass: vacuous || eff.is_some_and(|k| k <= allowed),
            vacuous,
            k_max,
            exact_range: exact,
            effective_range: eff,
            allowed_range: allowed,
            aggregate_residual_at_range: eff.map(|k| profile.aggregate[k]),
            decay_rate,
            c_a,
            rank_deficient,
        },
        profile,
    ))
}

fn condition_2(
    cfg: &SuiteConfig,
    th: &Thresholds,
    traj: &BlockTrajectory,
) -> Result<(IncoherenceSummary, IncoherenceReport)> {
    let rep = incoherence_envelope(traj.samples(), cfg.rho_w)?;
    let score = rep.relative_off_diagonal();
    Ok((
        IncoherenceSummary {
            pass: score <= th.incoherence_max && rep.margin >= -th.gronwall_tol,
            score,
            rho_w: rep.rho_w,
            max_distance: rep.max_distance,
            u0: rep.envelope[0][0],
            c_rho_estimated: rep.c_rho,
            margin_estimated: rep.margin,
            c_rho_theoretical: None,
            margin_theoretical: None,
        },
        rep,
    ))
}

/// Fraction of `tr M` carried by each window bin.
fn window_mass(m: &DenseMatrix, grid: &LogBinGrid) -> Result<Vec<f64>> {
    let eig = symmetric_eigendecompose(m, 1e-8)?;
    let lam = eig.clamped_eigenvalues();
    let total: f64 = lam.iter().sum();
    let mut q = vec![0.0; grid.window_len()];
    let lo = *grid.window().start();
    for &l in &lam {
        if let Some(b) = grid.bin_of_lambda(l).filter(|&b| grid.in_window(b)) {
            q[b - lo] += l / total.max(f64::MIN_POSITIVE);
        }
    }
    Ok(q)
}

fn condition_3(th: &Thresholds, traj: &BlockTrajectory, grid: Option<&LogBinGrid>) -> Result<(PathSummary, PathNorms)> {
    let p = controlled_path_norms(traj)?;
    let lipschitz = match grid {
        Some(g) if traj.samples().len() >= 2 => {
            let qs: Vec<Vec<f64>> = traj
                .samples()
                .iter()
                .map(|j| window_mass(&j.function_gram(), g))
                .collect::<Result<_>>()?;
            let times = traj.times();
            let mut worst: f64 = 0.0;
            for i in 0..qs.len() - 1 {
                let d: f64 = qs[i].iter().zip(&qs[i + 1]).map(|(a, b)| (a - b).abs()).sum();
                worst = worst.max(d / (times[i + 1] - times[i]));
            }
            Some(worst)
        }
        _ => None,
    };
    let finite = p.c_j.is_finite();
    Ok((
        PathSummary {
            pass: finite && p.diverged_at.is_none() && p.c_j <= th.path_max,
            sup_jacobian: p.sup_jacobian,
            sup_rate: p.sup_rate,
            c_j: p.c_j,
            diverged_at: p.diverged_at,
            bin_statistic_lipschitz: lipschitz,
        },
        p,
    ))
}

fn coupling_operator(cfg: &SuiteConfig, traj: &BlockTrajectory, i: usize) -> Result<DenseMatrix> {
    let samples = traj.samples();
    match &cfg.operator {
        CouplingOperator::Gram => Ok(samples[i].function_gram()),
        CouplingOperator::Supplied(a) => Ok(a.clone()),
        CouplingOperator::RateFiniteDifference => {
            if i > 0 && i + 1 < samples.len() {
                let (a, b) = (&samples[i - 1], &samples[i + 1]);
                let dt = b.time() - a.time();
                let mut d = b.function_gram();
                d.add_assign_scaled(&a.function_gram(), -1.0)?;
                Ok(d.scale(1.0 / dt).symmetrized())
            } else if let Some(r) = &traj.rates()[i] {
                let j = samples[i].concat();
                let jd = r.concat();
                let x = jd.matmul_t(&j)?;
                Ok(x.add(&x.transpose())?)
            } else {
                Err(GrsdError::TooFewSamples {
                    needed: 3,
                    got: samples.len(),
                })
            }
        }
    }
}

enum Coupling {
    Done(LogShiftReport),
    Unpopulated(GrsdError),
}

fn condition_4(cfg: &SuiteConfig, traj: &BlockTrajectory, i: usize) -> Result<(LogBinGrid, Coupling)> {
    let j = &traj.samples()[i];
    let m = j.function_gram();
    let eig = symmetric_eigendecompose(&m, 1e-8)?;
    let grid = LogBinGrid::for_spectrum(&eig, cfg.h, None)?.with_edge_margin(cfg.edge_margin)?;
    let a = coupling_operator(cfg, traj, i)?;
    let opts = CouplingOptions {
        renormalize: cfg.renormalize,
        ..CouplingOptions::default()
    };
    if let Err(e) = assign_log_bins(&eig, &grid, None) {
        return match e {
            GrsdError::EmptyWindow => Ok((grid, Coupling::Unpopulated(e))),
            other => Err(other),
        };
    }
    match log_bin_couplings(&eig, &a, &grid, &opts) {
        Ok(r) => Ok((grid, Coupling::Done(r))),
        Err(e @ (GrsdError::EmptyBinPair(_) | GrsdError::EmptyWindow)) => Ok((grid, Coupling::Unpopulated(e))),
        Err(e) => Err(e),
    }
}

/// Runs the four condition diagnostics on one trajectory.
pub fn condition_suite(cfg: &SuiteConfig, traj: &BlockTrajectory, th: &Thresholds) -> Result<ConditionReport> {
    let n = traj.samples().len();
    let i = cfg.sample.unwrap_or(n / 2);
    if i >= n {
        return Err(GrsdError::IndexOutOfRange { index: i + 1, max: n });
    }
    let filled = traj.clone().with_central_difference_rates()?;
    let j = &filled.samples()[i];
    let rate = filled.rates()[i]
        .clone()
        .ok_or_else(|| GrsdError::invalid("trajectory", "no rate at the analysed sample"))?;

    let ((c1, c2), c4) = rayon::join(
        || {
            rayon::join(
                || condition_1(cfg, th, j, &rate).map_err(|e| e.labelled("condition 1")),
                || condition_2(cfg, th, traj).map_err(|e| e.labelled("condition 2")),
            )
        },
        || condition_4(cfg, &filled, i).map_err(|e| e.labelled("condition 4")),
    );
    let (c1, profile) = c1?;
    let (mut c2, incoherence) = c2?;
    let (grid, coupling) = c4?;
    let (c3, path) = condition_3(th, traj, Some(&grid)).map_err(|e| e.labelled("condition 3"))?;

    if let Some(c_a) = c1.c_a {
        let k = c1.effective_range.unwrap_or(0);
        let c = theoretical_c_rho(c_a, k, cfg.rho_w);
        c2.c_rho_theoretical = Some(c);
        c2.margin_theoretical = Some(gronwall_bound_check(&incoherence, c).min_margin);
    }

    let mut warnings = Vec::new();
    let window_s = (grid.s_edge(*grid.window().start()), grid.s_edge(*grid.window().end() + 1));
    let (c4, couplings) = match coupling {
        Coupling::Done(r) => {
            if r.low_population {
                warnings.push(format!(
                    "condition 4: low bin population (min {} per window bin, {} merged)",
                    r.populations.iter().min().copied().unwrap_or(0),
                    r.merged.len()
                ));
            }
            let s = LogShiftSummary {
                pass: r.stationarity_error <= th.stationarity_max,
                stationarity_error: Some(r.stationarity_error),
                window_bins: r.window_len(),
                window_s: Some(window_s),
                min_population: r.populations.iter().min().copied(),
                merged_bins: r.merged.len(),
                omega_pairs: r.omega.as_ref().map(|o| o.pairs),
                omega_max_abs: r.omega.as_ref().map(|o| o.max_abs),
                sample_time: j.time(),
            };
            (s, Some(r))
        }
        Coupling::Unpopulated(e) => {
            warnings.push(format!("condition 4: low bin population ({e})"));
            let s = LogShiftSummary {
                pass: false,
                stationarity_error: None,
                window_bins: grid.window_len(),
                window_s: Some(window_s),
                min_population: Some(0),
                merged_bins: 0,
                omega_pairs: None,
                omega_max_abs: None,
                sample_time: j.time(),
            };
            (s, None)
        }
    };
    if c1.rank_deficient {
        warnings.push("condition 1: regularized solve engaged on a rank-deficient span".into());
    }
    if let Some(t) = c3.diverged_at {
        warnings.push(format!("condition 3: trajectory diverged at t = {t}"));
    }
    let all_pass = c1.pass && c2.pass && c3.pass && c4.pass;
    Ok(ConditionReport {
        version: REPORT_VERSION,
        family: traj.family().to_string(),
        depth: traj.depth(),
        n_f: j.n_f(),
        samples: n,
        h: cfg.h,
        edge_margin: cfg.edge_margin,
        seeds: cfg.seeds.clone(),
        thresholds: th.clone(),
        condition_1: c1,
        condition_2: c2,
        condition_3: c3,
        condition_4: c4,
        warnings,
        all_pass,
        details: ConditionDetails {
            profile: Some(profile),
            incoherence: Some(incoherence),
            path: Some(path),
            couplings,
        },
    })
}

impl ConditionReport {
    /// Columns `t,k,u_k,U`.
    pub fn write_envelope_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,k,u_k,U")?;
        if let Some(r) = &self.details.incoherence {
            for (i, row) in r.envelope.iter().enumerate() {
                for (k, u) in row.iter().enumerate() {
                    writeln!(w, "{},{},{},{}", fmt_f64(r.times[i]), k, fmt_f64(*u), fmt_f64(r.weighted[i]))?;
                }
            }
        }
        Ok(())
    }

    /// Columns `i,j,s_i,s_j,k_hat,kernel`.
    pub fn write_couplings_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,j,s_i,s_j,k_hat,kernel")?;
        if let Some(r) = &self.details.couplings {
            let lo = *r.grid.window().start();
            let n = r.window_len();
            for i in 0..n {
                for j in 0..n {
                    let kern = r.kernel_at(j as isize - i as isize).unwrap_or(f64::NAN);
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        lo + i,
                        lo + j,
                        fmt_f64(r.grid.s_center(lo + i)),
                        fmt_f64(r.grid.s_center(lo + j)),
                        fmt_f64(r.k_hat[(i, j)]),
                        fmt_f64(kern)
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Columns `layer,K,r`; layer `aggregate` holds the pooled residual.
    pub fn write_bandedness_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "layer,K,r")?;
        if let Some(p) = &self.details.profile {
            for (l, row) in p.layers.iter().zip(&p.per_layer) {
                for (k, r) in row.iter().enumerate() {
                    writeln!(w, "{},{},{}", l + 1, k, fmt_f64(*r))?;
                }
            }
            for (k, r) in p.aggregate.iter().enumerate() {
                writeln!(w, "aggregate,{},{}", k, fmt_f64(*r))?;
            }
        }
        Ok(())
    }

    /// Columns `t,jacobian_norm,rate_norm`.
    pub fn write_path_norms_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,jacobian_norm,rate_norm")?;
        if let Some(p) = &self.details.path {
            for &(t, nj, nr) in &p.samples {
                writeln!(w, "{},{},{}", fmt_f64(t), fmt_f64(nj), fmt_f64(nr.unwrap_or(f64::NAN)))?;
            }
        }
        Ok(())
    }
}
