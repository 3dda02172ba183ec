use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use grsd_core::condition_diagnostics::{
    condition_suite, gronwall_bound_check, incoherence_envelope, residual_trajectory, ssm_trajectory,
    theoretical_c_rho, ConditionReport, CouplingOperator, ResidualReadout, SuiteConfig,
};
use grsd_core::gradient_flow::{check_time_rescaling_covariance, integrate_gradient_flow, Integrator, ToyKind, ToyModel};
use grsd_core::learning_config::{
    make_incoherent_blocks, BandedEvolution, BlockTrajectory, IncoherenceProfile, ResidualStack, SsmSpec, StableSsm,
};
use grsd_core::residual_renorm::{
    berry_esseen_sweep, depth_average_dilution, depth_threshold, ensemble_sums, mixing_distances, mixing_time,
    EnsembleSpec, LogShiftDepthSpec,
};
use grsd_core::rng::{derive_named, derive_seed};
use grsd_core::shell_dynamics::manufactured::PowerLawTransport;
use grsd_core::shell_dynamics::{
    fit_velocity_field, invert_boundary_fluxes, velocity_field, write_shell_csv, Dissipation,
};
use grsd_core::spectral_core::{fmt_f64, LogBinGrid};
use grsd_core::Result;
use serde_json::{json, Value};

use crate::config::{
    BandedFamily, CovarianceParams, DepthSweepParams, Family, GronwallParams, Method, MixingParams, ModelKind,
    Operator, Params, PowerLawParams, Recipe, SuiteParams,
};

/// Files produced by a recipe, plus a JSON summary and the seeds it derived.
pub struct Outcome {
    pub artifacts: Vec<(String, Vec<u8>)>,
    pub summary: Value,
    pub text: String,
    pub seeds: BTreeMap<String, u64>,
}

pub fn run(recipe: &Recipe) -> Result<Outcome> {
    let seed = recipe.seed;
    match &recipe.params {
        Params::PowerLaw(p) => power_law(p),
        Params::ConditionSuite(p) => suite(p, seed),
        Params::DepthSweep(p) => depth_sweep(p, seed),
        Params::Mixing(p) => mixing(p, seed),
        Params::Gronwall(p) => gronwall(p, seed),
        Params::Covariance(p) => covariance(p, seed),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn power_law(p: &PowerLawParams) -> Result<Outcome> {
    let mut fits = Vec::new();
    writeln!(fits, "a_true,c_true,a_fit,c_fit_mean,c_max_rel_err,r2,balance_residual,max_abs_rate")?;
    let mut artifacts = Vec::new();
    let mut worst_a: f64 = 0.0;
    let mut worst_c: f64 = 0.0;
    let half = (p.samples / 2) as f64;
    let times: Vec<f64> = (0..p.samples).map(|k| (k as f64 - half) * p.dt).collect();
    for (ia, &a) in p.exponents.iter().enumerate() {
        for (ic, &c) in p.coefficients.iter().enumerate() {
            let tr = PowerLawTransport::new(c, a);
            let grid = LogBinGrid::new(p.s_min, p.h, p.n_bins)?.with_window_in(p.window[0], p.window[1])?;
            let series = tr.series(grid, &times)?;
            let flux = invert_boundary_fluxes(&series, Dissipation::Zero)?;
            let v = velocity_field(&flux, &series)?;
            let fit = fit_velocity_field(&v)?;
            let cs = fit.c_values();
            let c_mean = cs.iter().sum::<f64>() / cs.len() as f64;
            let c_err = cs.iter().map(|x| (x / c - 1.0).abs()).fold(0.0, f64::max);
            worst_a = worst_a.max((fit.a - a).abs());
            worst_c = worst_c.max(c_err);
            writeln!(
                fits,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(a),
                fmt_f64(c),
                fmt_f64(fit.a),
                fmt_f64(c_mean),
                fmt_f64(c_err),
                fmt_f64(fit.r2),
                fmt_f64(flux.balance_residual()),
                fmt_f64(flux.max_abs_rate())
            )?;
            let mut shells = Vec::new();
            write_shell_csv(&series, &flux, &v, &mut shells)?;
            artifacts.push((format!("shells_a{ia}_c{ic}.csv"), shells));
        }
    }
    artifacts.insert(0, ("fits.csv".into(), fits));
    let text = format!("power-law recovery: max |a_fit - a| = {worst_a:.3e}, max relative c error = {worst_c:.3e}\n");
    Ok(Outcome {
        artifacts,
        summary: json!({ "max_abs_exponent_error": worst_a, "max_relative_coefficient_error": worst_c }),
        text,
        seeds: BTreeMap::new(),
    })
}

fn banded_trajectory(b: &BandedFamily, seed: u64) -> Result<(BlockTrajectory, f64, usize)> {
    let evo = BandedEvolution::random(&b.block_dims, b.bandwidth, b.c_a, seed)?;
    let profile = IncoherenceProfile::geometric(b.eps1, b.ratio, b.block_dims.len().saturating_sub(1))?;
    let j0 = make_incoherent_blocks(b.n_f, &b.block_dims, &profile, seed)?;
    let traj = evo.integrate(&j0, b.t_end, b.n_samples, b.steps_per_sample)?;
    Ok((traj, evo.c_a()?, evo.bandwidth()))
}

fn suite(p: &SuiteParams, seed: u64) -> Result<Outcome> {
    let mut seeds = BTreeMap::new();
    let traj = match p.family {
        Family::Residual => {
            let r = &p.residual;
            let s = derive_named(seed, "residual");
            seeds.insert("residual".to_string(), s);
            let stack = ResidualStack::gaussian(r.width, r.depth, r.epsilon, s)?.with_drift(r.drift);
            let readout = ResidualReadout::gaussian(&stack, r.n_f, r.p);
            residual_trajectory(&stack, &readout, &r.times)?
        }
        Family::Ssm => {
            let q = &p.ssm;
            let s = derive_named(seed, "ssm");
            seeds.insert("ssm".to_string(), s);
            let ssm = StableSsm::build(&SsmSpec {
                rho: q.rho,
                horizon: q.horizon,
                state_dim: q.state_dim,
                drift_relative: q.drift_relative,
                seed: s,
                ..SsmSpec::default()
            })?;
            ssm_trajectory(&ssm, q.window, &q.times)?
        }
        Family::Banded => {
            let s = derive_named(seed, "banded");
            seeds.insert("banded".to_string(), s);
            banded_trajectory(&p.banded, s)?.0
        }
    };
    let cfg = SuiteConfig {
        rho_w: p.suite.rho_w,
        h: p.suite.h,
        edge_margin: p.suite.edge_margin,
        operator: match p.suite.operator {
            Operator::Rate => CouplingOperator::RateFiniteDifference,
            Operator::Gram => CouplingOperator::Gram,
        },
        renormalize: p.suite.renormalize,
        seeds: seeds.clone(),
        ..SuiteConfig::default()
    };
    let report = condition_suite(&cfg, &traj, &p.thresholds)?;
    let mut artifacts = Vec::new();
    let mut buf = Vec::new();
    report.write_envelope_csv(&mut buf)?;
    artifacts.push(("envelope.csv".to_string(), std::mem::take(&mut buf)));
    report.write_couplings_csv(&mut buf)?;
    artifacts.push(("couplings.csv".to_string(), std::mem::take(&mut buf)));
    report.write_bandedness_csv(&mut buf)?;
    artifacts.push(("bandedness.csv".to_string(), std::mem::take(&mut buf)));
    report.write_path_norms_csv(&mut buf)?;
    artifacts.push(("path_norms.csv".to_string(), std::mem::take(&mut buf)));
    let json_report = serde_json::to_vec_pretty(&report).map_err(|e| grsd_core::GrsdError::Parse(e.to_string()))?;
    artifacts.push(("condition_report.json".to_string(), json_report));
    Ok(Outcome {
        artifacts,
        summary: json!({
            "all_pass": report.all_pass,
            "condition_1": report.condition_1.pass,
            "condition_2": report.condition_2.pass,
            "condition_3": report.condition_3.pass,
            "condition_4": report.condition_4.pass,
            "warnings": report.warnings,
        }),
        text: condition_text(&report),
        seeds,
    })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Human-readable summary of a condition report.
pub fn condition_text(r: &ConditionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "family {} | depth {} | n_f {} | samples {}", r.family, r.depth, r.n_f, r.samples);
    let c1 = &r.condition_1;
    let _ = writeln!(
        s,
        "[{}] 1 bandedness     K_delta = {} (allowed {}), exact range {}, decay rate {}",
        verdict(c1.pass),
        c1.effective_range.map_or("none".into(), |k| k.to_string()),
        c1.allowed_range,
        c1.exact_range.map_or("none".into(), |k| k.to_string()),
        c1.decay_rate.map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    let c2 = &r.condition_2;
    let _ = writeln!(
        s,
        "[{}] 2 incoherence    score {:.4} at rho_w {}, C_rho {:.4}, margin {:.3e}",
        verdict(c2.pass),
        c2.score,
        c2.rho_w,
        c2.c_rho_estimated,
        c2.margin_estimated
    );
    let c3 = &r.condition_3;
    let _ = writeln!(
        s,
        "[{}] 3 path control   C_J {:.4} (sup |J| {:.4}, sup |dJ/dt| {:.4})",
        verdict(c3.pass),
        c3.c_j,
        c3.sup_jacobian,
        c3.sup_rate
    );
    let c4 = &r.condition_4;
    let _ = writeln!(
        s,
        "[{}] 4 log-shift      stationarity error {}, {} window bins, {} merged",
        verdict(c4.pass),
        c4.stationarity_error.map_or("n/a".into(), |v| format!("{v:.4}")),
        c4.window_bins,
        c4.merged_bins
    );
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(s, "overall: {}", verdict(r.all_pass));
    s
}

fn depth_sweep(p: &DepthSweepParams, seed: u64) -> Result<Outcome> {
    let mut seeds = BTreeMap::new();
    let ens_root = derive_named(seed, "ensemble");
    let dil_root = derive_named(seed, "dilution");
    seeds.insert("ensemble".to_string(), ens_root);
    seeds.insert("dilution".to_string(), dil_root);
    let max_depth = *p.depths.last().expect("validated non-empty");
    let mut csv = Vec::new();
    writeln!(csv, "epsilon,eta,depth,ks,mixing_distance,tau_mix,err_bulk,err_boundary,seed")?;
    let mut trends = Vec::new();
    for (i, &eps) in p.epsilons.iter().enumerate() {
        let spec = EnsembleSpec::new(p.width, eps, p.members, derive_seed(ens_root, i as u64));
        let ks = berry_esseen_sweep(&ensemble_sums(&spec, &p.depths)?)?;
        let tau = mixing_time(&spec, p.eta, max_depth)?.tau;
        let distances = mixing_distances(&spec, max_depth)?;
        let dil_seed = derive_seed(dil_root, i as u64);
        let dilution = LogShiftDepthSpec {
            h: p.dilution_h,
            ..LogShiftDepthSpec::new(p.dilution_width, eps, dil_seed)
        };
        let layers = dilution.layer_couplings(max_depth)?;
        let mut bulk = Vec::new();
        for (k, &depth) in p.depths.iter().enumerate() {
            let ell_star = tau.unwrap_or(depth).min(depth - 1);
            let d = depth_average_dilution(&layers[..depth], ell_star, None)?;
            bulk.push(d.bulk_err);
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                fmt_f64(eps),
                fmt_f64(p.eta),
                depth,
                fmt_f64(ks[k].ks),
                fmt_f64(distances[depth]),
                tau.map(|t| t.to_string()).unwrap_or_default(),
                fmt_f64(d.bulk_err),
                fmt_f64(d.boundary_contribution),
                spec.seed
            )?;
        }
        let decreasing = bulk.windows(2).all(|w| w[1] < w[0]);
        let threshold = depth_threshold(eps, p.eta, p.c1, p.c2)?;
        trends.push(json!({
            "epsilon": eps,
            "err_bulk_decreasing": decreasing,
            "tau_mix": tau,
            "l_min": threshold.l_min,
        }));
    }
    let all_decreasing = trends.iter().all(|t| t["err_bulk_decreasing"] == true);
    let text = format!(
        "residual depth sweep over L = {:?}: bulk stationarity error {} with depth\n",
        p.depths,
        if all_decreasing { "decreases" } else { "does NOT decrease monotonically" }
    );
    Ok(Outcome {
        artifacts: vec![("depth_sweep.csv".into(), csv)],
        summary: json!({ "err_bulk_decreasing": all_decreasing, "per_epsilon": trends }),
        text,
        seeds,
    })
}

fn mixing(p: &MixingParams, seed: u64) -> Result<Outcome> {
    let root = derive_named(seed, "ensemble");
    let mut seeds = BTreeMap::new();
    seeds.insert("ensemble".to_string(), root);
    let eta_min = p.etas.iter().copied().fold(f64::INFINITY, f64::min);
    let mut table = Vec::new();
    writeln!(table, "epsilon,eta,tau_mix,rate,tau_eps2,l_min,seed")?;
    let mut dist = Vec::new();
    writeln!(dist, "epsilon,layer,d")?;
    let mut unmixed = Vec::new();
    for (i, &eps) in p.epsilons.iter().enumerate() {
        let spec = EnsembleSpec::new(p.width, eps, p.members, derive_seed(root, i as u64));
        let est = mixing_time(&spec, eta_min, p.budget)?;
        for (l, d) in est.distances.iter().enumerate() {
            writeln!(dist, "{},{},{}", fmt_f64(eps), l, fmt_f64(*d))?;
        }
        for &eta in &p.etas {
            let tau = est.distances.iter().position(|&d| d <= eta);
            if tau.is_none() {
                unmixed.push(json!({ "epsilon": eps, "eta": eta }));
            }
            let l_min = depth_threshold(eps, eta, p.c1, p.c2)?.l_min;
            writeln!(
                table,
                "{},{},{},{},{},{},{}",
                fmt_f64(eps),
                fmt_f64(eta),
                tau.map(|t| t.to_string()).unwrap_or_default(),
                opt(est.rate),
                opt(tau.map(|t| t as f64 * eps * eps)),
                l_min,
                spec.seed
            )?;
        }
    }
    let text = if unmixed.is_empty() {
        "mixing sweep: every (epsilon, eta) pair mixed within budget\n".to_string()
    } else {
        format!("mixing sweep: {} pair(s) did not mix within {} layers\n", unmixed.len(), p.budget)
    };
    Ok(Outcome {
        artifacts: vec![("mixing.csv".into(), table), ("distances.csv".into(), dist)],
        summary: json!({ "not_mixed": unmixed }),
        text,
        seeds,
    })
}

fn gronwall(p: &GronwallParams, seed: u64) -> Result<Outcome> {
    let root = derive_named(seed, "banded");
    let mut seeds = BTreeMap::new();
    seeds.insert("banded".to_string(), root);
    let mut csv = Vec::new();
    writeln!(csv, "replicate,seed,t,weighted,bound,margin")?;
    let mut worst = f64::INFINITY;
    let mut holds = true;
    let b = p.banded();
    for r in 0..p.replicates {
        let s = derive_seed(root, r as u64);
        let (traj, c_a, bandwidth) = banded_trajectory(&b, s)?;
        let report = incoherence_envelope(traj.samples(), p.rho_w)?;
        let check = gronwall_bound_check(&report, theoretical_c_rho(c_a, bandwidth, p.rho_w));
        worst = worst.min(check.min_margin);
        holds &= check.holds(p.tol);
        for ((t, u), m) in report.times.iter().zip(&report.weighted).zip(&check.margins) {
            writeln!(csv, "{},{},{},{},{},{}", r, s, fmt_f64(*t), fmt_f64(*u), fmt_f64(u + m), fmt_f64(*m))?;
        }
    }
    let text = format!(
        "gronwall check over {} replicates: bound {} (min margin {worst:.3e})\n",
        p.replicates,
        if holds { "holds" } else { "VIOLATED" }
    );
    Ok(Outcome {
        artifacts: vec![("gronwall.csv".into(), csv)],
        summary: json!({ "holds": holds, "min_margin": worst }),
        text,
        seeds,
    })
}

fn covariance(p: &CovarianceParams, seed: u64) -> Result<Outcome> {
    let s = derive_named(seed, "toy");
    let mut seeds = BTreeMap::new();
    seeds.insert("toy".to_string(), s);
    let kind = match p.model {
        ModelKind::LinearRegression => ToyKind::LinearRegression,
        ModelKind::TwoLayerLinear => ToyKind::TwoLayerLinear { hidden: p.hidden },
        ModelKind::ShallowTanh => ToyKind::ShallowTanh { hidden: p.hidden },
    };
    let method = match p.method {
        Method::Euler => Integrator::Euler,
        Method::Rk4 => Integrator::Rk4,
    };
    let model = ToyModel::synthetic(kind, p.n_samples, p.d_in, p.d_out, s)?;
    let mut csv = Vec::new();
    writeln!(csv, "alpha,deviation,compared,horizon,step")?;
    let mut worst: f64 = 0.0;
    for &alpha in &p.alphas {
        let r = check_time_rescaling_covariance(&model, alpha, p.t_end, p.h, method)?;
        worst = worst.max(r.deviation);
        writeln!(
            csv,
            "{},{},{},{},{}",
            fmt_f64(r.alpha),
            fmt_f64(r.deviation),
            r.compared,
            fmt_f64(r.horizon),
            fmt_f64(r.step)
        )?;
    }
    let steps = (p.t_end / p.h).round().max(1.0) as usize;
    let traj = integrate_gradient_flow(&model, p.t_end, p.h, method, (steps / 100).max(1))?;
    let mut path = Vec::new();
    traj.write_csv(&mut path)?;
    let within = worst <= p.tol;
    let text = format!(
        "covariance check: max deviation {worst:.3e} ({} tolerance {:.1e})\n",
        if within { "within" } else { "OUTSIDE" },
        p.tol
    );
    Ok(Outcome {
        artifacts: vec![("covariance.csv".into(), csv), ("trajectory.csv".into(), path)],
        summary: json!({ "max_deviation": worst, "within_tolerance": within }),
        text,
        seeds,
    })
}
