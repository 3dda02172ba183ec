use grsd_core::condition_diagnostics::{
    condition_suite, controlled_path_norms, envelope_at, gronwall_bound_check, incoherence_envelope, log_bin_couplings,
    range_profile, residual_trajectory, ssm_trajectory, theoretical_c_rho, CouplingOptions, ResidualReadout,
    SuiteConfig, Thresholds, REPORT_VERSION,
};
use grsd_core::learning_config::{
    make_incoherent_blocks, BandedEvolution, BlockJacobian, BlockTrajectory, IncoherenceProfile, ResidualStack,
    SsmSpec, StableSsm,
};
use grsd_core::rng::{rng_from, standard_normal};
use grsd_core::spectral_core::{DenseMatrix, LogBinGrid, SymmetricEigenSystem};
use proptest::prelude::*;

const SSM_TIMES: [f64; 3] = [0.0, 0.01, 0.02];

fn residual_traj(depth: usize, seed: u64) -> BlockTrajectory {
    let stack = ResidualStack::gaussian(16, depth, 0.1, seed).unwrap().with_drift(0.5);
    let readout = ResidualReadout::gaussian(&stack, 64, 1);
    residual_trajectory(&stack, &readout, &[0.0, 0.01, 0.02]).unwrap()
}

fn gaussian_blocks(n_f: usize, dims: &[usize], seed: u64) -> Vec<DenseMatrix> {
    let mut rng = rng_from(seed);
    dims.iter()
        .map(|&d| DenseMatrix::from_fn(n_f, d, |_, _| standard_normal(&mut rng)))
        .collect()
}

#[test]
fn deep_residual_stack_meets_all_conditions() {
    let traj = residual_traj(256, 3);
    let r = condition_suite(&SuiteConfig::default(), &traj, &Thresholds::default()).unwrap();
    assert!(r.condition_1.pass, "{:?}", r.condition_1);
    assert!(r.condition_2.pass, "{:?}", r.condition_2);
    assert!(r.condition_3.pass, "{:?}", r.condition_3);
    assert!(r.condition_4.pass, "{:?}", r.condition_4);
    assert!(r.all_pass);
}

#[test]
fn unstable_recurrence_fails_bandedness() {
    let ssm = StableSsm::build_unchecked(&SsmSpec {
        rho: 1.05,
        rho_bound: Some(0.9),
        horizon: 64,
        ..SsmSpec::default()
    })
    .unwrap();
    let traj = ssm_trajectory(&ssm, 1, &SSM_TIMES).unwrap();
    let r = condition_suite(&SuiteConfig::default(), &traj, &Thresholds::default()).unwrap();
    assert!(!r.condition_1.pass);
    assert!(!r.all_pass);
}

#[test]
fn single_layer_warns_about_population() {
    let traj = residual_traj(1, 4);
    let r = condition_suite(&SuiteConfig::default(), &traj, &Thresholds::default()).unwrap();
    assert!(r.warnings.iter().any(|w| w.contains("low bin population")), "{:?}", r.warnings);
}

#[test]
fn report_json_carries_version_and_conditions() {
    let traj = residual_traj(8, 5);
    let r = condition_suite(&SuiteConfig::default(), &traj, &Thresholds::default()).unwrap();
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    assert_eq!(v["version"], REPORT_VERSION);
    for key in ["condition_1", "condition_2", "condition_3", "condition_4", "warnings", "all_pass", "thresholds"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["condition_1"]["pass"].is_boolean());
}

#[test]
fn exponential_path_norms() {
    let j0 = gaussian_blocks(6, &[2, 3], 9);
    let scaled = |t: f64| BlockJacobian::new(j0.iter().map(|b| b.scale(t.exp())).collect(), t).unwrap();
    let times: Vec<f64> = (0..=10).map(|i| 0.1 * i as f64).collect();
    let samples: Vec<BlockJacobian> = times.iter().map(|&t| scaled(t)).collect();
    let rates = samples.iter().map(|s| Some(s.clone())).collect();
    let traj = BlockTrajectory::new("exp", samples, rates, None).unwrap();
    let norms = controlled_path_norms(&traj).unwrap();
    let base = BlockJacobian::new(j0, 0.0).unwrap().operator_norm().unwrap();
    let e = 1f64.exp();
    assert!((norms.sup_jacobian - e * base).abs() <= 1e-10 * base);
    assert!((norms.sup_rate - e * base).abs() <= 1e-10 * base);
    assert!((norms.c_j - 2.0 * e * base).abs() <= 1e-10 * base);
}

#[test]
fn static_blocks_have_no_growth() {
    let blocks = gaussian_blocks(10, &[2, 2, 2, 2], 12);
    let samples: Vec<BlockJacobian> = (0..5).map(|i| BlockJacobian::new(blocks.clone(), i as f64).unwrap()).collect();
    let r = incoherence_envelope(&samples, 0.5).unwrap();
    assert!(r.c_rho.abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn range_residual_is_monotone(depth in 2usize..7, seed in any::<u64>()) {
        let blocks = BlockJacobian::new(gaussian_blocks(12, &vec![2; depth], seed), 0.0).unwrap();
        let rates = BlockJacobian::new(gaussian_blocks(12, &vec![2; depth], seed ^ 1), 0.0).unwrap();
        let p = range_profile(&blocks, &rates, depth - 1, None).unwrap();
        for row in p.per_layer.iter().chain(std::iter::once(&p.aggregate)) {
            for w in row.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn generated_blocks_respect_their_profile(depth in 2usize..6, eps1 in 0.01f64..0.4, seed in any::<u64>()) {
        let profile = IncoherenceProfile::geometric(eps1, 0.5, depth - 1).unwrap();
        let j = make_incoherent_blocks(8 * depth, &vec![3; depth], &profile, seed).unwrap();
        let u = envelope_at(&j, depth - 1).unwrap();
        for k in 1..depth {
            prop_assert!(u[k] <= profile.eps(k) * 1.1 + 1e-12);
        }
    }

    #[test]
    fn banded_runs_stay_under_the_envelope(seed in any::<u64>(), bandwidth in 0usize..3) {
        let dims = [3usize; 6];
        let evo = BandedEvolution::random(&dims, bandwidth, 0.5, seed).unwrap();
        let j0 = make_incoherent_blocks(24, &dims, &IncoherenceProfile::geometric(0.3, 0.5, 5).unwrap(), seed).unwrap();
        let traj = evo.integrate(&j0, 1.0, 6, 20).unwrap();
        let report = incoherence_envelope(traj.samples(), 0.5).unwrap();
        let c = theoretical_c_rho(evo.c_a().unwrap(), evo.bandwidth(), 0.5);
        prop_assert!(gronwall_bound_check(&report, c).holds(1e-8));
    }

    #[test]
    fn stationarity_error_ignores_spectral_scale(
        s in proptest::collection::vec(0.05f64..3.95, 24..48),
        shift in -4.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let mut s = s;
        s.sort_by(|a, b| a.total_cmp(b));
        let n = s.len();
        let mut rng = rng_from(seed);
        let g = DenseMatrix::from_fn(n, n, |_, _| standard_normal(&mut rng));
        let a = g.add(&g.transpose()).unwrap();
        let base = SymmetricEigenSystem::diagonal(s.iter().map(|x| x.exp()).collect()).unwrap();
        let moved = SymmetricEigenSystem::diagonal(s.iter().map(|x| (x + shift).exp()).collect()).unwrap();
        let opts = CouplingOptions::default();
        let grid0 = LogBinGrid::new(0.0, 1.0, 4).unwrap().with_edge_margin(0).unwrap();
        let grid1 = LogBinGrid::new(shift, 1.0, 4).unwrap().with_edge_margin(0).unwrap();
        let (r0, r1) = (log_bin_couplings(&base, &a, &grid0, &opts), log_bin_couplings(&moved, &a, &grid1, &opts));
        match (r0, r1) {
            (Ok(r0), Ok(r1)) => {
                prop_assert!((r0.stationarity_error - r1.stationarity_error).abs() <= 1e-9);
                let om0 = r0.omega.unwrap();
                let om1 = r1.omega.unwrap();
                prop_assert!(om0.max_abs.is_finite() && om1.max_abs.is_finite());
                prop_assert_eq!(om0.pairs, om1.pairs);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "only one side failed"),
        }
    }
}
