use grsd_core::rng::{rng_from, standard_normal};
use grsd_core::shell_dynamics::manufactured::PowerLawTransport;
use grsd_core::shell_dynamics::{
    fit_power_law, invert_boundary_fluxes, log_shift_rigidity_test, shell_energies, velocity_field, Dissipation,
    ExponentMode, SampledField, ShellEnergySeries, ShellFluxSeries,
};
use grsd_core::spectral_core::{symmetric_eigendecompose, DenseMatrix, LogBinGrid};
use proptest::prelude::*;

/// Energies with unit density in every bin.
fn flat_series(grid: &LogBinGrid, n_times: usize) -> ShellEnergySeries {
    let row: Vec<f64> = (0..grid.n_bins()).map(|a| grid.lambda_width(a)).collect();
    let times = (0..n_times).map(|i| i as f64).collect();
    ShellEnergySeries::new(grid.clone(), times, vec![row; n_times]).unwrap()
}

fn flux_with(grid: &LogBinGrid, n_times: usize, value: f64) -> ShellFluxSeries {
    let n = grid.n_bins();
    ShellFluxSeries {
        times: (0..n_times).map(|i| i as f64).collect(),
        d_energy: vec![vec![0.0; n]; n_times],
        dissipation: vec![vec![0.0; n]; n_times],
        boundary_flux: vec![vec![value; n + 1]; n_times],
        model: Dissipation::Zero,
    }
}

#[test]
fn uniform_flux_over_unit_density_is_constant_velocity() {
    let grid = LogBinGrid::new(-2.0, 0.25, 16).unwrap();
    let series = flat_series(&grid, 3);
    let v = velocity_field(&flux_with(&grid, 3, 2.0), &series).unwrap();
    for x in v.velocity.iter().flatten() {
        assert!((x.unwrap() - 2.0).abs() < 1e-12);
    }
}

#[test]
fn zero_flux_is_zero_velocity() {
    let grid = LogBinGrid::new(-2.0, 0.25, 16).unwrap();
    let series = flat_series(&grid, 3);
    let v = velocity_field(&flux_with(&grid, 3, 0.0), &series).unwrap();
    assert!(v.velocity.iter().flatten().all(|x| *x == Some(0.0)));
}

#[test]
fn transported_pulse_recovers_square_root_velocity() {
    let tr = PowerLawTransport::new(3.0, 0.5);
    let grid = LogBinGrid::new(-6.0, 0.1, 120).unwrap().with_window_in(-2.0, 2.0).unwrap();
    let times: Vec<f64> = (-2..=2).map(|k| k as f64 * 1e-5).collect();
    let series = tr.series(grid, &times).unwrap();
    let flux = invert_boundary_fluxes(&series, Dissipation::Zero).unwrap();
    let v = velocity_field(&flux, &series).unwrap();
    let samples = v.window_samples();
    assert!(!samples.is_empty());
    for (_, lambda, got) in samples {
        let want = 3.0 * lambda.sqrt();
        assert!((got / want - 1.0).abs() <= 0.05, "λ = {lambda}: {got} vs {want}");
    }
}

#[test]
fn noisy_power_law_fit() {
    let mut rng = rng_from(31);
    let samples: Vec<(usize, f64, f64)> = (0..3)
        .flat_map(|i| (0..40).map(move |j| (i, (-2.0 + 0.1 * j as f64).exp())))
        .map(|(i, l)| (i, l, 1.5 * l.powf(0.7) * (1.0 + 0.01 * standard_normal(&mut rng))))
        .collect();
    let fit = fit_power_law(&samples, (0.0, f64::INFINITY)).unwrap();
    assert!((fit.a - 0.7).abs() <= 0.02, "{}", fit.a);
    assert!(fit.r2 > 0.99);
}

#[test]
fn window_excludes_samples() {
    let samples: Vec<(usize, f64, f64)> = (1..=10)
        .map(|j| {
            let l = j as f64;
            (0, l, if l < 5.0 { l.powi(2) } else { l })
        })
        .collect();
    let fit = fit_power_law(&samples, (1.0, 5.0)).unwrap();
    assert!((fit.a - 2.0).abs() < 1e-12);
    assert_eq!(fit.n_samples, 4);
}

#[test]
fn ratio_field_is_rigid() {
    let a = 0.8;
    let s: Vec<f64> = (0..41).map(|j| -2.0 + 0.1 * j as f64).collect();
    let t: Vec<f64> = (0..21).map(|i| 1.0 + 0.1 * i as f64).collect();
    let field = SampledField::from_fn(s, t, |s, t| (s.exp() / t).powf(a)).unwrap();
    let r = log_shift_rigidity_test(&field, &[0.1, 0.3, 0.5], 1.0, ExponentMode::Fitted).unwrap();
    assert!(r.score <= 1e-12, "{}", r.score);
    assert!((r.exponent - 2.0 * a).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parseval(n in 2usize..24, rank in 1usize..24, seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let a = DenseMatrix::gaussian(n, rank, 1.0, &mut rng);
        let eig = symmetric_eigendecompose(&a.outer_gram(), 1e-12).unwrap();
        let grid = LogBinGrid::for_spectrum(&eig, 0.4, None).unwrap();
        let e: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let total = shell_energies(&eig, &e, &grid, None).unwrap().total();
        let norm2: f64 = e.iter().map(|x| x * x).sum();
        prop_assert!((total - norm2).abs() <= 1e-12 * norm2.max(1.0));
    }

    #[test]
    fn fluxes_telescope(
        rows in proptest::collection::vec(proptest::collection::vec(0.0f64..5.0, 6), 3..8),
        gamma in 0.0f64..2.0,
    ) {
        let grid = LogBinGrid::new(0.0, 0.5, 6).unwrap();
        let times: Vec<f64> = (0..rows.len()).map(|i| 0.1 * i as f64 + 0.01 * (i * i) as f64).collect();
        let series = ShellEnergySeries::new(grid, times, rows).unwrap();
        let f = invert_boundary_fluxes(&series, Dissipation::Linear { gamma }).unwrap();
        let scale = f.max_abs_rate().max(1.0);
        prop_assert!(f.balance_residual() <= 1e-12 * scale);
        for i in 0..series.len() {
            let total: f64 = (0..6).map(|a| f.d_energy[i][a] + f.dissipation[i][a]).sum();
            prop_assert!((f.boundary_flux[i][0] - total).abs() <= 1e-12 * scale * 6.0);
            prop_assert_eq!(f.boundary_flux[i][6], 0.0);
        }
    }

    #[test]
    fn fit_exponent_is_scale_equivariant(
        a in -2.0f64..2.0,
        b in 0.1f64..10.0,
        noise in proptest::collection::vec(-0.05f64..0.05, 20),
    ) {
        let samples: Vec<(usize, f64, f64)> = noise
            .iter()
            .enumerate()
            .map(|(j, e)| {
                let l = (0.2 * j as f64 - 2.0).exp();
                (0, l, l.powf(a) * e.exp())
            })
            .collect();
        let moved: Vec<(usize, f64, f64)> = samples.iter().map(|&(i, l, v)| (i, b * l, b * v)).collect();
        let f0 = fit_power_law(&samples, (0.0, f64::INFINITY)).unwrap();
        let f1 = fit_power_law(&moved, (0.0, f64::INFINITY)).unwrap();
        prop_assert!((f0.a - f1.a).abs() <= 1e-9);
        let expect = f0.c[0].1 * b.powf(1.0 - f0.a);
        prop_assert!((f1.c[0].1 / expect - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn rigidity_ignores_shifts_of_s(shift in -5.0f64..5.0, a in -1.0f64..1.0, wiggle in 0.0f64..0.3) {
        let s: Vec<f64> = (0..31).map(|j| -1.5 + 0.1 * j as f64).collect();
        let t: Vec<f64> = (0..11).map(|i| 1.0 + 0.2 * i as f64).collect();
        let f = move |s: f64, t: f64| (a * s - a * t.ln() + wiggle * (3.0 * s).sin()).exp();
        let base = SampledField::from_fn(s.clone(), t.clone(), f).unwrap();
        let moved = SampledField::from_fn(s.iter().map(|x| x + shift).collect(), t, move |x, t| f(x - shift, t)).unwrap();
        let shifts = [0.1, 0.2, 0.4];
        let r0 = log_shift_rigidity_test(&base, &shifts, 1.0, ExponentMode::Fitted).unwrap();
        let r1 = log_shift_rigidity_test(&moved, &shifts, 1.0, ExponentMode::Fitted).unwrap();
        prop_assert!((r0.score - r1.score).abs() <= 1e-9 * r0.score.max(1.0));
        prop_assert!((r0.exponent - r1.exponent).abs() <= 1e-9);
    }
}
