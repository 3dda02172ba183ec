use grsd_core::rng::{rng_from, standard_normal};
use grsd_core::spectral_core::{
    assign_log_bins, operator_norm, symmetric_eigendecompose, DenseMatrix, LogBinGrid, SymmetricEigenSystem,
};
use proptest::prelude::*;

/// Cyclic Jacobi rotations; returns ascending eigenvalues.
fn jacobi_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
    let mut rng = rng_from(seed);
    let g = DenseMatrix::from_fn(n, n, |_, _| standard_normal(&mut rng));
    g.add(&g.transpose()).unwrap().scale(0.5)
}

#[test]
fn eigenvalues_match_jacobi_rotations() {
    for (n, seed) in [(5, 1), (17, 2), (40, 3)] {
        let m = random_symmetric(n, seed);
        let eig = symmetric_eigendecompose(&m, 1e-10).unwrap();
        let oracle = jacobi_eigenvalues(&m);
        for (a, b) in eig.eigenvalues().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "n = {n}: {a} vs {b}");
        }
    }
}

#[test]
fn operator_norm_examples() {
    assert!((operator_norm(&DenseMatrix::identity(6)).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(operator_norm(&DenseMatrix::zeros(4, 3)).unwrap(), 0.0);
    let d = DenseMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -4.0]]).unwrap();
    assert!((operator_norm(&d).unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn log_uniform_spectrum_fills_bins_evenly() {
    let mut rng = rng_from(77);
    let mut lambdas: Vec<f64> = (0..500)
        .map(|_| (rand::Rng::random_range(&mut rng, -5.0..5.0f64)).exp())
        .collect();
    lambdas.sort_by(|a, b| a.total_cmp(b));
    let eig = SymmetricEigenSystem::diagonal(lambdas).unwrap();
    let grid = LogBinGrid::new(-5.0, 0.5, 20).unwrap();
    let pops = assign_log_bins(&eig, &grid, Some(0.0)).unwrap().populations();
    assert_eq!(pops.iter().sum::<usize>(), 500);
    let p: f64 = 1.0 / 20.0;
    let mean = 500.0 * p;
    let sd = (500.0 * p * (1.0 - p)).sqrt();
    for (a, &c) in pops.iter().enumerate() {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "bin {a}: {c}");
    }
}

#[test]
fn small_bin_examples() {
    let eig = SymmetricEigenSystem::diagonal(vec![1.0, 1f64.exp(), 2f64.exp()]).unwrap();
    let grid = LogBinGrid::new(0.0, 1.0, 3).unwrap().with_edge_margin(0).unwrap();
    let a = assign_log_bins(&eig, &grid, None).unwrap();
    assert_eq!(a.bins(), &[Some(0), Some(1), Some(2)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reconstruction_error_is_small(n in 1usize..64, seed in any::<u64>()) {
        let m = random_symmetric(n, seed);
        let eig = symmetric_eigendecompose(&m, 1e-10).unwrap();
        let err = eig.reconstruct().sub(&m).unwrap().max_abs();
        prop_assert!(err <= 1e-8 * operator_norm(&m).unwrap().max(1e-300));
    }

    #[test]
    fn gram_norm_is_squared_norm(r in 1usize..20, c in 1usize..20, seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let a = DenseMatrix::from_fn(r, c, |_, _| standard_normal(&mut rng));
        let n = operator_norm(&a).unwrap();
        let g = operator_norm(&a.t_matmul(&a).unwrap()).unwrap();
        prop_assert!((g - n * n).abs() <= 1e-8 * n * n);
    }

    #[test]
    fn bins_shift_with_the_spectrum(
        s in proptest::collection::vec(-3.0f64..3.0, 1..40),
        k in -3i32..=3,
    ) {
        let mut s = s;
        s.sort_by(|a, b| a.total_cmp(b));
        let h = 0.5;
        let grid = LogBinGrid::new(-10.0, h, 40).unwrap().with_edge_margin(0).unwrap();
        let base = SymmetricEigenSystem::diagonal(s.iter().map(|x| x.exp()).collect()).unwrap();
        let moved = SymmetricEigenSystem::diagonal(s.iter().map(|x| (x + k as f64 * h).exp()).collect()).unwrap();
        let a = assign_log_bins(&base, &grid, Some(0.0)).unwrap();
        let b = assign_log_bins(&moved, &grid, Some(0.0)).unwrap();
        for (x, y) in a.bins().iter().zip(b.bins()) {
            prop_assert_eq!(y.unwrap() as i64 - x.unwrap() as i64, k as i64);
        }
    }
}
