//! Kernel application against dense linear algebra on small Neumann grids.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdflow::grid::{discrete_laplacian, GridGeometry, ScalarField};
use sdflow::kernels::{explicit_euler_kernel, heat_semigroup_symbol, implicit_euler_symbol, validate_kernel, KernelSpec};

/// `Δ_ε` as a dense matrix with half-sample mirror boundaries.
fn laplacian_matrix(g: &GridGeometry) -> DMatrix<f64> {
    let n = g.len();
    let inv = 1.0 / (g.spacing() * g.spacing());
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for axis in 0..g.dim() {
            for d in [-1i64, 1] {
                let j = g.neighbor(i, axis, d);
                a[(i, j)] += inv;
                a[(i, i)] -= inv;
            }
        }
    }
    a
}

fn random_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn implicit_matches_dense_solve_in_1d_and_3d() {
    for (extents, spacing, tau) in [(vec![17], 0.5, 0.7), (vec![5, 4, 6], 1.0, 2.0), (vec![9, 7], 0.25, 0.01)] {
        let g = GridGeometry::new(&extents, spacing).unwrap();
        let rhs = random_values(g.len(), 3);
        let got = implicit_euler_symbol(tau, spacing, &g).unwrap().prepare(&g).unwrap().apply_values(&rhs);
        let m = DMatrix::<f64>::identity(g.len(), g.len()) - laplacian_matrix(&g) * tau;
        let want = m.lu().solve(&DVector::from_vec(rhs)).unwrap();
        assert!(max_err(&got, want.as_slice()) < 1e-10, "{extents:?}");
    }
}

#[test]
fn heat_matches_matrix_exponential() {
    for (extents, tau) in [(vec![12], 1.5), (vec![6, 5], 0.8)] {
        let g = GridGeometry::new(&extents, 1.0).unwrap();
        let rhs = random_values(g.len(), 11);
        let got = heat_semigroup_symbol(tau, 1.0, &g).unwrap().prepare(&g).unwrap().apply_values(&rhs);
        let eig = laplacian_matrix(&g).symmetric_eigen();
        let exp = eig.eigenvalues.map(|l| (tau * l).exp());
        let m = &eig.eigenvectors * DMatrix::from_diagonal(&exp) * eig.eigenvectors.transpose();
        let want = m * DVector::from_vec(rhs);
        assert!(max_err(&got, want.as_slice()) < 1e-10, "{extents:?}");
    }
}

#[test]
fn explicit_equals_identity_plus_scaled_laplacian() {
    // K = I + h Δ_ε with h = θε²/(2N), including at the mirrored walls.
    let g = GridGeometry::new(&[7, 9], 0.5).unwrap();
    let theta = 0.6;
    let k = explicit_euler_kernel(theta, 0.5, 2).unwrap();
    let f = ScalarField::new(g.clone(), random_values(g.len(), 5), 10.0).unwrap();
    let got = k.prepare(&g).unwrap().apply(&f).unwrap();
    let lap = discrete_laplacian(&f);
    let h = k.derived_h();
    assert!((h - theta * 0.25 / 4.0).abs() < 1e-15);
    for i in 0..g.len() {
        assert!((got.values()[i] - (f.values()[i] + h * lap.values()[i])).abs() < 1e-12);
    }
}

#[test]
fn builtin_kernels_validate_across_spacings() {
    for eps in [1.0, 0.5] {
        let g = GridGeometry::cube(16, 2, eps).unwrap();
        for spec in [KernelSpec::Explicit { theta: 0.5 }, KernelSpec::Implicit { tau: 3.0 * eps * eps }, KernelSpec::Heat { tau: eps * eps }] {
            let r = validate_kernel(&spec.build(&g).unwrap());
            assert!(r.passes, "{spec:?} at eps {eps}: {r:?}");
        }
    }
}

#[test]
fn negative_stencil_weight_fails_positivity() {
    let g = GridGeometry::cube(8, 1, 1.0).unwrap();
    let spec = KernelSpec::Stencil { weights: vec![(vec![0], 1.2), (vec![1], -0.1), (vec![-1], -0.1)] };
    let r = validate_kernel(&spec.build(&g).unwrap());
    assert_eq!(r.positivity_violations, 2);
    assert!(!r.passes);
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(32) })]

    #[test]
    fn kernels_conserve_mass_and_respect_bounds(seed in 0u64..1000, nx in 3usize..12, ny in 3usize..12, tau in 0.05f64..20.0) {
        let g = GridGeometry::new(&[nx, ny], 1.0).unwrap();
        let v = random_values(g.len(), seed);
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let total: f64 = v.iter().sum();
        for spec in [KernelSpec::Explicit { theta: 1.0 }, KernelSpec::Implicit { tau }, KernelSpec::Heat { tau }] {
            let out = spec.build(&g).unwrap().prepare(&g).unwrap().apply_values(&v);
            let sum: f64 = out.iter().sum();
            prop_assert!((sum - total).abs() < 1e-9, "{:?}", spec);
            // Positive mass-one kernels average, so the range cannot grow.
            prop_assert!(out.iter().all(|&x| x >= lo - 1e-9 && x <= hi + 1e-9), "{:?}", spec);
        }
    }
}
