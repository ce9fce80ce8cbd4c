//! Oracle tests for the numerical core: each operation is checked against a
//! value computed by hand or by an independent closed form, not against the
//! implementation itself.

mod common;

use approx::assert_abs_diff_eq;
use ndarray::array;
use ndarray::prelude::*;
use ndarray_linalg::SVD;
use num_complex::Complex64 as C64;

use ringlaw::rmt::{
    eigenvalues, expected_msr, gaussian_window, haar_unitary, msr, normalize_product_rows,
    ring_conformance, ring_density, ring_product, singular_value_equivalent,
    singular_value_equivalents, standardize_rows, DataWindow, RingMatrix, RingParams, Spectrum,
    StandardizeOpts, Unitary,
};
use ringlaw::RingLawError;

fn seed(b: u8) -> [u8; 32] {
    [b; 32]
}

fn demo_window(n: usize, t: usize, s: u8) -> DataWindow {
    gaussian_window(n, t, seed(s), t as u64).unwrap()
}

fn frob(m: &Array2<C64>) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

// --- standardization -------------------------------------------------------

#[test]
fn standardize_z_scores_with_population_sigma() {
    // row [1,2,3]: mean 2, population sigma sqrt(2/3)
    let w = DataWindow::new(
        array![[1.0, 2.0, 3.0], [3.0, 1.0, 2.0]],
        vec![10, 11],
        3,
        1.0,
    )
    .unwrap();
    let s = standardize_rows(&w, &StandardizeOpts::default()).unwrap();
    let z = 1.224744871391589_f64;
    assert_abs_diff_eq!(s.values()[[0, 0]], -z, epsilon = 1e-12);
    assert_abs_diff_eq!(s.values()[[0, 1]], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(s.values()[[0, 2]], z, epsilon = 1e-12);
}

#[test]
fn standardize_is_per_row() {
    // second row has twice the spread; both collapse to the same z-scores
    let w = DataWindow::new(array![[1.0, -1.0], [2.0, -2.0]], vec![1, 2], 2, 1.0).unwrap();
    let s = standardize_rows(&w, &StandardizeOpts::default()).unwrap();
    for i in 0..2 {
        assert_abs_diff_eq!(s.values()[[i, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.values()[[i, 1]], -1.0, epsilon = 1e-12);
    }
}

#[test]
fn standardize_moments_on_noise() {
    let w = demo_window(10, 50, 3);
    let s = standardize_rows(&w, &StandardizeOpts::default()).unwrap();
    for row in s.values().rows() {
        let t = row.len() as f64;
        let mean = row.sum() / t;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn standardize_rejects_flat_row_by_name() {
    let w = DataWindow::new(
        array![[5.0, 5.0, 5.0], [1.0, 2.0, 0.0]],
        vec![42, 7],
        3,
        1.0,
    )
    .unwrap();
    let err = standardize_rows(&w, &StandardizeOpts::default()).unwrap_err();
    match err {
        RingLawError::ZeroVarianceRow { row } => assert_eq!(row, "42"),
        other => panic!("expected ZeroVarianceRow, got {other:?}"),
    }
}

#[test]
fn standardize_jitter_rescues_flat_row() {
    let w = DataWindow::new(
        array![[5.0, 5.0, 5.0], [1.0, 2.0, 0.0]],
        vec![42, 7],
        3,
        1.0,
    )
    .unwrap();
    let opts = StandardizeOpts {
        jitter_seed: Some(seed(9)),
        ..StandardizeOpts::default()
    };
    let s = standardize_rows(&w, &opts).unwrap();
    let row = s.values().row(0);
    let mean = row.sum() / 3.0;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
    assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
    assert_abs_diff_eq!(var, 1.0, epsilon = 1e-9);
    // deterministic: same jitter seed, same result
    let s2 = standardize_rows(&w, &opts).unwrap();
    assert_eq!(s.values(), s2.values());
}

// --- unitaries and singular value equivalents ------------------------------

#[test]
fn haar_unitary_is_unitary_and_deterministic() {
    let u = haar_unitary(12, seed(5));
    let gram = u.t().mapv(|v| v.conj()).dot(&u);
    for i in 0..12 {
        for j in 0..12 {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(gram[[i, j]].re, expect, epsilon = 1e-12);
            assert_abs_diff_eq!(gram[[i, j]].im, 0.0, epsilon = 1e-12);
        }
    }
    assert_eq!(u, haar_unitary(12, seed(5)));
    assert_ne!(u, haar_unitary(12, seed(6)));
}

#[test]
fn identity_equivalent_is_the_hermitian_root() {
    let w = demo_window(6, 15, 11);
    let s = standardize_rows(&w, &StandardizeOpts::default()).unwrap();
    let xu = singular_value_equivalent(&s, Unitary::Identity).unwrap();
    // sqrt(gram) is real symmetric
    for i in 0..6 {
        for j in 0..6 {
            let a = xu.values()[[i, j]];
            let b = xu.values()[[j, i]];
            assert_abs_diff_eq!(a.im, 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-10);
        }
    }
    // and squares back to the gram matrix
    let sq = xu.values().dot(xu.values());
    let gram = s.values().dot(&s.values().t()).mapv(|v| C64::new(v, 0.0));
    let diff = &sq - &gram;
    assert!(frob(&diff) / frob(&gram) < 1e-10);
}

#[test]
fn equivalent_preserves_singular_values() {
    let w = demo_window(8, 20, 13);
    let s = standardize_rows(&w, &StandardizeOpts::default()).unwrap();
    let xu = singular_value_equivalent(&s, Unitary::Haar(seed(1))).unwrap();

    let (_, sv_src, _) = s.values().svd(false, false).unwrap();
    let (_, sv_equiv, _) = xu.values().svd(false, false).unwrap();
    let mut a: Vec<f64> = sv_src.to_vec();
    let mut b: Vec<f64> = sv_equiv.to_vec();
    a.sort_by(|x, y| y.total_cmp(x));
    b.sort_by(|x, y| y.total_cmp(x));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_abs_diff_eq!(x, y, epsilon = 1e-10);
    }
}

#[test]
fn equivalent_satisfies_gram_identity() {
    let w = demo_window(7, 18, 17);
    let s = standardize_rows(&w, &StandardizeOpts::default()).unwrap();
    let xu = singular_value_equivalent(&s, Unitary::Haar(seed(2))).unwrap();
    // X_u^H X_u = sqrt^H U^H U sqrt = X~ X~^H
    let lhs = xu.values().t().mapv(|v| v.conj()).dot(xu.values());
    let gram = s.values().dot(&s.values().t()).mapv(|v| C64::new(v, 0.0));
    let diff = &lhs - &gram;
    assert!(frob(&diff) / frob(&gram) < 1e-8);
}

#[test]
fn equivalents_are_deterministic_and_seed_sensitive() {
    let w = demo_window(4, 8, 42);
    let s = standardize_rows(&w, &StandardizeOpts::default()).unwrap();
    let a = singular_value_equivalent(&s, Unitary::Haar(seed(42))).unwrap();
    let b = singular_value_equivalent(&s, Unitary::Haar(seed(42))).unwrap();
    let c = singular_value_equivalent(&s, Unitary::Haar(seed(43))).unwrap();
    assert_eq!(a.values(), b.values());
    assert_ne!(a.values(), c.values());
}

#[test]
fn trace_identity_singular_values_vs_frobenius() {
    // sum of squared singular values equals the squared Frobenius norm
    let w = demo_window(9, 30, 23);
    let s = standardize_rows(&w, &StandardizeOpts::default()).unwrap();
    let xu = singular_value_equivalent(&s, Unitary::Haar(seed(3))).unwrap();
    let tr: f64 = xu.values().iter().map(|v| v.norm_sqr()).sum();
    let fr: f64 = s.values().iter().map(|v| v * v).sum();
    assert_abs_diff_eq!(tr, fr, epsilon = 1e-8 * fr.abs());
}

// --- products, normalization, spectra --------------------------------------

#[test]
fn identity_product_squares_the_root() {
    // with U = I every factor is sqrt(gram); the 2-factor product's spectrum
    // is exactly the squared singular values of the source
    let w = demo_window(5, 12, 29);
    let s = standardize_rows(&w, &StandardizeOpts::default()).unwrap();
    let factors =
        singular_value_equivalents(&s, vec![Unitary::Identity, Unitary::Identity]).unwrap();
    let z = ring_product(&factors).unwrap();
    assert_eq!(z.factors(), 2);

    let spectrum = eigenvalues(&z).unwrap();
    let mut got: Vec<f64> = spectrum.eigenvalues().iter().map(|l| l.re).collect();
    got.sort_by(|a, b| b.total_cmp(a));
    let (_, sv, _) = s.values().svd(false, false).unwrap();
    let mut want: Vec<f64> = sv.iter().map(|v| v * v).collect();
    want.sort_by(|a, b| b.total_cmp(a));
    for (g, wv) in got.iter().zip(&want) {
        assert_abs_diff_eq!(g, wv, epsilon = 1e-8 * want[0]);
    }
}

#[test]
fn product_rejects_mixed_sizes() {
    let w4 = demo_window(4, 8, 1);
    let w5 = demo_window(5, 10, 1);
    let s4 = standardize_rows(&w4, &StandardizeOpts::default()).unwrap();
    let s5 = standardize_rows(&w5, &StandardizeOpts::default()).unwrap();
    let a = singular_value_equivalent(&s4, Unitary::Identity).unwrap();
    let b = singular_value_equivalent(&s5, Unitary::Identity).unwrap();
    assert!(matches!(
        ring_product(&[a, b]),
        Err(RingLawError::DimensionMismatch { .. })
    ));
    assert!(ring_product(&[]).is_err());
}

#[test]
fn normalization_sets_row_second_moment() {
    let w = demo_window(6, 14, 31);
    let s = standardize_rows(&w, &StandardizeOpts::default()).unwrap();
    let f = singular_value_equivalents(&s, vec![Unitary::Haar(seed(4))]).unwrap();
    let z = normalize_product_rows(&ring_product(&f).unwrap()).unwrap();
    let n = z.n() as f64;
    for row in z.values().rows() {
        let ms: f64 = row.iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
        assert_abs_diff_eq!(ms, 1.0 / n, epsilon = 1e-12);
    }
}

#[test]
fn normalization_rejects_zero_rows() {
    let z = RingMatrix::new(Array2::<C64>::zeros((3, 3)), 1).unwrap();
    assert!(matches!(
        normalize_product_rows(&z),
        Err(RingLawError::ZeroVarianceRow { .. })
    ));
}

#[test]
fn spectrum_of_diagonal_and_rotation_matrices() {
    let d = RingMatrix::new(
        Array2::from_diag(&array![
            C64::new(1.0, 0.0),
            C64::new(2.0, 0.0),
            C64::new(3.0, 0.0)
        ]),
        1,
    )
    .unwrap();
    let spec = eigenvalues(&d).unwrap();
    let mut radii: Vec<f64> = spec.radii().to_vec();
    radii.sort_by(f64::total_cmp);
    assert_abs_diff_eq!(radii[0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(radii[1], 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(radii[2], 3.0, epsilon = 1e-12);

    // rotation by theta has eigenvalues e^{±i theta}
    let th = 0.7_f64;
    let r = RingMatrix::new(
        array![
            [C64::new(th.cos(), 0.0), C64::new(-th.sin(), 0.0)],
            [C64::new(th.sin(), 0.0), C64::new(th.cos(), 0.0)]
        ],
        1,
    )
    .unwrap();
    let spec = eigenvalues(&r).unwrap();
    for l in spec.eigenvalues() {
        assert_abs_diff_eq!(l.norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.re, th.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(l.im.abs(), th.sin(), epsilon = 1e-12);
    }
}

#[test]
fn msr_of_known_spectra() {
    let quartet = Spectrum::new(vec![
        C64::new(1.0, 0.0),
        C64::new(0.0, 1.0),
        C64::new(-1.0, 0.0),
        C64::new(0.0, -1.0),
    ]);
    assert_abs_diff_eq!(msr(&quartet).unwrap(), 1.0, epsilon = 1e-15);

    let null = Spectrum::new(vec![C64::new(0.0, 0.0)]);
    assert_abs_diff_eq!(msr(&null).unwrap(), 0.0, epsilon = 1e-15);

    assert!(matches!(
        msr(&Spectrum::new(vec![])),
        Err(RingLawError::EmptySpectrum)
    ));
}

// --- ring-law reference quantities -----------------------------------------

#[test]
fn ring_params_geometry() {
    let p = RingParams::new(40, 100, 1).unwrap();
    assert_abs_diff_eq!(p.ratio, 0.4, epsilon = 1e-15);
    assert_abs_diff_eq!(p.inner_radius, 0.7745966692414834, epsilon = 1e-15);
    assert_abs_diff_eq!(p.outer_radius, 1.0, epsilon = 0.0);

    let p8 = RingParams::new(400, 1000, 8).unwrap();
    assert_abs_diff_eq!(p8.inner_radius, 0.1296, epsilon = 1e-15);

    assert!(RingParams::new(101, 100, 1).is_err());
    assert!(RingParams::new(0, 100, 1).is_err());
    assert!(RingParams::new(10, 100, 0).is_err());
}

#[test]
fn ring_density_values_and_support() {
    let p = RingParams::new(40, 100, 1).unwrap();
    // L=1 density is flat: 1/(pi c)
    assert_abs_diff_eq!(ring_density(0.9, &p), 0.7957747154594768, epsilon = 1e-15);
    assert_abs_diff_eq!(
        ring_density(p.inner_radius, &p),
        0.7957747154594768,
        epsilon = 1e-15
    );
    assert_eq!(ring_density(0.5, &p), 0.0);
    assert_eq!(ring_density(1.0000001, &p), 0.0);

    let p2 = RingParams::new(50, 100, 2).unwrap();
    assert_abs_diff_eq!(ring_density(0.8, &p2), 0.3978873577297383, epsilon = 1e-15);

    // for L > 2 the density decays with radius
    let p8 = RingParams::new(40, 100, 8).unwrap();
    assert!(ring_density(0.2, &p8) > ring_density(0.9, &p8));
    assert_eq!(ring_density(0.1295, &p8), 0.0);
    assert!(ring_density(0.1297, &p8) > 0.0);
}

#[test]
fn expected_msr_closed_forms() {
    let near = |n, t, l, want: f64| {
        let p = RingParams::new(n, t, l).unwrap();
        assert_abs_diff_eq!(expected_msr(&p), want, epsilon = 1e-12);
    };
    near(40, 100, 1, 0.8920699974251832);
    near(118, 240, 1, 0.8645031157029555);
    near(400, 1000, 8, 0.46112);
    near(50, 50, 1, 2.0 / 3.0);
}

#[test]
fn expected_msr_is_stable_for_tiny_ratios() {
    // c -> 0 limit is 1; the naive 1-(1-c)^k form loses half the digits here
    let p = RingParams::new(2, 2_000_000, 1).unwrap();
    let c = p.ratio;
    let series = 1.0 - 0.25 * c; // second-order expansion
    assert_abs_diff_eq!(expected_msr(&p), series, epsilon = 1e-9);
}

#[test]
fn conformance_counts_inclusive_annulus() {
    let p = RingParams::new(40, 100, 1).unwrap(); // annulus [0.7746, 1]
    let spec = Spectrum::new(vec![
        C64::new(0.2, 0.0),                    // out
        C64::new(p.inner_radius - 0.05, 0.0),  // boundary with tol, in
        C64::new(0.9, 0.0),                    // in
        C64::new(1.05, 0.0),                   // boundary with tol, in
        C64::new(1.06, 0.0),                   // out
    ]);
    let rep = ring_conformance(&spec, &p, 0.05).unwrap();
    assert_abs_diff_eq!(rep.fraction, 3.0 / 5.0, epsilon = 1e-15);
    assert_abs_diff_eq!(rep.min_radius, 0.2, epsilon = 1e-15);
    assert_abs_diff_eq!(rep.max_radius, 1.06, epsilon = 1e-15);
    assert!(ring_conformance(&spec, &p, -0.1).is_err());
}

// --- full chain on one noise window ----------------------------------------

#[test]
fn noise_window_msr_matches_theory() {
    // the 118x240 shape used throughout: theory says MSR 0.8645
    let w = demo_window(118, 240, 77);
    let s = standardize_rows(&w, &StandardizeOpts::default()).unwrap();
    let f = singular_value_equivalents(&s, vec![Unitary::Haar(seed(78))]).unwrap();
    let z = normalize_product_rows(&ring_product(&f).unwrap()).unwrap();
    let spec = eigenvalues(&z).unwrap();
    let m = msr(&spec).unwrap();
    assert!(
        (m - 0.8645).abs() <= 0.05,
        "msr {m} strays from the ring-law mean 0.8645"
    );
    let rep = ring_conformance(&spec, &RingParams::new(118, 240, 1).unwrap(), 0.05).unwrap();
    assert!(rep.fraction >= 0.95, "fraction {}", rep.fraction);
}

// --- construction guards ----------------------------------------------------

#[test]
fn window_validation_errors() {
    let ok = Array2::<f64>::zeros((2, 3));
    assert!(DataWindow::new(Array2::zeros((1, 3)), vec![1], 3, 1.0).is_err());
    assert!(DataWindow::new(Array2::zeros((3, 2)), vec![1, 2, 3], 2, 1.0).is_err());
    assert!(DataWindow::new(ok.clone(), vec![1], 3, 1.0).is_err());
    assert!(DataWindow::new(ok.clone(), vec![1, 1], 3, 1.0).is_err());
    assert!(DataWindow::new(ok.clone(), vec![1, 2], 3, 0.0).is_err());
    let mut bad = ok.clone();
    bad[[0, 0]] = f64::NAN;
    assert!(DataWindow::new(bad, vec![1, 2], 3, 1.0).is_err());
    assert!(DataWindow::new(ok, vec![1, 2], 3, 1.0).is_ok());
}

#[test]
fn gaussian_window_shape_and_labels() {
    let w = gaussian_window(5, 9, seed(8), 123).unwrap();
    assert_eq!(w.n_rows(), 5);
    assert_eq!(w.n_cols(), 9);
    assert_eq!(w.end_time(), 123);
    assert_eq!(w.row_ids(), &[1, 2, 3, 4, 5]);
    assert_abs_diff_eq!(w.ratio(), 5.0 / 9.0, epsilon = 1e-15);
    // reproducible, and not the zero matrix
    assert_eq!(w.values(), gaussian_window(5, 9, seed(8), 123).unwrap().values());
    assert!(w.values().iter().any(|v| v.abs() > 0.1));
}
