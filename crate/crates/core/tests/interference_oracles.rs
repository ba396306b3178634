mod common;

use std::f64::consts::PI;

use common::{delays, matched_comb_jsa, preset_jsa};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use qpmforge_core::analysis::{schmidt_number, schmidt_weights};
use qpmforge_core::biphoton::{FrequencyGrid, JointSpectralAmplitude};
use qpmforge_core::interference::{
    delta_from_bin_spacing, fit_hom, p2_closed, p2_numeric, p4_closed, p4_numeric, sweep_closed, visibility, Baseline,
    CurveKind, HeraldedKernel, HomCurve, HomFitOptions, HomGuess, TwoPhotonKernel,
};
use qpmforge_core::sampling::{poisson, trial_rng};
use qpmforge_core::Error;

const BIN_HZ: f64 = 500e9;

fn delta() -> f64 {
    delta_from_bin_spacing(BIN_HZ)
}

#[test]
fn two_photon_closed_form_matches_quadrature() {
    let (d, s) = (delta(), delta() / 10.0);
    let jsa = matched_comb_jsa(4, d, s, 256);
    let kernel = TwoPhotonKernel::new(&jsa).unwrap();
    let worst = delays(-5e-12, 5e-12, 401)
        .into_iter()
        .map(|t| (kernel.eval(t) - p2_closed(t, 4, d, s)).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3, "{worst:e}");
}

#[test]
fn heralded_closed_form_matches_quadrature() {
    for n in [1, 2, 4] {
        let (d, s) = (delta(), delta() / 10.0);
        let jsa = matched_comb_jsa(n, d, s, 256);
        let kernel = HeraldedKernel::new(&jsa).unwrap();
        let worst = delays(-5e-12, 5e-12, 401)
            .into_iter()
            .map(|t| (kernel.eval(t) - p4_closed(t, n, d, s)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 2e-3, "n={n}: {worst:e}");
    }
}

#[test]
fn heralded_cosine_argument_is_half_the_spacing() {
    // With one pair at δ = 3σ the cosine term is large enough to tell the
    // (2j+1)δτ/2 argument from (2j+1)δτ/4; with more pairs the terms the
    // closed form drops dominate the residual.
    let (d, s) = (delta(), delta() / 3.0);
    let jsa = matched_comb_jsa(1, d, s, 256);
    let kernel = HeraldedKernel::new(&jsa).unwrap();
    let quarter = |t: f64| {
        let env = (-s * s * t * t / 4.0).exp();
        let sep = (-d * d / (4.0 * s * s)).exp();
        0.5 - env * (1.0 + sep + 2.0 * sep * (0.25 * d * t).cos()) / 4.0
    };
    let mut half_err: f64 = 0.0;
    let mut quarter_err: f64 = 0.0;
    for t in delays(-3e-12, 3e-12, 121) {
        half_err = half_err.max((kernel.eval(t) - p4_closed(t, 1, d, s)).abs());
        quarter_err = quarter_err.max((kernel.eval(t) - quarter(t)).abs());
    }
    assert!(half_err < quarter_err / 2.0, "{half_err:e} vs {quarter_err:e}");
}

#[test]
fn preset_comb_two_photon_structure() {
    let jsa = preset_jsa(512);
    let kernel = TwoPhotonKernel::new(&jsa).unwrap();
    assert!(kernel.eval(0.0) <= 0.005);
    assert!(kernel.eval(0.0).abs() < 1e-6);

    let argmax = |lo: f64, hi: f64| {
        delays(lo, hi, 2001)
            .into_iter()
            .max_by(|a, b| kernel.eval(*a).total_cmp(&kernel.eval(*b)))
            .unwrap()
    };
    let first = argmax(0.5e-12, 1.5e-12);
    let mirror = argmax(-1.5e-12, -0.5e-12);
    assert!((first - 1e-12).abs() <= 0.05e-12, "{first:e}");
    assert!((mirror + 1e-12).abs() <= 0.05e-12, "{mirror:e}");
    assert!(kernel.eval(first) > 0.5);
    // The next anti-bunching maximum sits one beat period later.
    let third = argmax(2.5e-12, 3.5e-12);
    let period = third - first;
    assert!((period - 1.0 / BIN_HZ).abs() <= 0.01 / BIN_HZ, "{period:e}");
}

#[test]
fn heralded_visibility_is_inverse_schmidt_number() {
    let (d, s) = (delta(), delta() / 10.0);
    let family = [(1, 0.0), (1, d), (2, d), (4, d)];
    for ((n, spacing), expect) in family.into_iter().zip([1.0, 2.0, 4.0, 8.0]) {
        let jsa = matched_comb_jsa(n, spacing, s, 256);
        let k = schmidt_number(&schmidt_weights(&jsa).unwrap()).unwrap();
        assert!((k - expect).abs() < 0.02 * expect, "K={k}");
        let v = (0.5 - p4_numeric(&jsa, 0.0).unwrap()) / 0.5;
        assert!((v * k - 1.0).abs() < 0.02, "V={v} K={k}");
    }
}

#[test]
fn preset_comb_heralded_visibility() {
    let jsa = preset_jsa(512);
    let v = (0.5 - p4_numeric(&jsa, 0.0).unwrap()) / 0.5;
    assert!((v - 0.125).abs() <= 0.002, "{v}");
}

#[test]
fn exchange_antisymmetric_state_antibunches() {
    let (d, s) = (delta(), delta() / 10.0);
    let sym = matched_comb_jsa(2, d, s, 128);
    let grid = sym.grid().clone();
    let (ni, _) = grid.dims();
    // Multiplying by sign(ν_i − ν_s) makes the state odd under exchange.
    let odd = DMatrix::from_fn(ni, ni, |i, s| {
        let sign = (i as f64 - s as f64).signum();
        sym.values()[(i, s)] * sign
    });
    let jsa = JointSpectralAmplitude::from_values(grid, odd).unwrap();
    let p = p2_numeric(&jsa, 0.0).unwrap();
    assert!((p - 1.0).abs() < 1e-6, "{p}");
}

#[test]
fn separable_state_has_full_heralded_dip() {
    let grid = FrequencyGrid::square(5e12, 96, 1.9e14).unwrap();
    let axis = grid.signal.values();
    let m = DMatrix::from_fn(96, 96, |i, s| {
        let a = (-(axis[i] - 3e11).powi(2) / (2.0 * 1e24)).exp();
        let b = (-(axis[s] + 1e12).powi(2) / (2.0 * 4e24)).exp();
        Complex64::new(a * b, 0.0)
    });
    let jsa = JointSpectralAmplitude::from_values(grid, m).unwrap();
    assert!(p4_numeric(&jsa, 0.0).unwrap().abs() < 1e-12);
}

#[test]
fn two_photon_oracle_needs_square_grid() {
    use qpmforge_core::biphoton::Axis;
    let grid = FrequencyGrid::new(
        Axis::symmetric(1e12, 16).unwrap(),
        Axis::symmetric(2e12, 16).unwrap(),
        1.9e14,
    );
    let jsa = JointSpectralAmplitude::from_values(grid, DMatrix::from_element(16, 16, Complex64::new(1.0, 0.0)))
        .unwrap();
    assert!(matches!(p2_numeric(&jsa, 0.0), Err(Error::AsymmetricGrid)));
    assert!(p4_numeric(&jsa, 0.0).is_ok());
}

fn noisy_curve(baseline: f64, seed: u64) -> (HomCurve, f64) {
    let jsa = preset_jsa(512);
    let kernel = TwoPhotonKernel::new(&jsa).unwrap();
    let mut rng = trial_rng(seed, 0);
    let ts = delays(-5e-12, 5e-12, 201);
    let values = ts
        .iter()
        .map(|&t| poisson(2.0 * baseline * kernel.eval(t), &mut rng) as f64)
        .collect();
    (HomCurve::new(CurveKind::TwoPhoton, ts, values).unwrap(), kernel.eval(0.0))
}

fn guess() -> HomGuess {
    HomGuess {
        bin_spacing_hz: 490e9,
        sigma: 1.2e12,
        visibility: 0.9,
        baseline: None,
    }
}

#[test]
fn fit_recovers_spacing_from_noisy_counts() {
    for seed in [1, 2, 3] {
        let (curve, _) = noisy_curve(2e4, seed);
        let fit = fit_hom(&curve, &guess(), &HomFitOptions::default()).unwrap();
        let rel = (fit.bin_spacing_hz / BIN_HZ - 1.0).abs();
        assert!(rel <= 1e-3, "seed {seed}: {}", fit.bin_spacing_hz);
        assert!(fit.visibility > 0.97 && fit.visibility <= 1.0);
        // The reported spread is of the same order as the actual error.
        assert!(fit.bin_spacing_std() > 0.0 && fit.bin_spacing_std() < 1e-3 * BIN_HZ);
    }
}

#[test]
fn fit_rejects_short_or_sparse_curves() {
    let ts = delays(-0.5e-12, 0.5e-12, 20);
    let curve = HomCurve::new(CurveKind::TwoPhoton, ts.clone(), vec![1.0; 20]).unwrap();
    assert!(fit_hom(&curve, &guess(), &HomFitOptions::default()).is_err());
    let few = HomCurve::new(CurveKind::TwoPhoton, ts[..5].to_vec(), vec![1.0; 5]).unwrap();
    assert!(fit_hom(&few, &guess(), &HomFitOptions::default()).is_err());
}

#[test]
fn visibility_of_noiseless_two_photon_curve() {
    let (d, s) = (delta(), delta() / 10.0);
    let (curve, report) = sweep_closed(CurveKind::TwoPhoton, &delays(-5e-12, 5e-12, 201), 4, d, s).unwrap();
    // Only τ = 0 dips below zero, by the dropped separation terms.
    assert!(report.clamped <= 1 && report.max_excess < 1e-10);
    let v = visibility(&curve, Baseline::Fixed(0.5)).unwrap();
    assert!((v - 1.0).abs() < 1e-9);
    let flat = HomCurve::new(CurveKind::Heralded, delays(-1.0, 1.0, 11), vec![0.5; 11]).unwrap();
    assert_eq!(visibility(&flat, Baseline::Tails).unwrap(), 0.0);
}

#[test]
fn heralded_closed_form_visibility() {
    let (d, s) = (delta(), delta() / 10.0);
    for n in 1..=6 {
        let v = (0.5 - p4_closed(0.0, n, d, s)) / 0.5;
        assert!((v - 1.0 / (2 * n) as f64).abs() < 1e-9);
    }
    assert!((p4_closed(0.0, 4, d, s) - 0.4375).abs() < 1e-12);
    assert!(p2_closed(2.0 * PI * 1e-9, 4, d, s) - 0.5 < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quadrature_is_even_in_delay(t in 0.0f64..8e-12) {
        let jsa = matched_comb_jsa(2, delta(), delta() / 6.0, 96);
        let a = p2_numeric(&jsa, t).unwrap();
        let b = p2_numeric(&jsa, -t).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        let c = p4_numeric(&jsa, t).unwrap();
        let d = p4_numeric(&jsa, -t).unwrap();
        prop_assert!((c - d).abs() < 1e-12);
    }

    #[test]
    fn closed_forms_are_probabilities(t in -2e-11f64..2e-11, n in 1usize..6, ratio in 1.0f64..20.0) {
        let d = delta();
        let s = d / ratio;
        prop_assert!((0.0..=1.0).contains(&p2_closed(t, n, d, s)));
        prop_assert!((0.0..=1.0).contains(&p4_closed(t, n, d, s)));
    }
}
