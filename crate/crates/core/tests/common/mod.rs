#![allow(dead_code)]

use num_complex::Complex64;
use qpmforge_core::biphoton::{build_jsa, DispersionMap, FrequencyGrid, JointSpectralAmplitude, PumpSpec};
use qpmforge_core::crystal::{target_pmf, CombSpec};
use qpmforge_core::presets;

/// Arbitrary slope for synthetic combs; only `β·ς` enters the JSA.
const SLOPE: f64 = 1e-9;

/// JSA of a comb whose PMF peaks have the pump's width `sigma` (rad/s, in
/// `ν_i − ν_s`) and spacing `delta` in the same variable. `n_pairs = 1` with
/// `delta = 0` is a single Gaussian.
pub fn matched_comb_jsa(n_pairs: usize, delta: f64, sigma: f64, points: usize) -> JointSpectralAmplitude {
    let pump = PumpSpec::new(presets::PUMP_WAVELENGTH_M, 2.0 * std::f64::consts::LN_2.sqrt() / sigma).unwrap();
    let width = 1.0 / (SLOPE * sigma);
    let comb = CombSpec::new(n_pairs, SLOPE * delta, width, presets::qpm_center(), 4.5 * width).unwrap();
    let map = DispersionMap::new(SLOPE, comb.center()).unwrap();
    // Outer bins sit at ±(2n−1)δ/4 per photon; leave eight photon widths.
    let half = (2 * n_pairs - 1) as f64 * delta / 4.0 + 8.0 * sigma;
    let grid = FrequencyGrid::square(half, points, pump.degenerate_frequency_hz()).unwrap();
    build_jsa(&pump, |dk| Complex64::new(target_pmf(&comb, dk), 0.0), &map, &grid).unwrap()
}

/// Ideal comb JSA at the preset parameters.
pub fn preset_jsa(points: usize) -> JointSpectralAmplitude {
    let comb = presets::comb();
    build_jsa(
        &presets::pump(),
        |dk| Complex64::new(target_pmf(&comb, dk), 0.0),
        &presets::dispersion(),
        &presets::grid_with(points).unwrap(),
    )
    .unwrap()
}

pub fn delays(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}
