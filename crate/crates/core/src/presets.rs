//! Default configuration of the 4-pair, 500 GHz frequency-bin source.

use std::f64::consts::PI;

use crate::biphoton::{DispersionMap, FrequencyGrid, PumpSpec};
use crate::crystal::CombSpec;
use crate::error::Result;

pub const CRYSTAL_LENGTH_M: f64 = 0.03;
pub const DOMAIN_WIDTH_M: f64 = 23e-6;
/// ς = L / 4.5.
pub const PEAK_WIDTH_M: f64 = CRYSTAL_LENGTH_M / 4.5;
pub const BIN_PAIRS: usize = 4;
pub const BIN_SPACING_HZ: f64 = 500e9;
pub const PUMP_WAVELENGTH_M: f64 = 777.85e-9;
pub const PUMP_DURATION_S: f64 = 1.3e-12;
/// PMF peak width over pump spectral width, both in the amplitude sense.
pub const PMF_PUMP_WIDTH_RATIO: f64 = 0.827;
pub const GRID_POINTS: usize = 1024;
/// Half span of each detuning axis, in Hz.
pub const GRID_HALF_SPAN_HZ: f64 = 2.5e12;

pub fn qpm_center() -> f64 {
    PI / DOMAIN_WIDTH_M
}

pub fn pump() -> PumpSpec {
    PumpSpec::new(PUMP_WAVELENGTH_M, PUMP_DURATION_S).expect("valid pump preset")
}

pub fn dispersion() -> DispersionMap {
    DispersionMap::with_width_ratio(&pump(), PEAK_WIDTH_M, PMF_PUMP_WIDTH_RATIO, qpm_center())
        .expect("valid dispersion preset")
}

/// Comb spacing δ that puts neighbouring bins `bin_spacing_hz` apart under `map`.
pub fn comb_spacing(map: &DispersionMap, bin_spacing_hz: f64) -> f64 {
    2.0 * map.slope().abs() * 2.0 * PI * bin_spacing_hz
}

pub fn comb() -> CombSpec {
    comb_with_pairs(BIN_PAIRS)
}

pub fn comb_with_pairs(pairs: usize) -> CombSpec {
    CombSpec::new(
        pairs,
        comb_spacing(&dispersion(), BIN_SPACING_HZ),
        PEAK_WIDTH_M,
        qpm_center(),
        CRYSTAL_LENGTH_M,
    )
    .expect("valid comb preset")
}

pub fn grid() -> FrequencyGrid {
    grid_with(GRID_POINTS).expect("valid grid preset")
}

pub fn grid_with(points: usize) -> Result<FrequencyGrid> {
    FrequencyGrid::square(2.0 * PI * GRID_HALF_SPAN_HZ, points, pump().degenerate_frequency_hz())
}
