//! Joint spectral amplitude of the down-converted pair on a signal×idler
//! detuning grid.
//!
//! Detunings are angular frequencies (rad/s) measured from degeneracy. Matrices
//! are indexed `(idler, signal)`.

use std::f64::consts::{LN_2, PI};
use std::io::{BufRead, Write};

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::crystal::CombSpec;
use crate::error::{invalid, Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Fraction of the norm allowed on the outermost rows/columns before warning.
pub const BOUNDARY_WARN_FRACTION: f64 = 1e-3;

/// Uniform axis `start + k·step`, `k = 0..len`. `step` may be negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    start: f64,
    step: f64,
    len: usize,
}

impl Axis {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if !(start.is_finite() && step.is_finite()) || step == 0.0 {
            return Err(invalid("axis", "start/step must be finite and step non-zero"));
        }
        Ok(Self { start, step, len })
    }

    /// Axis symmetric about zero.
    pub fn centered(step: f64, len: usize) -> Result<Self> {
        let start = -0.5 * (len.saturating_sub(1)) as f64 * step;
        Self::new(start, step, len)
    }

    /// `len` points spanning `[−half_span, half_span]` inclusive.
    pub fn symmetric(half_span: f64, len: usize) -> Result<Self> {
        if !(half_span.is_finite() && half_span > 0.0) {
            return Err(invalid("half_span", "must be > 0"));
        }
        if len < 2 {
            return Err(invalid("len", "need at least 2 points"));
        }
        Self::centered(2.0 * half_span / (len - 1) as f64, len)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn value(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.value(k)).collect()
    }

    pub fn is_centered(&self) -> bool {
        let mid = self.start + 0.5 * (self.len.saturating_sub(1)) as f64 * self.step;
        mid.abs() <= 1e-9 * self.step.abs()
    }

    fn matches(&self, other: &Axis) -> bool {
        self.len == other.len
            && (self.step - other.step).abs() <= 1e-12 * self.step.abs()
            && (self.start - other.start).abs() <= 1e-9 * self.step.abs()
    }
}

/// Signal and idler detuning axes plus the optical frequency they are measured from.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub signal: Axis,
    pub idler: Axis,
    /// Degenerate optical frequency in Hz.
    pub optical_center_hz: f64,
}

impl FrequencyGrid {
    pub fn new(signal: Axis, idler: Axis, optical_center_hz: f64) -> Self {
        Self {
            signal,
            idler,
            optical_center_hz,
        }
    }

    /// Square grid with `len` points per axis over `±half_span` rad/s.
    pub fn square(half_span: f64, len: usize, optical_center_hz: f64) -> Result<Self> {
        let axis = Axis::symmetric(half_span, len)?;
        Ok(Self::new(axis, axis, optical_center_hz))
    }

    pub fn cell_area(&self) -> f64 {
        (self.signal.step * self.idler.step).abs()
    }

    /// Signal and idler axes identical and centred, so that swapping the two
    /// photons is a matrix transpose.
    pub fn is_exchange_symmetric(&self) -> bool {
        self.signal.matches(&self.idler) && self.signal.is_centered()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.idler.len, self.signal.len)
    }
}

/// Transform-limited Gaussian pump pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpSpec {
    center_wavelength: f64,
    duration_fwhm: f64,
}

impl PumpSpec {
    /// `duration_fwhm` is the intensity FWHM of the pulse in seconds.
    pub fn new(center_wavelength: f64, duration_fwhm: f64) -> Result<Self> {
        if !(center_wavelength.is_finite() && center_wavelength > 0.0) {
            return Err(invalid("center_wavelength", "must be > 0"));
        }
        if !(duration_fwhm.is_finite() && duration_fwhm > 0.0) {
            return Err(invalid("duration_fwhm", "must be > 0"));
        }
        Ok(Self {
            center_wavelength,
            duration_fwhm,
        })
    }

    pub fn center_wavelength(&self) -> f64 {
        self.center_wavelength
    }

    pub fn duration_fwhm(&self) -> f64 {
        self.duration_fwhm
    }

    /// Spectral width σ of the amplitude `exp(−ν²/2σ²)`.
    ///
    /// A transform-limited Gaussian with intensity FWHM `t` has an intensity
    /// spectrum of FWHM `4 ln2 / t` (rad/s). Its amplitude is
    /// `exp(−ν²/2σ²)`, whose square has FWHM `2σ√ln2`, hence
    /// `σ = 2√ln2 / t`.
    pub fn sigma(&self) -> f64 {
        2.0 * LN_2.sqrt() / self.duration_fwhm
    }

    /// Optical frequency (Hz) of the degenerate down-converted photons.
    pub fn degenerate_frequency_hz(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.center_wavelength)
    }
}

/// Pump amplitude at total detuning `nu_sum = ν_s + ν_i`.
pub fn pump_envelope(pump: &PumpSpec, nu_sum: f64) -> f64 {
    let s = pump.sigma();
    (-nu_sum * nu_sum / (2.0 * s * s)).exp()
}

/// Linear symmetric group-velocity map `Δk = Δk₀ + β(ν_i − ν_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionMap {
    slope: f64,
    center: f64,
}

impl DispersionMap {
    /// `slope` β in s/m ((rad/m) per (rad/s)), `center` Δk₀ in rad/m.
    pub fn new(slope: f64, center: f64) -> Result<Self> {
        if !slope.is_finite() || slope == 0.0 {
            return Err(invalid("slope", "β must be finite and non-zero"));
        }
        if !center.is_finite() {
            return Err(invalid("center", "must be finite"));
        }
        Ok(Self { slope, center })
    }

    /// Slope that makes the PMF peak width in `ν_i − ν_s` equal to
    /// `ratio · σ_pump` for a comb of peak width ς.
    pub fn with_width_ratio(pump: &PumpSpec, peak_width: f64, ratio: f64, center: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0) {
            return Err(invalid("width_ratio", "must be > 0"));
        }
        Self::new(1.0 / (peak_width * ratio * pump.sigma()), center)
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn delta_k(&self, nu_idler: f64, nu_signal: f64) -> f64 {
        self.center + self.slope * (nu_idler - nu_signal)
    }

    /// Width σ of one comb peak in the `ν_i − ν_s` variable (rad/s).
    pub fn difference_width(&self, peak_width: f64) -> f64 {
        1.0 / (peak_width * self.slope.abs())
    }
}

/// Optical spacing (Hz) between neighbouring frequency bins produced by `comb`
/// through `map`: peaks sit at `ν_i − ν_s = ±(2j+1)δ/2β`, i.e. bins
/// `δ/(2β)` apart in each photon's angular frequency.
pub fn detuning_axes_to_bin_spacing(map: &DispersionMap, comb: &CombSpec) -> Result<f64> {
    if map.slope == 0.0 {
        return Err(invalid("slope", "β must be non-zero"));
    }
    Ok(comb.spacing() / (2.0 * map.slope.abs() * 2.0 * PI))
}

/// How the spectral phase of a JSA was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralPhase {
    /// Computed from a model.
    Modelled,
    /// Square root of a measured intensity, consistent with a flat spectral phase.
    AssumedFlat,
}

#[derive(Debug, Clone)]
pub struct JointSpectralAmplitude {
    grid: FrequencyGrid,
    values: DMatrix<Complex64>,
    boundary_fraction: f64,
    phase: SpectralPhase,
}

impl JointSpectralAmplitude {
    /// Wraps `values` (rows = idler) and normalizes to `Σ|f|²·Δν_s·Δν_i = 1`.
    pub fn from_values(grid: FrequencyGrid, values: DMatrix<Complex64>) -> Result<Self> {
        Self::with_phase(grid, values, SpectralPhase::Modelled)
    }

    pub(crate) fn with_phase(
        grid: FrequencyGrid,
        mut values: DMatrix<Complex64>,
        phase: SpectralPhase,
    ) -> Result<Self> {
        let (ni, ns) = grid.dims();
        if ni < 2 || ns < 2 {
            return Err(Error::GridTooSmall {
                signal: ns,
                idler: ni,
            });
        }
        if values.nrows() != ni || values.ncols() != ns {
            return Err(invalid(
                "values",
                format!("{}x{} matrix on a {ni}x{ns} grid", values.nrows(), values.ncols()),
            ));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite);
        }
        let total: f64 = values.iter().map(|v| v.norm_sqr()).sum();
        if total == 0.0 {
            return Err(Error::ZeroWeights);
        }
        let scale = 1.0 / (total * grid.cell_area()).sqrt();
        values.iter_mut().for_each(|v| *v *= scale);
        let boundary_fraction = boundary_fraction(&values, total * scale * scale);
        Ok(Self {
            grid,
            values,
            boundary_fraction,
            phase,
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<Complex64> {
        &self.values
    }

    pub fn phase(&self) -> SpectralPhase {
        self.phase
    }

    /// Share of `Σ|f|²` on the outermost rows and columns.
    pub fn boundary_fraction(&self) -> f64 {
        self.boundary_fraction
    }

    /// `Σ|f|²·Δν_s·Δν_i`; 1 after construction.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_area()
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    /// Cell probabilities `|f|²·Δν_s·Δν_i`.
    pub fn intensity(&self) -> JointSpectralIntensity {
        let area = self.grid.cell_area();
        JointSpectralIntensity {
            grid: self.grid.clone(),
            prob: self.values.map(|v| v.norm_sqr() * area),
        }
    }

    /// Photons exchanged: `f'(ν_i, ν_s) = f(ν_s, ν_i)`.
    pub fn exchanged(&self) -> Result<Self> {
        if !self.grid.is_exchange_symmetric() {
            return Err(Error::AsymmetricGrid);
        }
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.transpose(),
            boundary_fraction: self.boundary_fraction,
            phase: self.phase,
        })
    }

    pub fn write_to<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_matrix(out, &self.grid, self.values.nrows(), self.values.ncols(), |i, s| {
            let v = self.values[(i, s)];
            format!("{:e}{:+e}j", v.re, v.im)
        })
    }
}

fn boundary_fraction(values: &DMatrix<Complex64>, total: f64) -> f64 {
    let (r, c) = values.shape();
    let mut edge = 0.0;
    for i in 0..r {
        for j in 0..c {
            if i == 0 || j == 0 || i + 1 == r || j + 1 == c {
                edge += values[(i, j)].norm_sqr();
            }
        }
    }
    if total > 0.0 {
        edge / total
    } else {
        0.0
    }
}

/// Cell probabilities of a joint spectrum (sum 1).
#[derive(Debug, Clone)]
pub struct JointSpectralIntensity {
    pub(crate) grid: FrequencyGrid,
    pub(crate) prob: DMatrix<f64>,
}

impl JointSpectralIntensity {
    /// Normalizes `weights` to unit sum; rejects negative or non-finite entries.
    pub fn new(grid: FrequencyGrid, weights: DMatrix<f64>) -> Result<Self> {
        let (ni, ns) = grid.dims();
        if weights.nrows() != ni || weights.ncols() != ns {
            return Err(invalid("weights", "shape differs from grid"));
        }
        for ((row, col), &v) in weights.iter().enumerate().map(|(k, v)| ((k % ni, k / ni), v)) {
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            if v < 0.0 {
                return Err(Error::NegativeEntry {
                    row,
                    col,
                    value: v,
                });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroWeights);
        }
        Ok(Self {
            grid,
            prob: weights / total,
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn probabilities(&self) -> &DMatrix<f64> {
        &self.prob
    }

    /// Row sums (idler) and column sums (signal).
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let idler = (0..self.prob.nrows()).map(|i| self.prob.row(i).sum()).collect();
        let signal = (0..self.prob.ncols()).map(|s| self.prob.column(s).sum()).collect();
        (idler, signal)
    }

    pub fn write_to<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_matrix(out, &self.grid, self.prob.nrows(), self.prob.ncols(), |i, s| {
            format!("{:e}", self.prob[(i, s)])
        })
    }

    /// Reads the format written by [`JointSpectralIntensity::write_to`].
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut header: Option<(usize, usize, f64, f64, f64)> = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                header = Some(parse_grid_header(rest, lineno)?);
                continue;
            }
            let row = t
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: lineno,
                        reason: format!("bad value `{v}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let (ns, ni, dnu_s, dnu_i, nu0) = header.ok_or(Error::Parse {
            line: 1,
            reason: "missing grid header".into(),
        })?;
        if rows.len() != ni || rows.iter().any(|r| r.len() != ns) {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected {ni} rows of {ns} values"),
            });
        }
        let grid = FrequencyGrid::new(
            Axis::centered(2.0 * PI * dnu_s, ns)?,
            Axis::centered(2.0 * PI * dnu_i, ni)?,
            nu0,
        );
        let m = DMatrix::from_fn(ni, ns, |i, s| rows[i][s]);
        Self::new(grid, m)
    }
}

fn parse_grid_header(rest: &str, line: usize) -> Result<(usize, usize, f64, f64, f64)> {
    let mut ns = None;
    let mut ni = None;
    let mut dnu_s = None;
    let mut dnu_i = None;
    let mut nu0 = None;
    for tok in rest.split_whitespace() {
        let Some((k, v)) = tok.split_once('=') else {
            continue;
        };
        let bad = |e: &dyn std::fmt::Display| Error::Parse {
            line,
            reason: format!("bad header value for {k}: {e}"),
        };
        match k {
            "ns" => ns = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
            "ni" => ni = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
            "dnu_s" => dnu_s = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
            "dnu_i" => dnu_i = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
            "nu0" => nu0 = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
            _ => {}
        }
    }
    match (ns, ni, dnu_s, dnu_i, nu0) {
        (Some(a), Some(b), Some(c), Some(d), Some(e)) => Ok((a, b, c, d, e)),
        _ => Err(Error::Parse {
            line,
            reason: "header needs ns, ni, dnu_s, dnu_i and nu0".into(),
        }),
    }
}

fn write_matrix<W: Write>(
    mut out: W,
    grid: &FrequencyGrid,
    rows: usize,
    cols: usize,
    cell: impl Fn(usize, usize) -> String,
) -> std::io::Result<()> {
    writeln!(
        out,
        "# ns={} ni={} dnu_s={:e} dnu_i={:e} nu0={:e}",
        grid.signal.len,
        grid.idler.len,
        grid.signal.step / (2.0 * PI),
        grid.idler.step / (2.0 * PI),
        grid.optical_center_hz
    )?;
    let mut line = String::new();
    for i in 0..rows {
        line.clear();
        for s in 0..cols {
            if s > 0 {
                line.push(',');
            }
            line.push_str(&cell(i, s));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// `f(ν_i, ν_s) = α(ν_s + ν_i)·φ(Δk₀ + β(ν_i − ν_s))`, L2-normalized on the grid.
///
/// On an exchange-symmetric grid both arguments only take `2N − 1` distinct
/// values, so the PMF and pump are tabulated once per diagonal.
pub fn build_jsa<F>(
    pump: &PumpSpec,
    pmf: F,
    map: &DispersionMap,
    grid: &FrequencyGrid,
) -> Result<JointSpectralAmplitude>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    let (ni, ns) = grid.dims();
    if ni < 2 || ns < 2 {
        return Err(Error::GridTooSmall {
            signal: ns,
            idler: ni,
        });
    }
    let values = if grid.is_exchange_symmetric() {
        let n = ns;
        let step = grid.signal.step;
        // diff index m = i − s + (n − 1), sum index k = i + s.
        let phi: Vec<Complex64> = (0..2 * n - 1)
            .into_par_iter()
            .map(|m| {
                let d = (m as f64 - (n - 1) as f64) * step;
                pmf(map.center + map.slope * d)
            })
            .collect();
        let alpha: Vec<f64> = (0..2 * n - 1)
            .map(|k| pump_envelope(pump, (k as f64 - (n - 1) as f64) * step))
            .collect();
        let rows: Vec<Vec<Complex64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|s| phi[i + n - 1 - s] * alpha[i + s])
                    .collect()
            })
            .collect();
        DMatrix::from_fn(n, n, |i, s| rows[i][s])
    } else {
        let rows: Vec<Vec<Complex64>> = (0..ni)
            .into_par_iter()
            .map(|i| {
                let nu_i = grid.idler.value(i);
                (0..ns)
                    .map(|s| {
                        let nu_s = grid.signal.value(s);
                        pmf(map.delta_k(nu_i, nu_s)) * pump_envelope(pump, nu_i + nu_s)
                    })
                    .collect()
            })
            .collect();
        DMatrix::from_fn(ni, ns, |i, s| rows[i][s])
    };
    let jsa = JointSpectralAmplitude::from_values(grid.clone(), values)?;
    if jsa.boundary_fraction > BOUNDARY_WARN_FRACTION {
        warn!(
            "{:.2e} of the JSA norm lies on the grid boundary; widen the grid",
            jsa.boundary_fraction
        );
    }
    Ok(jsa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::target_pmf;

    fn pump() -> PumpSpec {
        PumpSpec::new(777.85e-9, 1.3e-12).unwrap()
    }

    #[test]
    fn pump_envelope_peak_and_half_width() {
        let p = pump();
        assert_eq!(pump_envelope(&p, 0.0), 1.0);
        // Intensity FWHM of the spectrum is 4 ln2 / t; amplitude there is 1/√2.
        let half = 2.0 * LN_2 / p.duration_fwhm();
        assert!((pump_envelope(&p, half) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(pump_envelope(&p, 3e11), pump_envelope(&p, -3e11));
    }

    #[test]
    fn rejects_zero_slope() {
        assert!(DispersionMap::new(0.0, 1.0).is_err());
    }

    #[test]
    fn bin_spacing_scales_inversely_with_slope() {
        let comb = CombSpec::new(4, 900.0, 0.03 / 4.5, 1.0e5, 0.03).unwrap();
        let a = DispersionMap::new(1.4e-10, 1.0e5).unwrap();
        let b = DispersionMap::new(2.8e-10, 1.0e5).unwrap();
        let sa = detuning_axes_to_bin_spacing(&a, &comb).unwrap();
        let sb = detuning_axes_to_bin_spacing(&b, &comb).unwrap();
        assert!((sa / sb - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_tiny_grid() {
        let grid = FrequencyGrid::new(
            Axis::centered(1.0, 1).unwrap(),
            Axis::centered(1.0, 4).unwrap(),
            1.0,
        );
        let map = DispersionMap::new(1e-10, 0.0).unwrap();
        let err = build_jsa(&pump(), |_| Complex64::new(1.0, 0.0), &map, &grid).unwrap_err();
        assert!(matches!(err, Error::GridTooSmall { .. }));
    }

    #[test]
    fn jsa_is_normalized_and_exchange_symmetric() {
        let p = pump();
        let comb = CombSpec::new(4, 900.0, 0.03 / 4.5, 1.0e5, 0.03).unwrap();
        let map = DispersionMap::new(1.43e-10, comb.center()).unwrap();
        let grid = FrequencyGrid::square(2.0 * PI * 2.5e12, 128, 1.9e14).unwrap();
        let jsa = build_jsa(&p, |dk| Complex64::new(target_pmf(&comb, dk), 0.0), &map, &grid)
            .unwrap();
        assert!((jsa.norm() - 1.0).abs() < 1e-10);
        let v = jsa.values();
        for i in 0..128 {
            for s in 0..128 {
                assert!((v[(i, s)] - v[(s, i)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn general_and_tabulated_paths_agree() {
        let p = pump();
        let map = DispersionMap::new(1.43e-10, 0.0).unwrap();
        let pmf = |dk: f64| Complex64::new((-(dk * 3e-3).powi(2)).exp(), 0.1 * dk * 1e-4);
        let sym = FrequencyGrid::square(4e12, 40, 1.9e14).unwrap();
        let a = build_jsa(&p, pmf, &map, &sym).unwrap();
        // Same axes but flagged as different by a negligible start shift.
        let shifted = FrequencyGrid::new(
            sym.signal,
            Axis::new(sym.idler.start() * (1.0 + 1e-15), sym.idler.step(), 40).unwrap(),
            1.9e14,
        );
        let b = build_jsa(&p, pmf, &map, &shifted).unwrap();
        let diff = (a.values() - b.values()).norm();
        assert!(diff < 1e-9 * a.values().norm(), "{diff}");
    }

    #[test]
    fn boundary_mass_is_reported() {
        let p = pump();
        let map = DispersionMap::new(1.43e-10, 0.0).unwrap();
        // Grid much narrower than the pump: most of the norm touches the edges.
        let grid = FrequencyGrid::square(1e11, 16, 1.9e14).unwrap();
        let jsa = build_jsa(&p, |_| Complex64::new(1.0, 0.0), &map, &grid).unwrap();
        assert!(jsa.boundary_fraction() > BOUNDARY_WARN_FRACTION);
    }

    #[test]
    fn jsi_file_roundtrip() {
        let grid = FrequencyGrid::square(1e12, 3, 1.9e14).unwrap();
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.5, 4.0, 1.0, 0.0, 0.0, 1.5]);
        let jsi = JointSpectralIntensity::new(grid, m).unwrap();
        let mut buf = Vec::new();
        jsi.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# ns=3 ni=3 dnu_s="));
        let back = JointSpectralIntensity::read_from(&buf[..]).unwrap();
        assert!((back.probabilities() - jsi.probabilities()).norm() < 1e-15);
        assert!((back.grid().signal.step() - jsi.grid().signal.step()).abs() < 1e-3);
    }

    #[test]
    fn jsi_rejects_negative() {
        let grid = FrequencyGrid::square(1e12, 2, 1.9e14).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.0, 0.5]);
        assert!(matches!(
            JointSpectralIntensity::new(grid, m),
            Err(Error::NegativeEntry { row: 0, col: 1, .. })
        ));
    }
}
