//! Time-of-flight spectrometer: a dispersive fibre maps wavelength to arrival
//! time, detectors add Gaussian jitter, and arrivals are histogrammed into a
//! square grid of time bins (rows = idler, columns = signal).

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::biphoton::{
    Axis, FrequencyGrid, JointSpectralAmplitude, JointSpectralIntensity, SpectralPhase, SPEED_OF_LIGHT,
};
use crate::error::{invalid, Error, Result};
use crate::sampling::{binomial, multinomial, trial_rng};

/// Jitter kernel truncation in standard deviations.
pub const JITTER_TRUNCATION: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrometerSpec {
    pub dispersion_ps_per_nm_km: f64,
    pub fiber_length_km: f64,
    /// Per-detector timing jitter, FWHM in seconds. Zero disables the blur.
    pub jitter_fwhm: f64,
    pub time_bin: f64,
    /// Window is `[−window/2, window/2)` around the reference wavelength.
    pub window: f64,
    pub center_wavelength: f64,
    /// Largest tolerated probability of an arrival falling outside the window.
    pub alias_tolerance: f64,
    /// Scalar thinning of `total_events`; 1 disables it.
    pub efficiency: f64,
}

impl Default for SpectrometerSpec {
    fn default() -> Self {
        Self {
            dispersion_ps_per_nm_km: 20.0,
            fiber_length_km: 20.0,
            jitter_fwhm: 50e-12,
            time_bin: 25e-12,
            window: 12.5e-9,
            center_wavelength: 1555.7e-9,
            alias_tolerance: 2e-2,
            efficiency: 1.0,
        }
    }
}

impl SpectrometerSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dispersion_ps_per_nm_km", self.dispersion_ps_per_nm_km),
            ("fiber_length_km", self.fiber_length_km),
            ("time_bin", self.time_bin),
            ("window", self.window),
            ("center_wavelength", self.center_wavelength),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be > 0"));
            }
        }
        if !(self.jitter_fwhm.is_finite() && self.jitter_fwhm >= 0.0) {
            return Err(invalid("jitter_fwhm", "must be >= 0"));
        }
        if !(self.alias_tolerance >= 0.0 && self.alias_tolerance <= 1.0) {
            return Err(invalid("alias_tolerance", "must be in [0, 1]"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid("efficiency", "must be in (0, 1]"));
        }
        let ratio = self.window / self.time_bin;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(invalid("window", "must be an integer number of time bins"));
        }
        Ok(())
    }

    /// `D·L` in s/m (numerically equal to ns/nm).
    pub fn dispersion(&self) -> f64 {
        self.dispersion_ps_per_nm_km * 1e-12 / 1e-9 * self.fiber_length_km
    }

    pub fn bins(&self) -> usize {
        (self.window / self.time_bin).round() as usize
    }

    pub fn window_start(&self) -> f64 {
        -0.5 * self.window
    }

    pub fn jitter_sigma(&self) -> f64 {
        self.jitter_fwhm / (2.0 * (2.0 * 2f64.ln()).sqrt())
    }

    /// Wavelength span of one time bin.
    pub fn spectral_resolution(&self) -> f64 {
        self.time_bin / self.dispersion()
    }
}

/// Arrival time relative to the reference wavelength; error if it falls
/// outside the acquisition window.
pub fn wavelength_to_time(spec: &SpectrometerSpec, wavelength: f64) -> Result<f64> {
    let t = spec.dispersion() * (wavelength - spec.center_wavelength);
    let lo = spec.window_start();
    if !(t >= lo && t < lo + spec.window) {
        return Err(Error::OutsideWindow {
            time_s: t,
            window_s: spec.window,
        });
    }
    Ok(t)
}

pub fn time_to_wavelength(spec: &SpectrometerSpec, t: f64) -> f64 {
    spec.center_wavelength + t / spec.dispersion()
}

/// Unchecked arrival time of a photon at angular detuning `nu` from `optical_center_hz`.
fn detuning_to_time(spec: &SpectrometerSpec, optical_center_hz: f64, nu: f64) -> f64 {
    let wavelength = SPEED_OF_LIGHT / (optical_center_hz + nu / (2.0 * PI));
    spec.dispersion() * (wavelength - spec.center_wavelength)
}

/// Coincidence histogram on the spectrometer grid. Time bin `k` covers
/// `[t0 + k·dt, t0 + (k+1)·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    counts: DMatrix<u64>,
    dt: f64,
    t0: f64,
    dispersion: f64,
    center_wavelength: f64,
}

impl CountMatrix {
    pub fn new(counts: DMatrix<u64>, dt: f64, t0: f64, dispersion: f64, center_wavelength: f64) -> Result<Self> {
        if counts.nrows() != counts.ncols() || counts.is_empty() {
            return Err(invalid("counts", "must be a non-empty square matrix"));
        }
        for (name, v) in [("dt", dt), ("dispersion", dispersion), ("center_wavelength", center_wavelength)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be > 0"));
            }
        }
        if !t0.is_finite() {
            return Err(invalid("t0", "must be finite"));
        }
        Ok(Self {
            counts,
            dt,
            t0,
            dispersion,
            center_wavelength,
        })
    }

    pub fn zeros(spec: &SpectrometerSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.bins();
        Self::new(
            DMatrix::zeros(n, n),
            spec.time_bin,
            spec.window_start(),
            spec.dispersion(),
            spec.center_wavelength,
        )
    }

    pub fn counts(&self) -> &DMatrix<u64> {
        &self.counts
    }

    pub fn nt(&self) -> usize {
        self.counts.nrows()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn center_wavelength(&self) -> f64 {
        self.center_wavelength
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn time_center(&self, k: usize) -> f64 {
        self.t0 + (k as f64 + 0.5) * self.dt
    }

    pub fn wavelength_center(&self, k: usize) -> f64 {
        self.center_wavelength + self.time_center(k) / self.dispersion
    }

    /// Frequency axis linearized about the reference wavelength; decreasing
    /// with arrival time.
    pub fn frequency_axis(&self) -> Result<Axis> {
        let slope = -2.0 * PI * SPEED_OF_LIGHT / (self.center_wavelength.powi(2) * self.dispersion);
        Axis::new(slope * self.time_center(0), slope * self.dt, self.nt())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# nt={} dt_ps={} t0_ns={} disp_ns_per_nm={}",
            self.nt(),
            round_sig(self.dt * 1e12),
            round_sig(self.t0 * 1e9),
            round_sig(self.dispersion)
        )?;
        let mut line = String::new();
        for i in 0..self.nt() {
            line.clear();
            for s in 0..self.nt() {
                if s > 0 {
                    line.push(',');
                }
                line.push_str(&self.counts[(i, s)].to_string());
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads the count-matrix format. The header has no reference wavelength,
    /// so the caller supplies it.
    pub fn read_from<R: BufRead>(input: R, center_wavelength: f64) -> Result<Self> {
        let mut header: Option<(usize, f64, f64, f64)> = None;
        let mut rows: Vec<Vec<u64>> = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                header = Some(parse_count_header(rest, lineno)?);
                continue;
            }
            let row = t
                .split(',')
                .map(|v| {
                    v.trim().parse::<u64>().map_err(|e| Error::Parse {
                        line: lineno,
                        reason: format!("bad count `{}`: {e}", v.trim()),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let (nt, dt_ps, t0_ns, disp) = header.ok_or(Error::Parse {
            line: 1,
            reason: "missing `# nt=` header".into(),
        })?;
        if rows.len() != nt {
            return Err(Error::Parse {
                line: rows.len() + 1,
                reason: format!("expected {nt} rows, found {}", rows.len()),
            });
        }
        if let Some(k) = rows.iter().position(|r| r.len() != nt) {
            return Err(Error::Parse {
                line: k + 2,
                reason: format!("expected {nt} columns, found {}", rows[k].len()),
            });
        }
        Self::new(
            DMatrix::from_fn(nt, nt, |i, s| rows[i][s]),
            dt_ps * 1e-12,
            t0_ns * 1e-9,
            disp,
            center_wavelength,
        )
    }
}

fn round_sig(v: f64) -> f64 {
    // Strip binary noise from unit conversion so the header prints as written.
    let s = format!("{v:.12e}");
    s.parse().unwrap_or(v)
}

fn parse_count_header(rest: &str, line: usize) -> Result<(usize, f64, f64, f64)> {
    let (mut nt, mut dt, mut t0, mut disp) = (None, None, None, None);
    for tok in rest.split_whitespace() {
        let Some((k, v)) = tok.split_once('=') else {
            continue;
        };
        let num = || {
            v.parse::<f64>().map_err(|e| Error::Parse {
                line,
                reason: format!("bad header value for {k}: {e}"),
            })
        };
        match k {
            "nt" => {
                nt = Some(v.parse::<usize>().map_err(|e| Error::Parse {
                    line,
                    reason: format!("bad nt: {e}"),
                })?)
            }
            "dt_ps" => dt = Some(num()?),
            "t0_ns" => t0 = Some(num()?),
            "disp_ns_per_nm" => disp = Some(num()?),
            _ => {}
        }
    }
    match (nt, dt, t0, disp) {
        (Some(a), Some(b), Some(c), Some(d)) => Ok((a, b, c, d)),
        _ => Err(Error::Parse {
            line,
            reason: "header needs nt, dt_ps, t0_ns and disp_ns_per_nm".into(),
        }),
    }
}

/// Antiderivative of the ±5σ-truncated, renormalized standard normal CDF.
fn truncated_cdf_integral(y: f64) -> f64 {
    let c = JITTER_TRUNCATION;
    if y <= -c {
        return 0.0;
    }
    if y >= c {
        return c + (y - c);
    }
    let phi = |x: f64| 0.5 * erfc(-x / std::f64::consts::SQRT_2);
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    let psi = |x: f64| x * phi(x) + pdf(x);
    let tail = phi(-c);
    (psi(y) - psi(-c) - (y + c) * tail) / (1.0 - 2.0 * tail)
}

/// Probability that an arrival uniform on `[a, b)` and blurred by the jitter
/// kernel lands before `x`.
fn blurred_box_cdf(x: f64, a: f64, b: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return ((x - a) / (b - a)).clamp(0.0, 1.0);
    }
    let v = sigma / (b - a) * (truncated_cdf_integral((x - a) / sigma) - truncated_cdf_integral((x - b) / sigma));
    v.clamp(0.0, 1.0)
}

/// Linear map from a frequency-grid intensity to expected coincidence
/// probabilities per time-bin pair: `P = T_i · JSI · T_sᵀ`.
#[derive(Debug, Clone)]
pub struct TofsForward {
    spec: SpectrometerSpec,
    idler: DMatrix<f64>,
    signal: DMatrix<f64>,
}

impl TofsForward {
    pub fn new(spec: &SpectrometerSpec, grid: &FrequencyGrid) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            idler: transfer(spec, &grid.idler, grid.optical_center_hz),
            signal: transfer(spec, &grid.signal, grid.optical_center_hz),
        })
    }

    pub fn spec(&self) -> &SpectrometerSpec {
        &self.spec
    }

    /// [`Self::project`] followed by the aliasing check against [`SpectrometerSpec::alias_tolerance`].
    pub fn expected(&self, jsi: &JointSpectralIntensity) -> Result<ExpectedCounts> {
        let e = self.project(jsi)?;
        if e.outside_mass > self.spec.alias_tolerance {
            return Err(Error::Aliasing {
                mass: e.outside_mass,
                limit: self.spec.alias_tolerance,
            });
        }
        Ok(e)
    }

    /// Expected time-grid probabilities without the aliasing check; the
    /// caller decides how much out-of-window mass is acceptable.
    pub fn project(&self, jsi: &JointSpectralIntensity) -> Result<ExpectedCounts> {
        let p = jsi.probabilities();
        if p.nrows() != self.idler.ncols() || p.ncols() != self.signal.ncols() {
            return Err(invalid("jsi", "grid differs from the one the model was built for"));
        }
        let prob = &self.idler * p * self.signal.transpose();
        let inside: f64 = prob.iter().sum();
        let outside = (1.0 - inside).max(0.0);
        Ok(ExpectedCounts {
            prob,
            outside_mass: outside,
            spec: self.spec.clone(),
        })
    }
}

/// Columns: frequency cells; rows: time bins. Each cell is a uniform box in
/// arrival time between the times of its two frequency edges.
fn transfer(spec: &SpectrometerSpec, axis: &Axis, optical_center_hz: f64) -> DMatrix<f64> {
    let nt = spec.bins();
    let t0 = spec.window_start();
    let dt = spec.time_bin;
    let sigma = spec.jitter_sigma();
    let half = 0.5 * axis.step().abs();
    let cols: Vec<Vec<f64>> = (0..axis.len())
        .into_par_iter()
        .map(|j| {
            let nu = axis.value(j);
            let ta = detuning_to_time(spec, optical_center_hz, nu + half);
            let tb = detuning_to_time(spec, optical_center_hz, nu - half);
            let (a, b) = (ta.min(tb), ta.max(tb));
            let reach = JITTER_TRUNCATION * sigma;
            let mut col = vec![0.0; nt];
            if b + reach < t0 || a - reach >= t0 + nt as f64 * dt {
                return col;
            }
            let first = (((a - reach - t0) / dt).floor().max(0.0)) as usize;
            let last = ((((b + reach - t0) / dt).ceil()) as usize).min(nt);
            let mut prev = blurred_box_cdf(t0 + first as f64 * dt, a, b, sigma);
            for (k, slot) in col.iter_mut().enumerate().take(last).skip(first) {
                let next = blurred_box_cdf(t0 + (k + 1) as f64 * dt, a, b, sigma);
                *slot = (next - prev).max(0.0);
                prev = next;
            }
            col
        })
        .collect();
    DMatrix::from_fn(nt, axis.len(), |k, j| cols[j][k])
}

/// Expected cell probabilities on the time grid.
#[derive(Debug, Clone)]
pub struct ExpectedCounts {
    prob: DMatrix<f64>,
    outside_mass: f64,
    spec: SpectrometerSpec,
}

impl ExpectedCounts {
    pub fn probabilities(&self) -> &DMatrix<f64> {
        &self.prob
    }

    /// Probability of an arrival outside the window on either axis.
    pub fn outside_mass(&self) -> f64 {
        self.outside_mass
    }

    /// Draws `total_events` (after efficiency thinning) over the in-window
    /// cells. Out-of-window arrivals are discarded, so the counts sum to the
    /// thinned total exactly.
    pub fn sample<R: Rng + ?Sized>(&self, total_events: u64, rng: &mut R) -> Result<CountMatrix> {
        let total = if self.spec.efficiency < 1.0 {
            binomial(total_events, self.spec.efficiency, rng)
        } else {
            total_events
        };
        let n = self.prob.nrows();
        // Row-major so the draw order follows the file layout.
        let flat: Vec<f64> = (0..n * n).map(|k| self.prob[(k / n, k % n)]).collect();
        let drawn = multinomial(total, &flat, rng);
        let counts = DMatrix::from_fn(n, n, |i, s| drawn[i * n + s]);
        CountMatrix::new(
            counts,
            self.spec.time_bin,
            self.spec.window_start(),
            self.spec.dispersion(),
            self.spec.center_wavelength,
        )
    }
}

/// Forward model plus multinomial draw; deterministic in `seed`.
pub fn simulate_counts(
    jsi: &JointSpectralIntensity,
    spec: &SpectrometerSpec,
    total_events: u64,
    seed: u64,
) -> Result<CountMatrix> {
    let expected = TofsForward::new(spec, jsi.grid())?.expected(jsi)?;
    expected.sample(total_events, &mut trial_rng(seed, 0))
}

#[derive(Debug, Clone)]
pub struct ReconstructedJsi {
    pub jsi: JointSpectralIntensity,
    /// Row sums, scaled to a maximum of 1.
    pub idler_marginal: Vec<f64>,
    /// Column sums, scaled to a maximum of 1.
    pub signal_marginal: Vec<f64>,
}

/// Normalized counts on the linearized frequency axis of the time grid.
pub fn reconstruct_jsi(counts: &CountMatrix) -> Result<ReconstructedJsi> {
    if counts.total() == 0 {
        return Err(Error::Empty);
    }
    let axis = counts.frequency_axis()?;
    let grid = FrequencyGrid::new(axis, axis, SPEED_OF_LIGHT / counts.center_wavelength);
    let jsi = JointSpectralIntensity::new(grid, counts.counts.map(|c| c as f64))?;
    let (idler, signal) = jsi.marginals();
    Ok(ReconstructedJsi {
        jsi,
        idler_marginal: peak_normalized(idler),
        signal_marginal: peak_normalized(signal),
    })
}

fn peak_normalized(mut v: Vec<f64>) -> Vec<f64> {
    let max = v.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        v.iter_mut().for_each(|x| *x /= max);
    }
    v
}

/// Entrywise square root of the intensity as an amplitude. The spectral phase
/// is unknown and recorded as assumed flat.
pub fn amplitude_from_jsi(jsi: &JointSpectralIntensity) -> Result<JointSpectralAmplitude> {
    let values = jsi.probabilities().map(|p| num_complex::Complex64::new(p.sqrt(), 0.0));
    JointSpectralAmplitude::with_phase(jsi.grid().clone(), values, SpectralPhase::AssumedFlat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_calibration_numbers() {
        let spec = SpectrometerSpec::default();
        spec.validate().unwrap();
        assert!((spec.dispersion() - 0.4).abs() < 1e-15);
        assert_eq!(spec.bins(), 500);
        let t = wavelength_to_time(&spec, spec.center_wavelength + 3.8e-9).unwrap();
        assert!((t - 1.52e-9).abs() < 1e-18);
        assert!((spec.spectral_resolution() - 0.0625e-9).abs() < 1e-20);
        assert!((spec.window / spec.dispersion() - 31.25e-9).abs() < 1e-20);
    }

    #[test]
    fn outside_window_is_an_error() {
        let spec = SpectrometerSpec::default();
        let err = wavelength_to_time(&spec, spec.center_wavelength + 20e-9).unwrap_err();
        assert!(matches!(err, Error::OutsideWindow { .. }));
        // Left-closed, right-open window.
        assert!(wavelength_to_time(&spec, spec.center_wavelength - 6.25e-9 / 0.4).is_ok());
    }

    #[test]
    fn calibration_roundtrip() {
        let spec = SpectrometerSpec::default();
        for t in [-6.2e-9, -1e-12, 0.0, 3.3e-9, 6.2e-9] {
            let back = wavelength_to_time(&spec, time_to_wavelength(&spec, t)).unwrap();
            assert!((back - t).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_fractional_bin_count() {
        let spec = SpectrometerSpec {
            window: 12.51e-9,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn truncated_kernel_integral_is_continuous() {
        let c = JITTER_TRUNCATION;
        assert!((truncated_cdf_integral(c - 1e-12) - c).abs() < 1e-9);
        assert!(truncated_cdf_integral(-c + 1e-12).abs() < 1e-9);
        // Symmetric kernel: H(y) − H(−y) = y.
        for y in [0.3, 1.7, 4.0] {
            assert!((truncated_cdf_integral(y) - truncated_cdf_integral(-y) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn blurred_box_cdf_limits() {
        let s = 2e-11;
        assert_eq!(blurred_box_cdf(-1e-9, 0.0, 1e-11, s), 0.0);
        assert_eq!(blurred_box_cdf(1e-9, 0.0, 1e-11, s), 1.0);
        assert!((blurred_box_cdf(0.5e-11, 0.0, 1e-11, s) - 0.5).abs() < 1e-12);
        assert!((blurred_box_cdf(0.5e-11, 0.0, 1e-11, 0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn count_file_roundtrip() {
        let counts = DMatrix::from_row_slice(3, 3, &[0, 1, 2, 3, 4, 5, 6, 7, 800]);
        let m = CountMatrix::new(counts, 25e-12, -37.5e-12, 0.4, 1555.7e-9).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# nt=3 dt_ps=25 t0_ns=-0.0375 disp_ns_per_nm=0.4\n0,1,2\n"), "{text}");
        let back = CountMatrix::read_from(&buf[..], 1555.7e-9).unwrap();
        assert_eq!(back.counts(), m.counts());
        assert!((back.dt() - m.dt()).abs() < 1e-24);
        let bad = b"# nt=2 dt_ps=25 t0_ns=0 disp_ns_per_nm=0.4\n1,2\n3,x\n";
        assert!(matches!(CountMatrix::read_from(&bad[..], 1.5e-6), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn zero_events_give_zero_matrix() {
        let spec = SpectrometerSpec::default();
        let grid = FrequencyGrid::square(2.0 * PI * 1e12, 64, SPEED_OF_LIGHT / spec.center_wavelength).unwrap();
        let jsi = JointSpectralIntensity::new(grid, DMatrix::from_element(64, 64, 1.0)).unwrap();
        let c = simulate_counts(&jsi, &spec, 0, 1).unwrap();
        assert_eq!(c.total(), 0);
        assert_eq!(c.nt(), 500);
    }

    #[test]
    fn single_cell_reconstructs_rank_one() {
        let mut counts = DMatrix::zeros(4, 4);
        counts[(1, 2)] = 10;
        let m = CountMatrix::new(counts, 25e-12, -50e-12, 0.4, 1555.7e-9).unwrap();
        let r = reconstruct_jsi(&m).unwrap();
        assert_eq!(r.idler_marginal, vec![0.0, 1.0, 0.0, 0.0]);
        let amp = amplitude_from_jsi(&r.jsi).unwrap();
        assert_eq!(amp.phase(), SpectralPhase::AssumedFlat);
        let w = crate::analysis::schmidt_weights(&amp).unwrap();
        assert_eq!(crate::analysis::schmidt_number(&w).unwrap(), 1.0);
        assert!(reconstruct_jsi(&CountMatrix::new(DMatrix::zeros(2, 2), 1.0, 0.0, 0.4, 1.5e-6).unwrap()).is_err());
    }
}
