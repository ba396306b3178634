//! Run configuration: sectioned `key = value` text with SI units in key names.
//!
//! ```text
//! [crystal]
//! length_m = 0.03
//! domain_width_m = 23e-6
//! ```
//!
//! `#` and `;` start comments. Every key is optional; unknown sections and keys
//! are rejected with their line number.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qpmforge_core::biphoton::{DispersionMap, FrequencyGrid, PumpSpec};
use qpmforge_core::crystal::CombSpec;
use qpmforge_core::measurement::SpectrometerSpec;
use qpmforge_core::presets;
use qpmforge_core::tomography::DEFAULT_GATE_WIDTH_S;

use crate::error::CliError;

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw `section.key → value` table.
#[derive(Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let t = strip_comment(raw).trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::config_at(line, "unterminated section header"))?
                    .trim();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return Err(CliError::config_at(line, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = t
                .split_once('=')
                .ok_or_else(|| CliError::config_at(line, format!("expected `key = value`, got `{t}`")))?;
            let key = key.trim();
            let sec = section
                .clone()
                .ok_or_else(|| CliError::config_at(line, format!("`{key}` appears before any [section]")))?;
            let known = SECTIONS
                .iter()
                .find(|(s, _)| *s == sec)
                .is_some_and(|(_, keys)| keys.contains(&key));
            if !known {
                return Err(CliError::config_at(line, format!("unknown key `{key}` in [{sec}]")));
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if let Some(prev) = entries.insert((sec.clone(), key.to_string()), entry) {
                return Err(CliError::config_at(
                    line,
                    format!("`{sec}.{key}` already set on line {}", prev.line),
                ));
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let e = self.entries.get(&(section.to_string(), key.to_string()))?;
        Some((e.value.clone(), e.line))
    }

    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.entries.get(&(section.to_string(), key.to_string())).map(|e| e.line)
    }

    fn f64(&mut self, section: &str, key: &str, default: f64) -> Result<f64, CliError> {
        match self.take(section, key) {
            None => Ok(default),
            Some((v, line)) => parse_f64(&v).ok_or_else(|| bad(line, section, key, "a finite number", &v)),
        }
    }

    fn positive(&mut self, section: &str, key: &str, default: f64) -> Result<f64, CliError> {
        let v = self.f64(section, key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.invalid(section, key, format!("must be > 0, got {v}")))
        }
    }

    fn u64(&mut self, section: &str, key: &str, default: u64) -> Result<u64, CliError> {
        match self.take(section, key) {
            None => Ok(default),
            Some((v, line)) => parse_count(&v).ok_or_else(|| bad(line, section, key, "a non-negative integer", &v)),
        }
    }

    fn usize(&mut self, section: &str, key: &str, default: usize) -> Result<usize, CliError> {
        Ok(self.u64(section, key, default as u64)? as usize)
    }

    fn string(&mut self, section: &str, key: &str) -> Option<String> {
        self.take(section, key).map(|(v, _)| v)
    }

    fn invalid(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> CliError {
        match self.line_of(section, key) {
            Some(line) => CliError::config_at(line, format!("{section}.{key} {msg}")),
            None => CliError::config(format!("{section}.{key} {msg}")),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(k) => &line[..k],
        None => line,
    }
}

fn parse_f64(v: &str) -> Option<f64> {
    v.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Integers, also in exponent form (`4.3e7`) when the value is whole.
fn parse_count(v: &str) -> Option<u64> {
    if let Ok(n) = v.parse::<u64>() {
        return Some(n);
    }
    let x = parse_f64(v)?;
    (x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(63)).then_some(x as u64)
}

fn bad(line: usize, section: &str, key: &str, what: &str, got: &str) -> CliError {
    CliError::config_at(line, format!("{section}.{key} must be {what}, got `{got}`"))
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("run", &["seed", "threads"]),
    (
        "crystal",
        &[
            "length_m",
            "domain_width_m",
            "peak_width_m",
            "bin_pairs",
            "bin_spacing_hz",
            "pmf_pump_width_ratio",
            "pmf",
            "pmf_samples",
        ],
    ),
    ("pump", &["wavelength_m", "duration_s"]),
    ("grid", &["points", "half_span_hz"]),
    (
        "spectrometer",
        &[
            "dispersion_ps_per_nm_km",
            "fiber_length_km",
            "jitter_fwhm_s",
            "time_bin_s",
            "window_s",
            "center_wavelength_m",
            "alias_tolerance",
            "efficiency",
        ],
    ),
    ("hom", &["delay_min_s", "delay_max_s", "delay_points", "baseline_counts"]),
    ("tofs", &["events", "trials", "input", "peak_threshold", "peak_separation_bins"]),
    (
        "tomography",
        &[
            "events",
            "grid_points",
            "weights",
            "phases_rad",
            "coherence",
            "retardance_rad",
            "gate_width_s",
            "trials",
            "input",
        ],
    ),
];

/// Which PMF feeds the joint spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmfSource {
    Ideal,
    Engineered,
}

impl PmfSource {
    fn as_str(self) -> &'static str {
        match self {
            PmfSource::Ideal => "ideal",
            PmfSource::Engineered => "engineered",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrystalSection {
    pub length_m: f64,
    pub domain_width_m: f64,
    pub peak_width_m: f64,
    pub bin_pairs: usize,
    pub bin_spacing_hz: f64,
    pub pmf_pump_width_ratio: f64,
    pub pmf: PmfSource,
    pub pmf_samples: usize,
}

#[derive(Debug, Clone)]
pub struct HomSection {
    pub delay_min_s: f64,
    pub delay_max_s: f64,
    pub delay_points: usize,
    /// Mean counts far from the dip; 0 writes the noiseless curve only.
    pub baseline_counts: f64,
}

#[derive(Debug, Clone)]
pub struct TofsSection {
    pub events: u64,
    pub trials: usize,
    /// Count file for `tofs-analyze`, relative to the config file.
    pub input: Option<String>,
    pub peak_threshold: f64,
    pub peak_separation_bins: usize,
}

/// Per-bin values are either one entry for all bins or one per bin.
#[derive(Debug, Clone, PartialEq)]
pub enum PerBin {
    All(f64),
    Each(Vec<f64>),
    /// Uniform in `[−π, π)`, drawn from the run seed.
    Random,
}

impl PerBin {
    fn to_ini(&self) -> String {
        match self {
            PerBin::All(v) => format!("{v}"),
            PerBin::Each(v) => v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", "),
            PerBin::Random => "random".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TomographySection {
    pub events: u64,
    pub grid_points: usize,
    pub weights: PerBin,
    pub phases_rad: PerBin,
    pub coherence: PerBin,
    pub retardance_rad: PerBin,
    pub gate_width_s: f64,
    pub trials: usize,
    /// Bundle directory for `tomo-fit`, relative to the config file.
    pub input: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Directory that relative input paths resolve against.
    pub base: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub crystal: CrystalSection,
    pub pump_wavelength_m: f64,
    pub pump_duration_s: f64,
    pub grid_points: usize,
    pub grid_half_span_hz: f64,
    pub spectrometer: SpectrometerSpec,
    pub hom: HomSection,
    pub tofs: TofsSection,
    pub tomography: TomographySection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base)
    }

    /// Relative input paths resolve against `base`.
    pub fn from_text(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut raw = RawConfig::parse(text)?;
        let cfg = Self::resolve(&mut raw, base)?;
        cfg.validate(&raw)?;
        Ok(cfg)
    }

    fn resolve(raw: &mut RawConfig, base: &Path) -> Result<Self, CliError> {
        let length_m = raw.positive("crystal", "length_m", presets::CRYSTAL_LENGTH_M)?;
        let pump_wavelength_m = raw.positive("pump", "wavelength_m", presets::PUMP_WAVELENGTH_M)?;
        let pmf = match raw.take("crystal", "pmf") {
            None => PmfSource::Ideal,
            Some((v, line)) => match v.as_str() {
                "ideal" => PmfSource::Ideal,
                "engineered" => PmfSource::Engineered,
                _ => return Err(bad(line, "crystal", "pmf", "`ideal` or `engineered`", &v)),
            },
        };
        let crystal = CrystalSection {
            length_m,
            domain_width_m: raw.positive("crystal", "domain_width_m", presets::DOMAIN_WIDTH_M)?,
            peak_width_m: raw.positive("crystal", "peak_width_m", length_m / 4.5)?,
            bin_pairs: raw.usize("crystal", "bin_pairs", presets::BIN_PAIRS)?,
            bin_spacing_hz: raw.f64("crystal", "bin_spacing_hz", presets::BIN_SPACING_HZ)?,
            pmf_pump_width_ratio: raw.positive("crystal", "pmf_pump_width_ratio", presets::PMF_PUMP_WIDTH_RATIO)?,
            pmf,
            pmf_samples: raw.usize("crystal", "pmf_samples", 4001)?,
        };
        let spectrometer = SpectrometerSpec {
            dispersion_ps_per_nm_km: raw.positive("spectrometer", "dispersion_ps_per_nm_km", 20.0)?,
            fiber_length_km: raw.positive("spectrometer", "fiber_length_km", 20.0)?,
            jitter_fwhm: raw.f64("spectrometer", "jitter_fwhm_s", 50e-12)?,
            time_bin: raw.positive("spectrometer", "time_bin_s", 25e-12)?,
            window: raw.positive("spectrometer", "window_s", 12.5e-9)?,
            center_wavelength: raw.positive("spectrometer", "center_wavelength_m", 2.0 * pump_wavelength_m)?,
            alias_tolerance: raw.f64("spectrometer", "alias_tolerance", 2e-2)?,
            efficiency: raw.f64("spectrometer", "efficiency", 1.0)?,
        };
        let hom = HomSection {
            delay_min_s: raw.f64("hom", "delay_min_s", -5e-12)?,
            delay_max_s: raw.f64("hom", "delay_max_s", 5e-12)?,
            delay_points: raw.usize("hom", "delay_points", 201)?,
            baseline_counts: raw.f64("hom", "baseline_counts", 0.0)?,
        };
        let tofs = TofsSection {
            events: raw.u64("tofs", "events", 43_000_000)?,
            trials: raw.usize("tofs", "trials", 1000)?,
            input: raw.string("tofs", "input"),
            peak_threshold: raw.f64("tofs", "peak_threshold", 0.2)?,
            peak_separation_bins: raw.usize("tofs", "peak_separation_bins", 32)?,
        };
        let tomography = TomographySection {
            events: raw.u64("tomography", "events", 20_000_000)?,
            grid_points: raw.usize("tomography", "grid_points", 512)?,
            weights: per_bin(raw, "weights", 1.0, false)?,
            phases_rad: per_bin(raw, "phases_rad", 0.0, true)?,
            coherence: per_bin(raw, "coherence", 1.0, false)?,
            retardance_rad: per_bin(raw, "retardance_rad", 0.0, false)?,
            gate_width_s: raw.positive("tomography", "gate_width_s", DEFAULT_GATE_WIDTH_S)?,
            trials: raw.usize("tomography", "trials", 1000)?,
            input: raw.string("tomography", "input"),
        };
        Ok(Self {
            base: base.to_path_buf(),
            seed: raw.u64("run", "seed", 1)?,
            threads: raw.usize("run", "threads", 0)?,
            crystal,
            pump_wavelength_m,
            pump_duration_s: raw.positive("pump", "duration_s", presets::PUMP_DURATION_S)?,
            grid_points: raw.usize("grid", "points", presets::GRID_POINTS)?,
            grid_half_span_hz: raw.positive("grid", "half_span_hz", presets::GRID_HALF_SPAN_HZ)?,
            spectrometer,
            hom,
            tofs,
            tomography,
        })
    }

    /// Cross-field checks and the owning modules' own validation, before any
    /// computation starts.
    fn validate(&self, raw: &RawConfig) -> Result<(), CliError> {
        let c = &self.crystal;
        if c.bin_pairs == 0 {
            return Err(raw.invalid("crystal", "bin_pairs", "must be >= 1"));
        }
        if !(c.bin_spacing_hz > 0.0 || (c.bin_spacing_hz == 0.0 && c.bin_pairs == 1)) {
            return Err(raw.invalid("crystal", "bin_spacing_hz", "must be > 0 (0 only with bin_pairs = 1)"));
        }
        if c.domain_width_m >= c.length_m {
            return Err(raw.invalid("crystal", "domain_width_m", "must be shorter than the crystal"));
        }
        if c.pmf_samples < 2 {
            return Err(raw.invalid("crystal", "pmf_samples", "must be >= 2"));
        }
        for (key, n) in [("points", self.grid_points)] {
            if n < 2 {
                return Err(raw.invalid("grid", key, "must be >= 2"));
            }
        }
        if self.tomography.grid_points < 2 {
            return Err(raw.invalid("tomography", "grid_points", "must be >= 2"));
        }
        let h = &self.hom;
        if !(h.delay_max_s > h.delay_min_s) {
            return Err(raw.invalid("hom", "delay_max_s", "must exceed delay_min_s"));
        }
        if h.delay_points < 2 {
            return Err(raw.invalid("hom", "delay_points", "must be >= 2"));
        }
        if !(h.baseline_counts >= 0.0) {
            return Err(raw.invalid("hom", "baseline_counts", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.tofs.peak_threshold) {
            return Err(raw.invalid("tofs", "peak_threshold", "must be in [0, 1)"));
        }
        if self.tofs.trials == 1 {
            return Err(raw.invalid("tofs", "trials", "must be 0 or >= 2"));
        }
        if self.tomography.trials == 1 {
            return Err(raw.invalid("tomography", "trials", "must be 0 or >= 2"));
        }
        let bins = 2 * c.bin_pairs;
        let t = &self.tomography;
        for (key, v) in [
            ("weights", &t.weights),
            ("phases_rad", &t.phases_rad),
            ("coherence", &t.coherence),
            ("retardance_rad", &t.retardance_rad),
        ] {
            if let PerBin::Each(list) = v {
                if list.len() != bins {
                    return Err(raw.invalid("tomography", key, format!("needs 1 or {bins} values, got {}", list.len())));
                }
            }
        }
        self.spectrometer
            .validate()
            .map_err(|e| CliError::config(format!("[spectrometer] {e}")))?;
        self.pump().map_err(|e| CliError::config(format!("[pump] {e}")))?;
        self.comb().map_err(|e| CliError::config(format!("[crystal] {e}")))?;
        self.grid(self.grid_points)
            .map_err(|e| CliError::config(format!("[grid] {e}")))?;
        Ok(())
    }

    pub fn with_overrides(mut self, seed: Option<u64>, threads: Option<usize>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(t) = threads {
            self.threads = t;
        }
        self
    }

    pub fn input_path(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }

    pub fn pump(&self) -> qpmforge_core::Result<PumpSpec> {
        PumpSpec::new(self.pump_wavelength_m, self.pump_duration_s)
    }

    pub fn qpm_center(&self) -> f64 {
        PI / self.crystal.domain_width_m
    }

    pub fn dispersion(&self) -> qpmforge_core::Result<DispersionMap> {
        DispersionMap::with_width_ratio(
            &self.pump()?,
            self.crystal.peak_width_m,
            self.crystal.pmf_pump_width_ratio,
            self.qpm_center(),
        )
    }

    pub fn comb(&self) -> qpmforge_core::Result<CombSpec> {
        let c = &self.crystal;
        CombSpec::new(
            c.bin_pairs,
            presets::comb_spacing(&self.dispersion()?, c.bin_spacing_hz),
            c.peak_width_m,
            self.qpm_center(),
            c.length_m,
        )
    }

    pub fn grid(&self, points: usize) -> qpmforge_core::Result<FrequencyGrid> {
        FrequencyGrid::square(
            2.0 * PI * self.grid_half_span_hz,
            points,
            self.pump()?.degenerate_frequency_hz(),
        )
    }

    /// The resolved configuration, defaults included, in the input format.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let c = &self.crystal;
        let sp = &self.spectrometer;
        let h = &self.hom;
        let tf = &self.tofs;
        let t = &self.tomography;
        let mut sec = |name: &str, kv: Vec<(&str, String)>| {
            let _ = writeln!(s, "[{name}]");
            for (k, v) in kv {
                let _ = writeln!(s, "{k} = {v}");
            }
            s.push('\n');
        };
        sec("run", vec![("seed", self.seed.to_string()), ("threads", self.threads.to_string())]);
        sec(
            "crystal",
            vec![
                ("length_m", format!("{}", c.length_m)),
                ("domain_width_m", format!("{}", c.domain_width_m)),
                ("peak_width_m", format!("{}", c.peak_width_m)),
                ("bin_pairs", c.bin_pairs.to_string()),
                ("bin_spacing_hz", format!("{}", c.bin_spacing_hz)),
                ("pmf_pump_width_ratio", format!("{}", c.pmf_pump_width_ratio)),
                ("pmf", c.pmf.as_str().into()),
                ("pmf_samples", c.pmf_samples.to_string()),
            ],
        );
        sec(
            "pump",
            vec![
                ("wavelength_m", format!("{}", self.pump_wavelength_m)),
                ("duration_s", format!("{}", self.pump_duration_s)),
            ],
        );
        sec(
            "grid",
            vec![
                ("points", self.grid_points.to_string()),
                ("half_span_hz", format!("{}", self.grid_half_span_hz)),
            ],
        );
        sec(
            "spectrometer",
            vec![
                ("dispersion_ps_per_nm_km", format!("{}", sp.dispersion_ps_per_nm_km)),
                ("fiber_length_km", format!("{}", sp.fiber_length_km)),
                ("jitter_fwhm_s", format!("{}", sp.jitter_fwhm)),
                ("time_bin_s", format!("{}", sp.time_bin)),
                ("window_s", format!("{}", sp.window)),
                ("center_wavelength_m", format!("{}", sp.center_wavelength)),
                ("alias_tolerance", format!("{}", sp.alias_tolerance)),
                ("efficiency", format!("{}", sp.efficiency)),
            ],
        );
        sec(
            "hom",
            vec![
                ("delay_min_s", format!("{}", h.delay_min_s)),
                ("delay_max_s", format!("{}", h.delay_max_s)),
                ("delay_points", h.delay_points.to_string()),
                ("baseline_counts", format!("{}", h.baseline_counts)),
            ],
        );
        let mut tofs = vec![("events", tf.events.to_string()), ("trials", tf.trials.to_string())];
        if let Some(p) = tf.input.clone() {
            tofs.push(("input", p));
        }
        tofs.push(("peak_threshold", format!("{}", tf.peak_threshold)));
        tofs.push(("peak_separation_bins", tf.peak_separation_bins.to_string()));
        sec("tofs", tofs);
        let mut tomo = vec![
            ("events", t.events.to_string()),
            ("grid_points", t.grid_points.to_string()),
            ("weights", t.weights.to_ini()),
            ("phases_rad", t.phases_rad.to_ini()),
            ("coherence", t.coherence.to_ini()),
            ("retardance_rad", t.retardance_rad.to_ini()),
            ("gate_width_s", format!("{}", t.gate_width_s)),
            ("trials", t.trials.to_string()),
        ];
        if let Some(p) = t.input.clone() {
            tomo.push(("input", p));
        }
        sec("tomography", tomo);
        s
    }
}

fn per_bin(raw: &mut RawConfig, key: &str, default: f64, allow_random: bool) -> Result<PerBin, CliError> {
    let Some((v, line)) = raw.take("tomography", key) else {
        return Ok(PerBin::All(default));
    };
    if allow_random && v == "random" {
        return Ok(PerBin::Random);
    }
    let what = if allow_random {
        "a number, a comma-separated list or `random`"
    } else {
        "a number or a comma-separated list"
    };
    let items: Option<Vec<f64>> = v.split(',').map(|x| parse_f64(x.trim())).collect();
    match items {
        Some(list) if list.len() == 1 => Ok(PerBin::All(list[0])),
        Some(list) => Ok(PerBin::Each(list)),
        None => Err(bad(line, "tomography", key, what, &v)),
    }
}
