//! Poled crystals, target phasematching combs and domain engineering.
//!
//! Conventions fixed for the whole crate:
//!
//! * the crystal occupies `z ∈ [−L/2, L/2]`;
//! * a nonlinearity profile `g(z)` has phasematching function
//!   `φ(Δk) = ∫ g(z) e^{−iΔk z} dz`;
//! * the comb profile `g(z) = (2/ς) e^{iΔk₀z − z²/2ς²} Σ_j cos((2j+1)δz/2)`
//!   transforms to `√(2π) · target_pmf(Δk)` under that convention.
//!
//! Domain PMFs are normalized so that a periodically poled crystal of the same
//! length peaks at 1 (the first-order `2/π` factor is absorbed there).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

/// Target phasematching comb: `2n` Gaussian peaks at `Δk₀ ± (j+½)δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombSpec {
    pair_count: usize,
    spacing: f64,
    peak_width: f64,
    center: f64,
    crystal_length: f64,
}

impl CombSpec {
    /// `spacing` (δ) and `center` (Δk₀) are in rad/m, `peak_width` (ς) and
    /// `crystal_length` in metres. A zero spacing with one pair collapses the
    /// comb onto a single Gaussian at Δk₀.
    pub fn new(
        pair_count: usize,
        spacing: f64,
        peak_width: f64,
        center: f64,
        crystal_length: f64,
    ) -> Result<Self> {
        if pair_count == 0 {
            return Err(invalid("pair_count", "must be at least 1"));
        }
        if !(spacing.is_finite() && spacing >= 0.0) {
            return Err(invalid("spacing", format!("must be >= 0, got {spacing}")));
        }
        if spacing == 0.0 && pair_count > 1 {
            return Err(invalid("spacing", "zero spacing only allowed for a single pair"));
        }
        if !(peak_width.is_finite() && peak_width > 0.0) {
            return Err(invalid("peak_width", format!("must be > 0, got {peak_width}")));
        }
        if !center.is_finite() {
            return Err(invalid("center", "must be finite"));
        }
        if !(crystal_length.is_finite() && crystal_length > 0.0) {
            return Err(invalid(
                "crystal_length",
                format!("must be > 0, got {crystal_length}"),
            ));
        }
        Ok(Self {
            pair_count,
            spacing,
            peak_width,
            center,
            crystal_length,
        })
    }

    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    pub fn peak_count(&self) -> usize {
        2 * self.pair_count
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn peak_width(&self) -> f64 {
        self.peak_width
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn crystal_length(&self) -> f64 {
        self.crystal_length
    }

    /// True when neighbouring peaks are separated by at least ten widths (ςδ ≥ 10).
    pub fn well_separated(&self) -> bool {
        self.peak_width * self.spacing >= 10.0
    }

    /// Offsets `±(j+½)δ` of every peak from Δk₀, in ascending order.
    pub fn peak_offsets(&self) -> Vec<f64> {
        let mut out: Vec<f64> = (0..self.pair_count)
            .flat_map(|j| {
                let off = (j as f64 + 0.5) * self.spacing;
                [-off, off]
            })
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    /// Phase-mismatch band that holds the comb plus one spacing of margin on
    /// each side (eight peak widths for a single-Gaussian comb).
    pub fn design_band(&self) -> (f64, f64) {
        let half = if self.spacing > 0.0 {
            (self.pair_count as f64 + 1.0) * self.spacing
        } else {
            8.0 / self.peak_width
        };
        (self.center - half, self.center + half)
    }

    /// Gaussian envelope of the comb profile without the carrier, i.e.
    /// `target_profile(z)·e^{−iΔk₀z}`. Real and even in z.
    pub fn envelope(&self, z: f64) -> f64 {
        let s = self.peak_width;
        let cos_sum: f64 = (0..self.pair_count)
            .map(|j| ((2 * j + 1) as f64 * 0.5 * self.spacing * z).cos())
            .sum();
        2.0 / s * (-z * z / (2.0 * s * s)).exp() * cos_sum
    }

    /// Samples the target profile on `samples` evenly spaced points spanning the crystal.
    pub fn sample_profile(&self, samples: usize) -> Result<NonlinearityProfile> {
        if samples < 2 {
            return Err(invalid("samples", "need at least 2 profile samples"));
        }
        let l = self.crystal_length;
        let positions: Vec<f64> = (0..samples)
            .map(|k| -l / 2.0 + l * k as f64 / (samples - 1) as f64)
            .collect();
        let amplitude = positions.iter().map(|&z| target_profile(self, z)).collect();
        NonlinearityProfile::new(positions, amplitude)
    }
}

/// Sampled nonlinearity profile g(z) on strictly increasing positions.
#[derive(Debug, Clone)]
pub struct NonlinearityProfile {
    positions: Vec<f64>,
    amplitude: Vec<Complex64>,
}

impl NonlinearityProfile {
    pub fn new(positions: Vec<f64>, amplitude: Vec<Complex64>) -> Result<Self> {
        if positions.len() != amplitude.len() {
            return Err(invalid("amplitude", "length differs from positions"));
        }
        if positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("positions", "must be strictly increasing"));
        }
        Ok(Self {
            positions,
            amplitude,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn amplitude(&self) -> &[Complex64] {
        &self.amplitude
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    Up,
    Down,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Up => 1.0,
            Orientation::Down => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::Up => Orientation::Down,
            Orientation::Down => Orientation::Up,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub width: f64,
    pub orientation: Orientation,
}

/// Ordered poled domains laid out from `−L/2` to `L/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    domains: Vec<Domain>,
    total_length: f64,
}

impl DomainConfig {
    pub fn new(domains: Vec<Domain>, total_length: f64) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::Empty);
        }
        if !(total_length.is_finite() && total_length > 0.0) {
            return Err(invalid("total_length", "must be > 0"));
        }
        if let Some(d) = domains.iter().find(|d| !(d.width.is_finite() && d.width > 0.0)) {
            return Err(invalid("width", format!("domain width {} is not > 0", d.width)));
        }
        let sum: f64 = domains.iter().map(|d| d.width).sum();
        let tol = 2.0 * domains.len() as f64 * f64::EPSILON * total_length;
        if (sum - total_length).abs() > tol {
            return Err(invalid(
                "total_length",
                format!("domain widths sum to {sum:e}, header says {total_length:e}"),
            ));
        }
        Ok(Self {
            domains,
            total_length,
        })
    }

    /// A periodically poled crystal with alternating orientations, starting `Up`.
    pub fn periodic(total_length: f64, domain_width: f64) -> Result<Self> {
        let bounds = domain_boundaries(total_length, domain_width)?;
        let domains = bounds
            .windows(2)
            .enumerate()
            .map(|(j, w)| Domain {
                width: w[1] - w[0],
                orientation: if j % 2 == 0 {
                    Orientation::Up
                } else {
                    Orientation::Down
                },
            })
            .collect();
        Self::new(domains, total_length)
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    /// Domain edges, starting at `−L/2`.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut z = -self.total_length / 2.0;
        let mut out = Vec::with_capacity(self.domains.len() + 1);
        out.push(z);
        for d in &self.domains {
            z += d.width;
            out.push(z);
        }
        out
    }

    /// Same layout with every orientation reversed.
    pub fn flipped(&self) -> Self {
        Self {
            domains: self
                .domains
                .iter()
                .map(|d| Domain {
                    width: d.width,
                    orientation: d.orientation.flipped(),
                })
                .collect(),
            total_length: self.total_length,
        }
    }

    /// ±1 nonlinearity sampled at every domain centre.
    pub fn profile(&self) -> NonlinearityProfile {
        let b = self.boundaries();
        let positions = b.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let amplitude = self
            .domains
            .iter()
            .map(|d| Complex64::new(d.orientation.sign(), 0.0))
            .collect();
        NonlinearityProfile {
            positions,
            amplitude,
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# total_length_m={:.11e}", self.total_length)?;
        let mut line = String::new();
        for d in &self.domains {
            line.clear();
            let sign = match d.orientation {
                Orientation::Up => "+1",
                Orientation::Down => "-1",
            };
            let _ = write!(line, "{:.11e}\t{}", d.width, sign);
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut total = None;
        let mut domains = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("total_length_m=") {
                    total = Some(v.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: lineno,
                        reason: format!("bad total length: {e}"),
                    })?);
                }
                continue;
            }
            let mut parts = trimmed.split('\t');
            let (Some(w), Some(o), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    line: lineno,
                    reason: "expected `width<TAB>orientation`".into(),
                });
            };
            let width = w.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: lineno,
                reason: format!("bad width: {e}"),
            })?;
            let orientation = match o.trim() {
                "+1" | "1" => Orientation::Up,
                "-1" => Orientation::Down,
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        reason: format!("orientation must be +1 or -1, got `{other}`"),
                    })
                }
            };
            domains.push(Domain { width, orientation });
        }
        let header = total.ok_or(Error::Parse {
            line: 1,
            reason: "missing `# total_length_m=` header".into(),
        })?;
        // Widths are stored with 12 significant digits, so the header can only
        // be checked to that precision; the exact sum becomes the length.
        let sum: f64 = domains.iter().map(|d| d.width).sum();
        if (sum - header).abs() > 1e-9 * header {
            return Err(Error::Parse {
                line: 1,
                reason: format!("widths sum to {sum:e} m but header says {header:e} m"),
            });
        }
        Self::new(domains, sum)
    }
}

/// Comb value at phase mismatch `dk`: sum of unit-height Gaussians
/// `exp(−ς²(Δk − Δk₀ ∓ (j+½)δ)²/2)`.
pub fn target_pmf(comb: &CombSpec, dk: f64) -> f64 {
    let x = dk - comb.center;
    let s2 = comb.peak_width * comb.peak_width;
    (0..comb.pair_count)
        .map(|j| {
            let off = (j as f64 + 0.5) * comb.spacing;
            (-s2 * (x - off).powi(2) / 2.0).exp() + (-s2 * (x + off).powi(2) / 2.0).exp()
        })
        .sum()
}

/// Single peak of the comb: `index` in `0..2n`, ordered like [`CombSpec::peak_offsets`].
pub fn target_pmf_peak(comb: &CombSpec, index: usize, dk: f64) -> f64 {
    let off = comb.peak_offsets()[index];
    let s2 = comb.peak_width * comb.peak_width;
    (-s2 * (dk - comb.center - off).powi(2) / 2.0).exp()
}

/// Nonlinearity profile whose transform is the comb (see module docs).
pub fn target_profile(comb: &CombSpec, z: f64) -> Complex64 {
    Complex64::from_polar(1.0, comb.center * z) * comb.envelope(z)
}

/// `∫_{z0}^{z1} e^{−iΔk z} dz`, written through sinc so Δk → 0 is exact.
fn domain_integral(z0: f64, z1: f64, dk: f64) -> Complex64 {
    let w = z1 - z0;
    let zc = 0.5 * (z0 + z1);
    let x = 0.5 * dk * w;
    let sinc = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
    Complex64::from_polar(w * sinc, -dk * zc)
}

fn domain_boundaries(total_length: f64, domain_width: f64) -> Result<Vec<f64>> {
    if !(domain_width.is_finite() && domain_width > 0.0) {
        return Err(invalid("domain_width", format!("must be > 0, got {domain_width}")));
    }
    if domain_width > total_length {
        return Err(invalid(
            "domain_width",
            format!("{domain_width:e} m exceeds crystal length {total_length:e} m"),
        ));
    }
    let ratio = total_length / domain_width;
    let mut full = ratio.round();
    if (ratio - full).abs() > 1e-9 * ratio {
        full = ratio.floor();
    }
    let full = full as usize;
    let start = -total_length / 2.0;
    let mut bounds: Vec<f64> = (0..=full)
        .map(|j| start + j as f64 * domain_width)
        .collect();
    let end = total_length / 2.0;
    // The last domain is shortened to fit, or the final edge snapped onto L/2.
    let last = *bounds.last().unwrap();
    if end - last > 1e-9 * domain_width {
        bounds.push(end);
    } else {
        *bounds.last_mut().unwrap() = end;
    }
    Ok(bounds)
}

/// Five-point Gauss–Legendre nodes and weights on [−1, 1].
const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

/// Greedy domain engineering.
///
/// Walks the crystal domain by domain, tracking the PMF amplitude at Δk₀
/// accumulated so far, `A(z) = Σ s_j ∫_domain e^{−iΔk₀z} dz`, against the
/// target `A_t(z) = c·e^{iθ}∫_{−L/2}^{z} G(z′) dz′`, where G is the comb
/// envelope. Each orientation is chosen to minimise `|A − A_t|` at the end of
/// the domain; exact ties go to `Up`.
///
/// The scale `c` makes the steepest target slope equal to the fastest growth
/// the domains can deliver, `min(2/π, |∫_domain e^{−iΔk₀z}dz| / w)`, and θ is
/// the phase of the first domain's contribution so the target lies along the
/// direction the poling can actually build.
pub fn design_domains(comb: &CombSpec, domain_width: f64) -> Result<DomainConfig> {
    let bounds = domain_boundaries(comb.crystal_length, domain_width)?;
    let dk0 = comb.center;
    let contrib: Vec<Complex64> = bounds
        .windows(2)
        .map(|w| domain_integral(w[0], w[1], dk0))
        .collect();

    let full = domain_integral(0.0, domain_width, dk0).norm() / domain_width;
    let rate = full.min(2.0 / PI);
    let peak = 2.0 * comb.pair_count as f64 / comb.peak_width;
    let scale = rate / peak;
    let theta = if contrib[0].norm() > 1e-12 * domain_width {
        contrib[0].arg()
    } else {
        0.0
    };
    let direction = Complex64::from_polar(scale, theta);

    let mut domains = Vec::with_capacity(contrib.len());
    let mut accumulated = Complex64::new(0.0, 0.0);
    let mut target_integral = 0.0;
    let tie = 1e-12 * domain_width;
    for (w, c) in bounds.windows(2).zip(&contrib) {
        let (z0, z1) = (w[0], w[1]);
        let half = 0.5 * (z1 - z0);
        let mid = 0.5 * (z1 + z0);
        target_integral += half
            * GL_NODES
                .iter()
                .zip(GL_WEIGHTS)
                .map(|(&x, wt)| wt * comb.envelope(mid + half * x))
                .sum::<f64>();
        let target = direction * target_integral;
        let up = (accumulated + c - target).norm();
        let down = (accumulated - c - target).norm();
        let orientation = if up <= down + tie {
            Orientation::Up
        } else {
            Orientation::Down
        };
        accumulated += c * orientation.sign();
        domains.push(Domain {
            width: z1 - z0,
            orientation,
        });
    }
    DomainConfig::new(domains, comb.crystal_length)
}

/// Exact PMF of a domain layout, normalized to the periodically poled peak `2L/π`.
pub fn pmf_of_domains(config: &DomainConfig, dk: f64) -> Complex64 {
    let mut z = -config.total_length / 2.0;
    let mut acc = Complex64::new(0.0, 0.0);
    for d in &config.domains {
        let z1 = z + d.width;
        acc += domain_integral(z, z1, dk) * d.orientation.sign();
        z = z1;
    }
    acc * (PI / (2.0 * config.total_length))
}

/// [`pmf_of_domains`] over many phase mismatches, in parallel.
pub fn pmf_curve(config: &DomainConfig, dks: &[f64]) -> Vec<Complex64> {
    dks.par_iter().map(|&dk| pmf_of_domains(config, dk)).collect()
}

/// Evenly spaced samples over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Normalized overlap `|⟨φ_design, φ_target⟩| / (‖φ_design‖·‖φ_target‖)` on the
/// comb's design band, sampled at `samples` points.
pub fn pmf_overlap(config: &DomainConfig, comb: &CombSpec, samples: usize) -> f64 {
    let (lo, hi) = comb.design_band();
    let dks = linspace(lo, hi, samples.max(2));
    let design = pmf_curve(config, &dks);
    let mut inner = Complex64::new(0.0, 0.0);
    let (mut nd, mut nt) = (0.0, 0.0);
    for (p, &dk) in design.iter().zip(&dks) {
        let t = target_pmf(comb, dk);
        inner += p.conj() * t;
        nd += p.norm_sqr();
        nt += t * t;
    }
    if nd == 0.0 || nt == 0.0 {
        return 0.0;
    }
    inner.norm() / (nd * nt).sqrt()
}
