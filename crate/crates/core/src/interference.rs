//! Two-photon (same pulse) and heralded two-photon (successive pulses)
//! interference of a frequency-bin comb.
//!
//! In the closed forms, `delta` is the peak spacing of the phase-matching comb
//! in the difference variable `ν_i − ν_s` (rad/s) and `sigma` the common width
//! of pump and phase-matching peaks. Neighbouring optical bins are then `δ/2`
//! apart, i.e. `δ/(4π)` Hz.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use log::warn;
use nalgebra::{DMatrix, Matrix4, Vector4};
use num_complex::Complex64;

use crate::biphoton::JointSpectralAmplitude;
use crate::error::{invalid, Error, Result};

/// Closed forms assume well-separated peaks; below this `δ/σ` they are warned about.
pub const SEPARATION_WARN_RATIO: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    TwoPhoton,
    Heralded,
}

impl CurveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveKind::TwoPhoton => "two_photon",
            CurveKind::Heralded => "heralded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "two_photon" => Some(CurveKind::TwoPhoton),
            "heralded" => Some(CurveKind::Heralded),
            _ => None,
        }
    }
}

/// Bin-spacing in Hz of a comb with difference-variable spacing `delta`.
pub fn bin_spacing_hz(delta: f64) -> f64 {
    delta / (4.0 * PI)
}

/// Inverse of [`bin_spacing_hz`].
pub fn delta_from_bin_spacing(hz: f64) -> f64 {
    4.0 * PI * hz
}

/// `Σ_j e^{−(2j+1)²δ²/4σ²}`, the size of the terms dropped by the
/// well-separated approximation.
pub fn separation_residual(n_pairs: usize, delta: f64, sigma: f64) -> f64 {
    (0..n_pairs)
        .map(|j| {
            let a = (2 * j + 1) as f64 * delta;
            (-a * a / (4.0 * sigma * sigma)).exp()
        })
        .sum()
}

/// Unclamped two-photon closed form. `n_pairs` is the number of bin pairs
/// (the comb has `2·n_pairs` bins).
pub fn p2_closed_raw(tau: f64, n_pairs: usize, delta: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let env = (-s2 * tau * tau / 4.0).exp();
    let sum: f64 = (0..n_pairs)
        .map(|j| {
            let a = (2 * j + 1) as f64 * delta;
            env * ((-a * a / (4.0 * s2)).exp() + (0.5 * a * tau).cos())
        })
        .sum();
    0.5 - sum / (2.0 * n_pairs as f64)
}

/// Unclamped heralded closed form. The cosine takes `(2j+1)δτ/2`, the same
/// argument as the two-photon form; this is what the numeric oracle confirms.
pub fn p4_closed_raw(tau: f64, n_pairs: usize, delta: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let env = (-s2 * tau * tau / 4.0).exp();
    let sum: f64 = (0..n_pairs)
        .map(|j| {
            let a = (2 * j + 1) as f64 * delta;
            let sep = (-a * a / (4.0 * s2)).exp();
            env * (1.0 + sep + 2.0 * sep * (0.5 * a * tau).cos())
        })
        .sum();
    let n = n_pairs as f64;
    0.5 - sum / (4.0 * n * n)
}

/// Closed-form two-photon coincidence probability clamped to `[0, 1]`.
pub fn p2_closed(tau: f64, n_pairs: usize, delta: f64, sigma: f64) -> f64 {
    p2_closed_raw(tau, n_pairs, delta, sigma).clamp(0.0, 1.0)
}

/// Closed-form heralded coincidence probability clamped to `[0, 1]`.
pub fn p4_closed(tau: f64, n_pairs: usize, delta: f64, sigma: f64) -> f64 {
    p4_closed_raw(tau, n_pairs, delta, sigma).clamp(0.0, 1.0)
}

/// Clamping diagnostics of a closed-form sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClampReport {
    pub clamped: usize,
    pub max_excess: f64,
}

/// Evaluates a closed form at each delay; clamps to `[0, 1]` and counts clamps.
pub fn sweep_closed(
    kind: CurveKind,
    delays: &[f64],
    n_pairs: usize,
    delta: f64,
    sigma: f64,
) -> Result<(HomCurve, ClampReport)> {
    if n_pairs == 0 {
        return Err(invalid("n_pairs", "must be >= 1"));
    }
    if !(delta > 0.0 && sigma > 0.0) {
        return Err(invalid("delta/sigma", "must be > 0"));
    }
    if delta < SEPARATION_WARN_RATIO * sigma {
        warn!(
            "comb spacing is only {:.2} peak widths; closed form drops terms of size {:.2e}",
            delta / sigma,
            separation_residual(n_pairs, delta, sigma)
        );
    }
    let mut report = ClampReport::default();
    let values = delays
        .iter()
        .map(|&t| {
            let raw = match kind {
                CurveKind::TwoPhoton => p2_closed_raw(t, n_pairs, delta, sigma),
                CurveKind::Heralded => p4_closed_raw(t, n_pairs, delta, sigma),
            };
            let v = raw.clamp(0.0, 1.0);
            if v != raw {
                report.clamped += 1;
                report.max_excess = report.max_excess.max((v - raw).abs());
            }
            v
        })
        .collect();
    Ok((HomCurve::new(kind, delays.to_vec(), values)?, report))
}

/// Two-photon coincidence probability by direct quadrature,
/// `p₂(τ) = ½ − ½ Re Σ f*(ν_i,ν_s) f(ν_s,ν_i) e^{i(ν_i−ν_s)τ} Δν²`.
///
/// On a uniform square grid the phase only depends on `m = i − s`, so the
/// double sum is folded once into per-diagonal sums `C_m` and each delay costs O(N).
#[derive(Debug, Clone)]
pub struct TwoPhotonKernel {
    diagonals: Vec<Complex64>,
    step: f64,
    weight: f64,
}

impl TwoPhotonKernel {
    pub fn new(jsa: &JointSpectralAmplitude) -> Result<Self> {
        let grid = jsa.grid();
        if !grid.is_exchange_symmetric() {
            return Err(Error::AsymmetricGrid);
        }
        let f = jsa.values();
        let n = f.nrows();
        let mut diagonals = vec![Complex64::new(0.0, 0.0); 2 * n - 1];
        for i in 0..n {
            for s in 0..n {
                diagonals[i + n - 1 - s] += f[(i, s)].conj() * f[(s, i)];
            }
        }
        Ok(Self {
            diagonals,
            step: grid.signal.step(),
            weight: grid.cell_area(),
        })
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let n = self.diagonals.len().div_ceil(2);
        let overlap: f64 = self
            .diagonals
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let m = k as f64 - (n - 1) as f64;
                (c * Complex64::from_polar(1.0, m * self.step * tau)).re
            })
            .sum();
        0.5 - 0.5 * overlap * self.weight
    }
}

pub fn p2_numeric(jsa: &JointSpectralAmplitude, tau: f64) -> Result<f64> {
    Ok(TwoPhotonKernel::new(jsa)?.eval(tau))
}

/// Heralded coincidence probability by quadrature of the four-fold integral
/// `p₄(τ) = ½ − ½ ∫ f*(i₁,s₂) f*(i₂,s₁) f(i₁,s₁) f(i₂,s₂) e^{i(s₁−s₂)τ}`.
///
/// Contracting the idler frequencies first gives the signal reduced density
/// `ρ(s₁,s₂) = Σ_i f*(i,s₁) f(i,s₂) Δν_i`: the `i₁` sum is `ρ(s₂,s₁) = ρ(s₁,s₂)*`
/// and the `i₂` sum is `ρ(s₁,s₂)`, so the integrand collapses to
/// `|ρ(s₁,s₂)|² e^{i(s₁−s₂)τ}`. Building ρ is one O(N³) product; folding
/// `|ρ|²` by `s₁ − s₂` then makes every delay O(N). At τ = 0 the sum is
/// `Tr ρ² = Σλ²`, so the heralded visibility is `1/K`.
#[derive(Debug, Clone)]
pub struct HeraldedKernel {
    diagonals: Vec<f64>,
    step: f64,
    weight: f64,
}

impl HeraldedKernel {
    pub fn new(jsa: &JointSpectralAmplitude) -> Result<Self> {
        let grid = jsa.grid();
        let di = grid.idler.step().abs();
        let ds = grid.signal.step();
        let f = jsa.values();
        let n = f.ncols();
        let rho_sq: DMatrix<f64> = if jsa.is_real() {
            let r = f.map(|v| v.re);
            (r.transpose() * &r).map(|v| (v * di).powi(2))
        } else {
            (f.adjoint() * f).map(|v| v.norm_sqr() * di * di)
        };
        let mut diagonals = vec![0.0; 2 * n - 1];
        for a in 0..n {
            for b in 0..n {
                diagonals[a + n - 1 - b] += rho_sq[(a, b)];
            }
        }
        Ok(Self {
            diagonals,
            step: ds,
            weight: ds * ds,
        })
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let n = self.diagonals.len().div_ceil(2);
        let sum: f64 = self
            .diagonals
            .iter()
            .enumerate()
            .map(|(k, c)| c * ((k as f64 - (n - 1) as f64) * self.step * tau).cos())
            .sum();
        0.5 - 0.5 * sum * self.weight
    }
}

pub fn p4_numeric(jsa: &JointSpectralAmplitude, tau: f64) -> Result<f64> {
    Ok(HeraldedKernel::new(jsa)?.eval(tau))
}

/// Coincidence probability or counts against delay.
#[derive(Debug, Clone, PartialEq)]
pub struct HomCurve {
    pub kind: CurveKind,
    pub delays: Vec<f64>,
    pub values: Vec<f64>,
}

impl HomCurve {
    pub fn new(kind: CurveKind, delays: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if delays.len() != values.len() {
            return Err(invalid("curve", "delays and values differ in length"));
        }
        if delays.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            kind,
            delays,
            values,
        })
    }

    /// Evaluates `f` at each delay.
    pub fn sample(kind: CurveKind, delays: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(kind, delays.to_vec(), delays.iter().map(|&t| f(t)).collect())
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# kind={}", self.kind.as_str())?;
        writeln!(out, "tau_s,value")?;
        for (t, v) in self.delays.iter().zip(&self.values) {
            writeln!(out, "{t:e},{v:e}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut kind = None;
        let mut delays = Vec::new();
        let mut values = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let t = line.trim();
            if t.is_empty() || t == "tau_s,value" {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                if let Some(k) = rest.trim().strip_prefix("kind=") {
                    kind = Some(CurveKind::parse(k.trim()).ok_or_else(|| Error::Parse {
                        line: lineno,
                        reason: format!("unknown curve kind `{}`", k.trim()),
                    })?);
                }
                continue;
            }
            let (a, b) = t.split_once(',').ok_or_else(|| Error::Parse {
                line: lineno,
                reason: "expected `tau_s,value`".into(),
            })?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    reason: format!("bad number `{}`: {e}", s.trim()),
                })
            };
            delays.push(parse(a)?);
            values.push(parse(b)?);
        }
        let kind = kind.ok_or(Error::Parse {
            line: 1,
            reason: "missing `# kind=` header".into(),
        })?;
        Self::new(kind, delays, values)
    }
}

/// Reference level against which the dip depth is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    /// Known level, e.g. ½ for probabilities.
    Fixed(f64),
    /// Mean of the points with `|τ|` in the outer fifth of the delay range.
    Tails,
}

/// `V = (B − p(0)) / B`, with `p(0)` the value at the delay nearest zero.
pub fn visibility(curve: &HomCurve, baseline: Baseline) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::MissingCurveRegion("zero delay"));
    }
    let max_abs = curve.delays.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let (k0, t0) = curve
        .delays
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(k, t)| (k, *t))
        .expect("non-empty");
    let mut sorted = curve.delays.clone();
    sorted.sort_by(f64::total_cmp);
    let gap = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if t0 != 0.0 && !(t0.abs() <= 0.5 * gap) {
        return Err(Error::MissingCurveRegion("zero delay"));
    }
    let b = match baseline {
        Baseline::Fixed(b) => b,
        Baseline::Tails => {
            let cut = 0.8 * max_abs;
            let left: Vec<f64> = tail(curve, |t| t <= -cut);
            let right: Vec<f64> = tail(curve, |t| t >= cut);
            if left.is_empty() || right.is_empty() || max_abs == 0.0 {
                return Err(Error::MissingCurveRegion("baseline tails"));
            }
            let all: Vec<f64> = left.into_iter().chain(right).collect();
            all.iter().sum::<f64>() / all.len() as f64
        }
    };
    if !(b > 0.0) {
        return Err(invalid("baseline", "must be > 0"));
    }
    Ok((b - curve.values[k0]) / b)
}

fn tail(curve: &HomCurve, keep: impl Fn(f64) -> bool) -> Vec<f64> {
    curve
        .delays
        .iter()
        .zip(&curve.values)
        .filter(|(t, _)| keep(**t))
        .map(|(_, v)| *v)
        .collect()
}

/// Starting point of [`fit_hom`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomGuess {
    pub bin_spacing_hz: f64,
    pub sigma: f64,
    pub visibility: f64,
    /// Counts far from the dip; taken from the data when `None`.
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomFitOptions {
    pub n_pairs: usize,
    /// Hold spacing and width at the guess and fit only baseline and visibility.
    pub fix_shape: bool,
    pub max_iterations: usize,
}

impl Default for HomFitOptions {
    fn default() -> Self {
        Self {
            n_pairs: 4,
            fix_shape: false,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomFit {
    pub kind: CurveKind,
    pub bin_spacing_hz: f64,
    pub sigma: f64,
    pub visibility: f64,
    pub baseline: f64,
    /// Order: baseline, visibility, bin spacing (Hz), sigma.
    pub covariance: Matrix4<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

impl HomFit {
    pub fn bin_spacing_std(&self) -> f64 {
        self.covariance[(2, 2)].max(0.0).sqrt()
    }

    pub fn visibility_std(&self) -> f64 {
        self.covariance[(1, 1)].max(0.0).sqrt()
    }

    pub fn sigma_std(&self) -> f64 {
        self.covariance[(3, 3)].max(0.0).sqrt()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind: {}", self.kind.as_str());
        let _ = writeln!(s, "bin_spacing_hz: {:.6e}", self.bin_spacing_hz);
        let _ = writeln!(s, "bin_spacing_std_hz: {:.3e}", self.bin_spacing_std());
        let _ = writeln!(s, "sigma_rad_per_s: {:.6e}", self.sigma);
        let _ = writeln!(s, "sigma_std_rad_per_s: {:.3e}", self.sigma_std());
        let _ = writeln!(s, "visibility: {:.6}", self.visibility);
        let _ = writeln!(s, "visibility_std: {:.6}", self.visibility_std());
        let _ = writeln!(s, "baseline: {:.6e}", self.baseline);
        let _ = writeln!(s, "chi2: {:.4}", self.chi2);
        let _ = writeln!(s, "dof: {}", self.dof);
        let _ = writeln!(s, "iterations: {}", self.iterations);
        s
    }
}

/// Dip shape normalized to 1 at zero delay: `(1 − 2p(τ)) / (1 − 2p(0))`.
fn dip_shape(kind: CurveKind, tau: f64, n_pairs: usize, delta: f64, sigma: f64) -> f64 {
    let p = |t: f64| match kind {
        CurveKind::TwoPhoton => p2_closed_raw(t, n_pairs, delta, sigma),
        CurveKind::Heralded => p4_closed_raw(t, n_pairs, delta, sigma),
    };
    (1.0 - 2.0 * p(tau)) / (1.0 - 2.0 * p(0.0))
}

/// Weighted least-squares fit of `N·(1 − V·h(τ; δ, σ))` to counts, where `h`
/// is the closed-form dip normalized to 1 at zero delay. Weights are Poisson
/// (variance = counts, floored at 1). Levenberg–Marquardt on parameters
/// scaled by the initial guess.
pub fn fit_hom(curve: &HomCurve, guess: &HomGuess, options: &HomFitOptions) -> Result<HomFit> {
    if curve.len() < 10 {
        return Err(invalid("curve", "need at least 10 delay points"));
    }
    if options.n_pairs == 0 {
        return Err(invalid("n_pairs", "must be >= 1"));
    }
    if !(guess.bin_spacing_hz > 0.0 && guess.sigma > 0.0) {
        return Err(invalid("guess", "spacing and sigma must be > 0"));
    }
    let (lo, hi) = curve
        .delays
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    if hi - lo < 1.0 / guess.bin_spacing_hz {
        return Err(invalid("curve", "delay range shorter than one beat period"));
    }
    let baseline = guess
        .baseline
        .unwrap_or_else(|| curve.values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if !(baseline > 0.0) {
        return Err(invalid("baseline", "must be > 0"));
    }
    let scale = Vector4::new(
        baseline,
        guess.visibility.abs().max(0.05),
        guess.bin_spacing_hz,
        guess.sigma,
    );
    let weights: Vec<f64> = curve.values.iter().map(|&y| 1.0 / y.max(1.0).sqrt()).collect();
    let kind = curve.kind;
    let n_pairs = options.n_pairs;

    let model = |q: &Vector4<f64>, t: f64| {
        let p = q.component_mul(&scale);
        let delta = delta_from_bin_spacing(p[2]);
        p[0] * (1.0 - p[1] * dip_shape(kind, t, n_pairs, delta, p[3]))
    };
    let residuals = |q: &Vector4<f64>| -> Vec<f64> {
        curve
            .delays
            .iter()
            .zip(&curve.values)
            .zip(&weights)
            .map(|((&t, &y), &w)| (y - model(q, t)) * w)
            .collect()
    };
    let chi2_of = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let free: Vec<usize> = if options.fix_shape {
        vec![0, 1]
    } else {
        vec![0, 1, 2, 3]
    };
    let constrain = |q: &mut Vector4<f64>| {
        q[1] = q[1].clamp(0.0, 1.0 / scale[1]);
        q[2] = q[2].abs();
        q[3] = q[3].abs();
    };

    let mut q = Vector4::new(1.0, guess.visibility.clamp(0.0, 1.0) / scale[1], 1.0, 1.0);
    let mut r = residuals(&q);
    let mut chi2 = chi2_of(&r);
    let mut lambda = 1e-3;
    let mut last_step = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut jtj = Matrix4::<f64>::identity();

    while iterations < options.max_iterations {
        iterations += 1;
        // Jacobian of the model (not the residual) by central differences.
        let m = curve.len();
        let mut jac = vec![[0.0f64; 4]; m];
        for &p in &free {
            let h = 1e-6 * q[p].abs().max(1e-3);
            let mut qp = q;
            let mut qm = q;
            qp[p] += h;
            qm[p] -= h;
            for (k, (&t, &w)) in curve.delays.iter().zip(&weights).enumerate() {
                jac[k][p] = (model(&qp, t) - model(&qm, t)) / (2.0 * h) * w;
            }
        }
        jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (row, &rk) in jac.iter().zip(&r) {
            for a in 0..4 {
                jtr[a] += row[a] * rk;
                for b in 0..4 {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        for p in 0..4 {
            if !free.contains(&p) {
                jtj[(p, p)] = 1.0;
            }
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for p in 0..4 {
                a[(p, p)] *= 1.0 + lambda;
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = q + step;
            constrain(&mut trial);
            let rt = residuals(&trial);
            let ct = chi2_of(&rt);
            if ct.is_finite() && ct <= chi2 {
                last_step = (trial - q).abs().max();
                let improvement = chi2 - ct;
                q = trial;
                r = rt;
                chi2 = ct;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if improvement <= 1e-12 * chi2.max(1e-300) || last_step < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: at a minimum to machine precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailed {
            iterations,
            chi2,
            last_step,
            reason: "iteration limit reached".into(),
        });
    }
    let cov_scaled = jtj.try_inverse().ok_or_else(|| Error::FitFailed {
        iterations,
        chi2,
        last_step,
        reason: "singular normal matrix at the optimum".into(),
    })?;
    let mut covariance = Matrix4::zeros();
    for a in 0..4 {
        for b in 0..4 {
            if free.contains(&a) && free.contains(&b) {
                covariance[(a, b)] = cov_scaled[(a, b)] * scale[a] * scale[b];
            }
        }
    }
    let p = q.component_mul(&scale);
    let fit = HomFit {
        kind,
        baseline: p[0],
        visibility: p[1],
        bin_spacing_hz: p[2],
        sigma: p[3],
        covariance,
        chi2,
        dof: curve.len().saturating_sub(free.len()),
        iterations,
    };
    if !(fit.bin_spacing_hz > 0.0 && fit.sigma > 0.0 && fit.chi2.is_finite()) {
        return Err(Error::FitFailed {
            iterations,
            chi2,
            last_step,
            reason: "degenerate parameters".into(),
        });
    }
    Ok(fit)
}
