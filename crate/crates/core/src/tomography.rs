//! Frequency-resolved polarization tomography of the hyperentangled state
//! `Σ_i (|HV⟩ − e^{iφ_i}|VH⟩)/√𝒩_i ⊗ |bin i⟩` with SIC projections.
//!
//! Two-qubit basis order is `HH, HV, VH, VV`; the first qubit is the idler.
//! Projection `(j, k)` applies `M_j` to the idler and `M_k` to the signal.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use nalgebra::{DMatrix, Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::biphoton::{build_jsa, DispersionMap, FrequencyGrid, JointSpectralIntensity, PumpSpec, SPEED_OF_LIGHT};
use crate::crystal::{target_pmf_peak, CombSpec};
use crate::error::{invalid, Error, Result};
use crate::measurement::{CountMatrix, SpectrometerSpec, TofsForward};
use crate::sampling::{multinomial, poisson, poisson_resample, trial_rng, Estimate};

/// Gate edge used to isolate one frequency bin in arrival time.
pub const DEFAULT_GATE_WIDTH_S: f64 = 1.52e-9;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Bloch vector of SIC element `k` (1-based).
pub fn sic_vector(k: usize) -> Result<[f64; 3]> {
    let s = 1.0 / 3f64.sqrt();
    match k {
        1 => Ok([s, s, s]),
        2 => Ok([s, -s, -s]),
        3 => Ok([-s, s, -s]),
        4 => Ok([-s, -s, s]),
        _ => Err(invalid("k", format!("SIC index must be 1..=4, got {k}"))),
    }
}

/// `M_k = ½(I + m_k·σ)`.
pub fn sic_operator(k: usize) -> Result<Matrix2<Complex64>> {
    let [x, y, z] = sic_vector(k)?;
    Ok(Matrix2::new(
        Complex64::new(0.5 * (1.0 + z), 0.0),
        Complex64::new(0.5 * x, -0.5 * y),
        Complex64::new(0.5 * x, 0.5 * y),
        Complex64::new(0.5 * (1.0 - z), 0.0),
    ))
}

fn kron(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>) -> Matrix4<Complex64> {
    Matrix4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

fn pauli(a: usize) -> Matrix2<Complex64> {
    let i = Complex64::new(0.0, 1.0);
    match a {
        0 => Matrix2::new(C1, C0, C0, C1),
        1 => Matrix2::new(C0, C1, C1, C0),
        2 => Matrix2::new(C0, -i, i, C0),
        _ => Matrix2::new(C1, C0, C0, -C1),
    }
}

/// Two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: Matrix4<Complex64>,
}

impl TwoQubitState {
    /// Checks Hermiticity and unit trace to 1e-10.
    pub fn new(rho: Matrix4<Complex64>) -> Result<Self> {
        if rho.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite);
        }
        if (rho - rho.adjoint()).norm() > 1e-10 {
            return Err(invalid("rho", "not Hermitian"));
        }
        if (rho.trace() - C1).norm() > 1e-10 {
            return Err(invalid("rho", "trace is not 1"));
        }
        Ok(Self { rho })
    }

    /// `(|HV⟩ − e^{iφ}|VH⟩)/√2`.
    pub fn singlet(phi: f64) -> Self {
        Self::dephased_singlet(phi, 1.0)
    }

    /// Singlet whose `HV/VH` coherence is scaled by `coherence ∈ [0, 1]`.
    pub fn dephased_singlet(phi: f64, coherence: f64) -> Self {
        let mut rho = Matrix4::zeros();
        rho[(1, 1)] = Complex64::new(0.5, 0.0);
        rho[(2, 2)] = Complex64::new(0.5, 0.0);
        let off = Complex64::from_polar(-0.5 * coherence, -phi);
        rho[(1, 2)] = off;
        rho[(2, 1)] = off.conj();
        Self { rho }
    }

    pub fn maximally_mixed() -> Self {
        Self {
            rho: Matrix4::identity() * Complex64::new(0.25, 0.0),
        }
    }

    /// `p·a + (1−p)·b`.
    pub fn mixture(a: &Self, b: &Self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid("p", "must be in [0, 1]"));
        }
        Ok(Self {
            rho: a.rho * Complex64::new(p, 0.0) + b.rho * Complex64::new(1.0 - p, 0.0),
        })
    }

    /// Applies `I ⊗ U` (a unitary on the signal qubit).
    pub fn rotated_signal(&self, u: &Matrix2<Complex64>) -> Self {
        let full = kron(&pauli(0), u);
        Self {
            rho: full * self.rho * full.adjoint(),
        }
    }

    pub fn matrix(&self) -> &Matrix4<Complex64> {
        &self.rho
    }

    pub fn eigenvalues(&self) -> Vector4<f64> {
        SymmetricEigen::new(self.rho).eigenvalues
    }

    /// Trace distance `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &Self) -> f64 {
        let d = SymmetricEigen::new(self.rho - other.rho);
        0.5 * d.eigenvalues.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Born probability `Tr[ρ (M_j ⊗ M_k)]`.
pub fn project_probability(state: &TwoQubitState, j: usize, k: usize) -> Result<f64> {
    let m = kron(&sic_operator(j)?, &sic_operator(k)?);
    Ok((state.rho * m).trace().re.clamp(0.0, 1.0))
}

/// All 16 probabilities, `[j−1][k−1]`.
pub fn projection_table(state: &TwoQubitState) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (j, row) in out.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = project_probability(state, j + 1, k + 1).expect("indices in range");
        }
    }
    out
}

/// Frame matrix with rows `(1, m_k)`.
fn frame() -> nalgebra::Matrix4<f64> {
    nalgebra::Matrix4::from_fn(|k, a| if a == 0 { 1.0 } else { sic_vector(k + 1).expect("in range")[a - 1] })
}

/// Linear inversion without positivity enforcement. With
/// `M_j = ½ Σ_a T_ja σ_a` and `ρ = ¼ Σ_ab R_ab σ_a⊗σ_b`, the probabilities are
/// `P = ¼ T R Tᵀ`, so `R = 4 T⁻¹ P T⁻ᵀ`. `P` is rescaled to `ΣP = 4` first.
pub fn linear_inversion(p: &[[f64; 4]; 4]) -> Result<Matrix4<Complex64>> {
    let total: f64 = p.iter().flatten().sum();
    if p.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let pm = nalgebra::Matrix4::from_fn(|j, k| 4.0 * p[j][k] / total);
    let t_inv = frame().try_inverse().expect("SIC frame is invertible");
    let r = t_inv * pm * t_inv.transpose() * 4.0;
    let mut rho = Matrix4::zeros();
    for a in 0..4 {
        for b in 0..4 {
            rho += kron(&pauli(a), &pauli(b)) * Complex64::new(0.25 * r[(a, b)], 0.0);
        }
    }
    Ok(rho)
}

/// Linear inversion followed by projection onto the positive cone (negative
/// eigenvalues clipped, trace restored).
pub fn reconstruct_state(p: &[[f64; 4]; 4]) -> Result<TwoQubitState> {
    let rho = linear_inversion(p)?;
    let hermitian = (rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(hermitian);
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let mut out = Matrix4::zeros();
    for (k, &l) in clipped.iter().enumerate() {
        if l > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += v * v.adjoint() * Complex64::new(l / total, 0.0);
        }
    }
    Ok(TwoQubitState {
        rho: (out + out.adjoint()) * Complex64::new(0.5, 0.0),
    })
}

/// `Tr ρ²`.
pub fn purity(state: &TwoQubitState) -> f64 {
    (state.rho * state.rho).trace().re
}

/// Fidelity to `(|HV⟩ − e^{iφ}|VH⟩)/√2` maximized over φ:
/// `F(φ) = ½(ρ₁₁ + ρ₂₂) − Re(e^{iφ} ρ₁₂)`, largest at `φ̂ = π − arg ρ₁₂` where
/// it equals `½(ρ₁₁ + ρ₂₂) + |ρ₁₂|`. Returns `(F, φ̂)` with `φ̂ ∈ (−π, π]`.
pub fn fidelity_singlet(state: &TwoQubitState) -> (f64, f64) {
    let r = &state.rho;
    let off = r[(1, 2)];
    let f = 0.5 * (r[(1, 1)].re + r[(2, 2)].re) + off.norm();
    (f, wrap_phase(PI - off.arg()))
}

/// Fidelity to the singlet with a given phase.
pub fn fidelity_at_phase(state: &TwoQubitState, phi: f64) -> f64 {
    let r = &state.rho;
    0.5 * (r[(1, 1)].re + r[(2, 2)].re) - (Complex64::from_polar(1.0, phi) * r[(1, 2)]).re
}

pub fn wrap_phase(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// One frequency bin of the hyperentangled state. `label` ±1..±n names the
/// idler bin; its partner signal bin is `−label`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinState {
    pub label: i32,
    pub weight: f64,
    pub phase: f64,
    /// Scale of the `HV/VH` coherence; 1 for a pure state.
    pub coherence: f64,
    /// Rotation angle about σx applied to the signal qubit, modelling
    /// wavelength-dependent waveplate retardance.
    pub retardance: f64,
}

impl BinState {
    pub fn state(&self) -> TwoQubitState {
        let base = TwoQubitState::dephased_singlet(self.phase, self.coherence);
        if self.retardance == 0.0 {
            return base;
        }
        let (c, s) = ((0.5 * self.retardance).cos(), (0.5 * self.retardance).sin());
        let u = Matrix2::new(
            Complex64::new(c, 0.0),
            Complex64::new(0.0, -s),
            Complex64::new(0.0, -s),
            Complex64::new(c, 0.0),
        );
        base.rotated_signal(&u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperState {
    bins: Vec<BinState>,
}

impl HyperState {
    /// Normalizes weights to unit sum and wraps phases into `(−π, π]`.
    pub fn new(mut bins: Vec<BinState>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::Empty);
        }
        let total: f64 = bins.iter().map(|b| b.weight).sum();
        for b in &bins {
            if !(b.weight >= 0.0 && b.weight.is_finite()) {
                return Err(invalid("weight", "must be finite and >= 0"));
            }
            if !(0.0..=1.0).contains(&b.coherence) {
                return Err(invalid("coherence", "must be in [0, 1]"));
            }
            if b.label == 0 || !b.phase.is_finite() || !b.retardance.is_finite() {
                return Err(invalid("bin", "label must be non-zero and angles finite"));
            }
        }
        if !(total > 0.0) {
            return Err(Error::ZeroWeights);
        }
        for b in &mut bins {
            b.weight /= total;
            b.phase = wrap_phase(b.phase);
        }
        Ok(Self { bins })
    }

    /// Equal weights, zero phases, pure states; labels `−n..−1, 1..n`.
    pub fn uniform(n_pairs: usize) -> Result<Self> {
        Self::new(
            bin_labels(n_pairs)
                .into_iter()
                .map(|label| BinState {
                    label,
                    weight: 1.0,
                    phase: 0.0,
                    coherence: 1.0,
                    retardance: 0.0,
                })
                .collect(),
        )
    }

    pub fn bins(&self) -> &[BinState] {
        &self.bins
    }
}

/// `−n, …, −1, 1, …, n`.
pub fn bin_labels(n_pairs: usize) -> Vec<i32> {
    let n = n_pairs as i32;
    (-n..=n).filter(|&l| l != 0).collect()
}

/// Idler detuning (Hz) of bin `label` for neighbouring bins `spacing_hz` apart.
pub fn bin_detuning_hz(label: i32, spacing_hz: f64) -> f64 {
    label.signum() as f64 * (2 * label.abs() - 1) as f64 * 0.5 * spacing_hz
}

/// Joint spectrum of each bin from the single comb peak that produces it,
/// ordered as [`bin_labels`].
pub fn bin_spectra(
    comb: &CombSpec,
    pump: &PumpSpec,
    map: &DispersionMap,
    grid: &FrequencyGrid,
) -> Result<Vec<(i32, JointSpectralIntensity)>> {
    let offsets = comb.peak_offsets();
    let mut out: Vec<(i32, JointSpectralIntensity)> = (0..offsets.len())
        .into_par_iter()
        .map(|p| {
            // Peak at Δk − Δk₀ = off sits at ν_i − ν_s = off/β, i.e. idler at off/(2β).
            let idler_side = offsets[p] * map.slope();
            let j = (offsets[p].abs() / comb.spacing() - 0.5).round() as i32 + 1;
            let label = if idler_side > 0.0 { j } else { -j };
            let jsa = build_jsa(pump, |dk| Complex64::new(target_pmf_peak(comb, p, dk), 0.0), map, grid)?;
            Ok((label, jsa.intensity()))
        })
        .collect::<Result<_>>()?;
    out.sort_by_key(|(l, _)| *l);
    Ok(out)
}

/// 16 count matrices, `[j−1][k−1]`.
#[derive(Debug, Clone)]
pub struct TomographyBundle {
    pub projections: Vec<Vec<CountMatrix>>,
}

impl TomographyBundle {
    pub fn get(&self, j: usize, k: usize) -> &CountMatrix {
        &self.projections[j - 1][k - 1]
    }

    pub fn total(&self) -> u64 {
        self.projections.iter().flatten().map(|c| c.total()).sum()
    }

    /// Writes `proj_<j>_<k>.csv` for all 16 settings.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for j in 1..=4 {
            for k in 1..=4 {
                let f = fs::File::create(dir.join(format!("proj_{j}_{k}.csv")))?;
                self.get(j, k).write_to(std::io::BufWriter::new(f))?;
            }
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path, center_wavelength: f64) -> Result<Self> {
        let mut projections = Vec::with_capacity(4);
        for j in 1..=4 {
            let mut row = Vec::with_capacity(4);
            for k in 1..=4 {
                let path = dir.join(format!("proj_{j}_{k}.csv"));
                let f = fs::File::open(&path)?;
                row.push(CountMatrix::read_from(BufReader::new(f), center_wavelength)?);
            }
            projections.push(row);
        }
        Ok(Self { projections })
    }
}

/// Forward-simulates the 16 projections. Each is its own acquisition with a
/// Poisson total of mean `events · 4 · Σ_i w_i Tr[ρ_i M_j⊗M_k]` (so the mean
/// over settings is `events`), spread over the spectrometer grid in
/// proportion to the per-bin expected spectra.
pub fn simulate_tomography(
    hyper: &HyperState,
    bin_jsis: &[JointSpectralIntensity],
    spec: &SpectrometerSpec,
    events: u64,
    seed: u64,
) -> Result<TomographyBundle> {
    if bin_jsis.len() != hyper.bins().len() {
        return Err(invalid("bin_jsis", "need one spectrum per bin"));
    }
    let first = bin_jsis.first().ok_or(Error::Empty)?;
    let forward = TofsForward::new(spec, first.grid())?;
    let projected: Vec<_> = bin_jsis.par_iter().map(|j| forward.project(j)).collect::<Result<_>>()?;
    // Outer bins may lose more than the tolerance on their own; the limit
    // applies to the pair-weighted total.
    let outside: f64 = hyper
        .bins()
        .iter()
        .zip(&projected)
        .map(|(b, e)| b.weight * e.outside_mass())
        .sum();
    if outside > spec.alias_tolerance {
        return Err(Error::Aliasing {
            mass: outside,
            limit: spec.alias_tolerance,
        });
    }
    let expected: Vec<DMatrix<f64>> = projected.into_iter().map(|e| e.probabilities().clone()).collect();
    let states: Vec<TwoQubitState> = hyper.bins().iter().map(|b| b.state()).collect();
    let nt = spec.bins();

    let cells: Vec<CountMatrix> = (0..16)
        .into_par_iter()
        .map(|idx| {
            let (j, k) = (idx / 4 + 1, idx % 4 + 1);
            let mut p = DMatrix::<f64>::zeros(nt, nt);
            for ((b, st), e) in hyper.bins().iter().zip(&states).zip(&expected) {
                let w = b.weight * project_probability(st, j, k)?;
                if w > 0.0 {
                    p += e * w;
                }
            }
            let mass: f64 = p.iter().sum();
            let mut rng = trial_rng(seed, idx as u64);
            let total = poisson(events as f64 * 4.0 * mass, &mut rng);
            let flat: Vec<f64> = (0..nt * nt).map(|q| p[(q / nt, q % nt)]).collect();
            let drawn = multinomial(total, &flat, &mut rng);
            CountMatrix::new(
                DMatrix::from_fn(nt, nt, |i, s| drawn[i * nt + s]),
                spec.time_bin,
                spec.window_start(),
                spec.dispersion(),
                spec.center_wavelength,
            )
        })
        .collect::<Result<_>>()?;
    let mut it = cells.into_iter();
    let projections = (0..4).map(|_| (0..4).map(|_| it.next().expect("16 cells")).collect()).collect();
    Ok(TomographyBundle { projections })
}

/// Square arrival-time gate isolating one idler/signal bin pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateSpec {
    pub bin_spacing_hz: f64,
    pub width: f64,
}

impl Default for GateSpec {
    fn default() -> Self {
        Self {
            bin_spacing_hz: 500e9,
            width: DEFAULT_GATE_WIDTH_S,
        }
    }
}

impl GateSpec {
    /// Gate centres `(idler, signal)` in seconds for bin `label`.
    pub fn centers(&self, counts: &CountMatrix, label: i32) -> (f64, f64) {
        let nu0 = SPEED_OF_LIGHT / counts.center_wavelength();
        let t = |hz: f64| counts.dispersion() * (SPEED_OF_LIGHT / (nu0 + hz) - counts.center_wavelength());
        let d = bin_detuning_hz(label, self.bin_spacing_hz);
        (t(d), t(-d))
    }
}

/// Sum of counts whose time-bin centres fall in the gate square of `label`.
pub fn gate_bin(counts: &CountMatrix, label: i32, gate: &GateSpec) -> Result<u64> {
    if label == 0 {
        return Err(invalid("label", "bins are numbered from ±1"));
    }
    let (ti, ts) = gate.centers(counts, label);
    let lo = counts.t0();
    let hi = lo + counts.nt() as f64 * counts.dt();
    for t in [ti, ts] {
        if !(t >= lo && t < hi) {
            return Err(Error::OutsideWindow {
                time_s: t,
                window_s: hi - lo,
            });
        }
    }
    let half = 0.5 * gate.width;
    let select = |c: f64| -> Vec<usize> {
        (0..counts.nt())
            .filter(|&k| {
                let t = counts.time_center(k);
                t >= c - half && t < c + half
            })
            .collect()
    };
    let rows = select(ti);
    let cols = select(ts);
    let m = counts.counts();
    Ok(rows.iter().map(|&i| cols.iter().map(|&s| m[(i, s)]).sum::<u64>()).sum())
}

/// `p_jk = 4 c_jk / Σ c`.
pub fn probabilities_from_counts(c: &[[u64; 4]; 4]) -> Result<[[f64; 4]; 4]> {
    let total: u64 = c.iter().flatten().sum();
    if total == 0 {
        return Err(Error::ZeroWeights);
    }
    let mut p = [[0.0; 4]; 4];
    for j in 0..4 {
        for k in 0..4 {
            p[j][k] = 4.0 * c[j][k] as f64 / total as f64;
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinResult {
    pub label: i32,
    pub counts: [[u64; 4]; 4],
    pub purity: f64,
    pub fidelity: f64,
    pub phase: f64,
    pub purity_std: Option<f64>,
    pub fidelity_std: Option<f64>,
}

/// Gated counts → state → purity, fidelity and phase for one bin.
pub fn analyze_counts(label: i32, counts: [[u64; 4]; 4]) -> Result<BinResult> {
    let state = reconstruct_state(&probabilities_from_counts(&counts)?)?;
    let (fidelity, phase) = fidelity_singlet(&state);
    Ok(BinResult {
        label,
        counts,
        purity: purity(&state),
        fidelity,
        phase,
        purity_std: None,
        fidelity_std: None,
    })
}

/// Poisson-resampled purity and fidelity of one bin's 16 gated counts.
pub fn bin_uncertainty(counts: &[[u64; 4]; 4], trials: usize, seed: u64) -> Result<(Estimate, Estimate)> {
    if trials < 2 {
        return Err(invalid("trials", "need at least 2"));
    }
    let flat: Vec<u64> = counts.iter().flatten().copied().collect();
    let samples: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            let r = poisson_resample(&flat, &mut rng);
            let mut c = [[0u64; 4]; 4];
            for (q, v) in r.into_iter().enumerate() {
                c[q / 4][q % 4] = v;
            }
            let res = analyze_counts(0, c)?;
            Ok((res.purity, res.fidelity))
        })
        .collect::<Result<_>>()?;
    let p: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let f: Vec<f64> = samples.iter().map(|s| s.1).collect();
    Ok((Estimate::from_samples(&p), Estimate::from_samples(&f)))
}

/// Gates every bin in `labels` and reconstructs it; with `trials > 0` adds
/// Monte-Carlo error bars (bin `b` uses seed stream offset `b·trials`).
pub fn analyze_bundle(
    bundle: &TomographyBundle,
    labels: &[i32],
    gate: &GateSpec,
    trials: usize,
    seed: u64,
) -> Result<Vec<BinResult>> {
    labels
        .iter()
        .enumerate()
        .map(|(b, &label)| {
            let mut c = [[0u64; 4]; 4];
            for (j, row) in c.iter_mut().enumerate() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = gate_bin(bundle.get(j + 1, k + 1), label, gate)?;
                }
            }
            let mut res = analyze_counts(label, c)?;
            if trials > 0 {
                let (p, f) = bin_uncertainty(&c, trials, seed.wrapping_add((b * trials) as u64))?;
                res.purity_std = Some(p.std);
                res.fidelity_std = Some(f.std);
            }
            Ok(res)
        })
        .collect()
}

/// Per-bin table plus averages.
pub fn format_results(results: &[BinResult]) -> String {
    let mut s = String::from("bin,purity,purity_std,fidelity,fidelity_std,phase_rad\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "nan".into());
    for r in results {
        let _ = writeln!(
            s,
            "{},{:.6},{},{:.6},{},{:.6}",
            r.label,
            r.purity,
            opt(r.purity_std),
            r.fidelity,
            opt(r.fidelity_std),
            r.phase
        );
    }
    if !results.is_empty() {
        let n = results.len() as f64;
        let _ = writeln!(
            s,
            "# mean_purity={:.6} mean_fidelity={:.6}",
            results.iter().map(|r| r.purity).sum::<f64>() / n,
            results.iter().map(|r| r.fidelity).sum::<f64>() / n
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sic_properties() {
        let mut sum = Matrix2::zeros();
        for j in 1..=4 {
            let m = sic_operator(j).unwrap();
            assert!((m * m - m).norm() < 1e-12);
            assert!((m.trace() - C1).norm() < 1e-12);
            sum += m;
            for k in 1..=4 {
                if j != k {
                    let t = (m * sic_operator(k).unwrap()).trace();
                    assert!((t - Complex64::new(1.0 / 3.0, 0.0)).norm() < 1e-12);
                }
            }
        }
        assert!((sum - Matrix2::identity() * Complex64::new(2.0, 0.0)).norm() < 1e-12);
        assert!(sic_operator(0).is_err());
        assert!(sic_operator(5).is_err());
    }

    #[test]
    fn projection_examples() {
        let mixed = TwoQubitState::maximally_mixed();
        let singlet = TwoQubitState::singlet(0.0);
        for j in 1..=4 {
            for k in 1..=4 {
                assert!((project_probability(&mixed, j, k).unwrap() - 0.25).abs() < 1e-12);
                let p = project_probability(&singlet, j, k).unwrap();
                let expect = if j == k { 0.0 } else { 1.0 / 3.0 };
                assert!((p - expect).abs() < 1e-12, "{j} {k} {p}");
            }
        }
        let total: f64 = projection_table(&singlet).iter().flatten().sum();
        assert!((total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn inversion_roundtrip() {
        let a = TwoQubitState::singlet(0.7);
        let b = TwoQubitState::dephased_singlet(-2.0, 0.3);
        let st = TwoQubitState::mixture(&a, &b, 0.6).unwrap();
        let rho = linear_inversion(&projection_table(&st)).unwrap();
        assert!((rho - st.matrix()).norm() < 1e-10);
        let rec = reconstruct_state(&[[1.0; 4]; 4]).unwrap();
        assert!((rec.matrix() - TwoQubitState::maximally_mixed().matrix()).norm() < 1e-12);
        assert!(reconstruct_state(&[[0.0; 4]; 4]).is_err());
    }

    #[test]
    fn fidelity_and_purity_examples() {
        for phi in [-3.0, 0.0, 0.7, 2.5, PI] {
            let s = TwoQubitState::singlet(phi);
            let (f, p) = fidelity_singlet(&s);
            assert!((f - 1.0).abs() < 1e-12);
            assert!((purity(&s) - 1.0).abs() < 1e-12);
            assert!((wrap_phase(p - phi)).abs() < 1e-12);
        }
        let m = TwoQubitState::maximally_mixed();
        assert!((purity(&m) - 0.25).abs() < 1e-15);
        assert!((fidelity_singlet(&m).0 - 0.25).abs() < 1e-15);
        let dep = TwoQubitState::mixture(&TwoQubitState::singlet(0.0), &m, 0.9).unwrap();
        assert!((purity(&dep) - 0.8575).abs() < 1e-12);
        assert!((fidelity_singlet(&dep).0 - 0.925).abs() < 1e-12);
    }

    #[test]
    fn closed_form_phase_matches_scan() {
        let st = TwoQubitState::mixture(&TwoQubitState::singlet(1.1), &TwoQubitState::maximally_mixed(), 0.7).unwrap();
        let (f, phi) = fidelity_singlet(&st);
        let best = (0..3600)
            .map(|k| -PI + k as f64 * 2.0 * PI / 3600.0)
            .map(|p| fidelity_at_phase(&st, p))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best <= f + 1e-12 && f - best < 1e-6);
        assert!((fidelity_at_phase(&st, phi) - f).abs() < 1e-12);
    }

    #[test]
    fn hyper_state_normalizes() {
        let h = HyperState::uniform(4).unwrap();
        assert_eq!(h.bins().len(), 8);
        assert!((h.bins().iter().map(|b| b.weight).sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(bin_labels(2), vec![-2, -1, 1, 2]);
        assert_eq!(bin_detuning_hz(-3, 500e9), -1250e9);
        let bad = HyperState::new(vec![BinState {
            label: 1,
            weight: 0.0,
            phase: 0.0,
            coherence: 1.0,
            retardance: 0.0,
        }]);
        assert!(bad.is_err());
    }

    #[test]
    fn empty_gate_is_zero() {
        let spec = SpectrometerSpec::default();
        let c = CountMatrix::zeros(&spec).unwrap();
        assert_eq!(gate_bin(&c, 1, &GateSpec::default()).unwrap(), 0);
        assert!(gate_bin(&c, 9, &GateSpec::default()).is_err());
    }

    #[test]
    fn gates_are_disjoint() {
        let spec = SpectrometerSpec::default();
        let c = CountMatrix::zeros(&spec).unwrap();
        let g = GateSpec::default();
        let mut centers: Vec<f64> = bin_labels(4).iter().map(|&l| g.centers(&c, l).0).collect();
        centers.sort_by(f64::total_cmp);
        for w in centers.windows(2) {
            assert!(w[1] - w[0] > g.width, "{:?}", w);
        }
    }
}
