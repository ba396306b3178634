//! Schmidt decomposition and the entanglement metrics built on it.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::biphoton::JointSpectralAmplitude;
use crate::error::{invalid, Error, Result};
use crate::sampling::{poisson_resample, trial_rng, Estimate};

/// Weights below this are treated as numerical noise and set to zero.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Schmidt weights and modes. Mode `k` is column `k` of the mode matrices,
/// orthonormal in the discrete sense (`Σ|u_k|² = 1`).
#[derive(Debug, Clone)]
pub struct SchmidtSpectrum {
    weights: Vec<f64>,
    idler_modes: DMatrix<Complex64>,
    signal_modes: DMatrix<Complex64>,
    /// Multiplies the reconstructed matrix back into the caller's normalization.
    scale: f64,
}

impl SchmidtSpectrum {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn idler_modes(&self) -> &DMatrix<Complex64> {
        &self.idler_modes
    }

    pub fn signal_modes(&self) -> &DMatrix<Complex64> {
        &self.signal_modes
    }

    pub fn schmidt_number(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// `Σ √λ_k u_k v_kᵀ`, in the normalization of the decomposed matrix.
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        self.reconstruct_truncated(self.weights.len())
    }

    pub fn reconstruct_truncated(&self, modes: usize) -> DMatrix<Complex64> {
        let (r, c) = (self.idler_modes.nrows(), self.signal_modes.nrows());
        let mut out = DMatrix::<Complex64>::zeros(r, c);
        for k in 0..modes.min(self.weights.len()) {
            let a = self.weights[k].sqrt() * self.scale;
            if a == 0.0 {
                continue;
            }
            let u = self.idler_modes.column(k);
            let v = self.signal_modes.column(k);
            out += (u * v.transpose()) * Complex64::new(a, 0.0);
        }
        out
    }
}

/// Singular-value decomposition of the amplitude matrix of `jsa`.
pub fn schmidt_decompose(jsa: &JointSpectralAmplitude) -> Result<SchmidtSpectrum> {
    decompose_matrix(jsa.values())
}

/// Schmidt decomposition of an arbitrary amplitude matrix (rows = idler).
pub fn decompose_matrix(m: &DMatrix<Complex64>) -> Result<SchmidtSpectrum> {
    check_matrix(m.iter().map(|v| v.re.is_finite() && v.im.is_finite()), m.len())?;
    let (sv, u, vt) = if m.iter().all(|v| v.im == 0.0) {
        let svd = m.map(|v| v.re).svd(true, true);
        let cast = |x: DMatrix<f64>| x.map(|v| Complex64::new(v, 0.0));
        (
            svd.singular_values.iter().copied().collect::<Vec<_>>(),
            cast(svd.u.expect("u requested")),
            cast(svd.v_t.expect("v_t requested")),
        )
    } else {
        let svd = m.clone().svd(true, true);
        (
            svd.singular_values.iter().copied().collect(),
            svd.u.expect("u requested"),
            svd.v_t.expect("v_t requested"),
        )
    };
    let (weights, scale) = weights_from_singular_values(sv)?;
    Ok(SchmidtSpectrum {
        weights,
        idler_modes: u,
        // f = U S Vᵀ* so the signal mode functions are the rows of Vᴴ.
        signal_modes: vt.transpose(),
        scale,
    })
}

/// Weights only; cheaper than [`decompose_matrix`].
pub fn schmidt_weights(jsa: &JointSpectralAmplitude) -> Result<Vec<f64>> {
    let m = jsa.values();
    if jsa.is_real() {
        real_schmidt_weights(&m.map(|v| v.re))
    } else {
        check_matrix(m.iter().map(|v| v.re.is_finite() && v.im.is_finite()), m.len())?;
        let sv = m.clone().singular_values();
        Ok(weights_from_singular_values(sv.iter().copied().collect())?.0)
    }
}

/// Weights of a real amplitude matrix. All-zero rows and columns are dropped
/// first; they do not change the singular values.
pub fn real_schmidt_weights(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_matrix(m.iter().map(|v| v.is_finite()), m.len())?;
    let rows: Vec<usize> = (0..m.nrows()).filter(|&i| m.row(i).iter().any(|&v| v != 0.0)).collect();
    let cols: Vec<usize> = (0..m.ncols()).filter(|&j| m.column(j).iter().any(|&v| v != 0.0)).collect();
    if rows.is_empty() {
        return Err(Error::ZeroWeights);
    }
    let cropped = if rows.len() == m.nrows() && cols.len() == m.ncols() {
        m.clone()
    } else {
        m.select_rows(&rows).select_columns(&cols)
    };
    let sv = cropped.singular_values();
    Ok(weights_from_singular_values(sv.iter().copied().collect())?.0)
}

fn check_matrix(finite: impl Iterator<Item = bool>, len: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::Empty);
    }
    let mut all = true;
    for f in finite {
        all &= f;
    }
    if all {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn weights_from_singular_values(mut sv: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    sv.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sv.iter().map(|s| s * s).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let weights = sv
        .iter()
        .map(|s| {
            let w = s * s / total;
            if w < WEIGHT_FLOOR {
                0.0
            } else {
                w
            }
        })
        .collect();
    Ok((weights, total.sqrt()))
}

fn validated(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Empty);
    }
    let mut total = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::NonFinite);
        }
        if w < 0.0 {
            return Err(Error::NegativeEntry {
                row: k,
                col: 0,
                value: w,
            });
        }
        total += w;
    }
    if total == 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok(total)
}

/// Effective mode number `K = 1 / Σλ²` (weights renormalized first).
pub fn schmidt_number(weights: &[f64]) -> Result<f64> {
    let total = validated(weights)?;
    Ok(1.0 / weights.iter().map(|w| (w / total).powi(2)).sum::<f64>())
}

/// Overlap `(Σ_{i<n} √(λ_i/n))²` of the sorted weights with the flat `n`-mode
/// distribution. Missing weights count as zero.
pub fn fidelity_to_maximal(weights: &[f64], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "must be >= 1"));
    }
    let total = validated(weights)?;
    let mut sorted: Vec<f64> = weights.iter().map(|w| w / total).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let s: f64 = sorted.iter().take(n).map(|w| (w / n as f64).sqrt()).sum();
    Ok((s * s).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    SchmidtNumber,
    FidelityToMaximal(usize),
}

impl Metric {
    pub fn evaluate(&self, weights: &[f64]) -> Result<f64> {
        match *self {
            Metric::SchmidtNumber => schmidt_number(weights),
            Metric::FidelityToMaximal(n) => fidelity_to_maximal(weights, n),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::SchmidtNumber => "schmidt_number",
            Metric::FidelityToMaximal(_) => "fidelity_to_maximal",
        }
    }
}

/// Poisson-resamples every cell of `counts`, re-derives the amplitude as
/// `√counts` and evaluates each metric. Trial `t` draws from stream `t` of
/// `seed`, so the result is independent of the thread count.
pub fn monte_carlo_uncertainty(
    counts: &DMatrix<u64>,
    trials: usize,
    seed: u64,
    metrics: &[Metric],
) -> Result<Vec<Estimate>> {
    if trials < 2 {
        return Err(invalid("trials", "need at least 2"));
    }
    if counts.is_empty() || counts.iter().all(|&c| c == 0) {
        return Err(Error::Empty);
    }
    let rows: Vec<usize> = (0..counts.nrows()).filter(|&i| counts.row(i).iter().any(|&c| c > 0)).collect();
    let cols: Vec<usize> = (0..counts.ncols()).filter(|&j| counts.column(j).iter().any(|&c| c > 0)).collect();
    let cropped = counts.select_rows(&rows).select_columns(&cols);
    let cells: Vec<u64> = cropped.iter().copied().collect();
    let (r, c) = cropped.shape();

    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<f64>> {
            let mut rng = trial_rng(seed, t as u64);
            let sample = poisson_resample(&cells, &mut rng);
            let amp = DMatrix::from_iterator(r, c, sample.iter().map(|&v| (v as f64).sqrt()));
            let w = real_schmidt_weights(&amp)?;
            metrics.iter().map(|m| m.evaluate(&w)).collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..metrics.len())
        .map(|k| {
            let v: Vec<f64> = per_trial.iter().map(|t| t[k]).collect();
            Estimate::from_samples(&v)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntanglementReport {
    pub schmidt_number: f64,
    pub fidelity_to_maximal: f64,
    pub mode_count: usize,
    pub schmidt_number_std: Option<f64>,
    pub fidelity_std: Option<f64>,
    pub trials: Option<usize>,
    /// Largest weights, for display.
    pub leading_weights: Vec<f64>,
}

impl EntanglementReport {
    pub fn from_weights(weights: &[f64], mode_count: usize) -> Result<Self> {
        let mut sorted = weights.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            schmidt_number: schmidt_number(weights)?,
            fidelity_to_maximal: fidelity_to_maximal(weights, mode_count)?,
            mode_count,
            schmidt_number_std: None,
            fidelity_std: None,
            trials: None,
            leading_weights: sorted.into_iter().take((2 * mode_count).max(1)).collect(),
        })
    }

    pub fn with_uncertainty(mut self, k: Estimate, f: Estimate) -> Self {
        self.schmidt_number_std = Some(k.std);
        self.fidelity_std = Some(f.std);
        self.trials = Some(k.trials);
        self
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "schmidt_number: {:.6}", self.schmidt_number);
        if let Some(v) = self.schmidt_number_std {
            let _ = writeln!(s, "schmidt_number_std: {v:.6}");
        }
        let _ = writeln!(s, "fidelity_to_maximal: {:.6}", self.fidelity_to_maximal);
        if let Some(v) = self.fidelity_std {
            let _ = writeln!(s, "fidelity_std: {v:.6}");
        }
        let _ = writeln!(s, "mode_count: {}", self.mode_count);
        if let Some(t) = self.trials {
            let _ = writeln!(s, "monte_carlo_trials: {t}");
        }
        let w: Vec<String> = self.leading_weights.iter().map(|w| format!("{w:.6}")).collect();
        let _ = writeln!(s, "leading_weights: {}", w.join(","));
        s
    }

    /// Single line of space-separated `key=value` pairs.
    pub fn summary_line(&self) -> String {
        let mut s = format!(
            "K={:.6} F={:.6} n={}",
            self.schmidt_number, self.fidelity_to_maximal, self.mode_count
        );
        if let (Some(ks), Some(fs)) = (self.schmidt_number_std, self.fidelity_std) {
            let _ = write!(s, " K_std={ks:.6} F_std={fs:.6}");
        }
        s
    }
}
