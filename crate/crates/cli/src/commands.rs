use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use num_complex::Complex64;
use qpmforge_core::analysis::{monte_carlo_uncertainty, schmidt_weights, EntanglementReport, Metric};
use qpmforge_core::biphoton::{build_jsa, JointSpectralAmplitude};
use qpmforge_core::crystal::{design_domains, linspace, pmf_curve, pmf_of_domains, pmf_overlap, target_pmf};
use qpmforge_core::interference::{
    delta_from_bin_spacing, fit_hom, sweep_closed, visibility, Baseline, CurveKind, HeraldedKernel, HomCurve,
    HomFitOptions, HomGuess, TwoPhotonKernel,
};
use qpmforge_core::measurement::{amplitude_from_jsi, reconstruct_jsi, simulate_counts, CountMatrix};
use qpmforge_core::peaks::{find_separated_peaks, refine_peak};
use qpmforge_core::sampling::{poisson, trial_rng};
use qpmforge_core::tomography::{
    analyze_bundle, bin_labels, bin_spectra, fidelity_singlet, format_results, purity, simulate_tomography,
    BinState, GateSpec, HyperState, TomographyBundle,
};
use rand::Rng;

use crate::config::{PerBin, PmfSource, RunConfig};
use crate::error::CliError;

// Stream indices far above any Monte-Carlo trial index.
const PHASE_STREAM: u64 = 1 << 40;
const HOM_STREAM: u64 = (1 << 40) + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Design,
    Simulate,
    Hom,
    Heralded,
    TofsSim,
    TofsAnalyze,
    TomoSim,
    TomoFit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Design => "design",
            Command::Simulate => "simulate",
            Command::Hom => "hom",
            Command::Heralded => "heralded",
            Command::TofsSim => "tofs-sim",
            Command::TofsAnalyze => "tofs-analyze",
            Command::TomoSim => "tomo-sim",
            Command::TomoFit => "tomo-fit",
        }
    }
}

/// Output directory that remembers what was written, for the manifest.
struct Out {
    dir: PathBuf,
    files: Vec<String>,
}

impl Out {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(|e| CliError::output(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::output(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn text(&mut self, name: &str, s: &str) -> Result<(), CliError> {
        self.write(name, |w| w.write_all(s.as_bytes()))
    }

    fn manifest(mut self, cmd: Command, cfg: &RunConfig) -> Result<(), CliError> {
        let mut s = format!("# qpmforge {} {}\n", env!("CARGO_PKG_VERSION"), cmd.name());
        let _ = writeln!(s, "# outputs: {}", self.files.join(" "));
        s.push_str(&cfg.to_ini());
        self.text("manifest.txt", &s)
    }
}

pub fn run(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let mut out = Out::new(out_dir)?;
    match cmd {
        Command::Design => design(cfg, &mut out)?,
        Command::Simulate => simulate(cfg, &mut out)?,
        Command::Hom => hom(cfg, &mut out, CurveKind::TwoPhoton)?,
        Command::Heralded => hom(cfg, &mut out, CurveKind::Heralded)?,
        Command::TofsSim => tofs_sim(cfg, &mut out)?,
        Command::TofsAnalyze => tofs_analyze(cfg, &mut out)?,
        Command::TomoSim => tomo_sim(cfg, &mut out)?,
        Command::TomoFit => tomo_fit(cfg, &mut out)?,
    }
    out.manifest(cmd, cfg)
}

fn design(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let comb = cfg.comb()?;
    let config = design_domains(&comb, cfg.crystal.domain_width_m)?;
    let overlap = pmf_overlap(&config, &comb, cfg.crystal.pmf_samples);
    info!("{} domains, overlap {overlap:.5}", config.len());
    out.write("domains.txt", |w| config.write_to(w))?;

    let (lo, hi) = comb.design_band();
    let dks = linspace(lo, hi, cfg.crystal.pmf_samples);
    let pmf = pmf_curve(&config, &dks);
    out.write("pmf.csv", |w| {
        writeln!(w, "dk_rad_per_m,design_abs,target")?;
        for (dk, p) in dks.iter().zip(&pmf) {
            writeln!(w, "{dk:e},{:e},{:e}", p.norm(), target_pmf(&comb, *dk))?;
        }
        Ok(())
    })?;
    let mut r = String::new();
    let _ = writeln!(r, "domains: {}", config.len());
    let _ = writeln!(r, "total_length_m: {:e}", config.total_length());
    let _ = writeln!(r, "comb_spacing_rad_per_m: {:e}", comb.spacing());
    let _ = writeln!(r, "pmf_overlap: {overlap:.6}");
    out.text("report.txt", &r)
}

fn joint_amplitude(cfg: &RunConfig, points: usize) -> Result<JointSpectralAmplitude, CliError> {
    let comb = cfg.comb()?;
    let pump = cfg.pump()?;
    let map = cfg.dispersion()?;
    let grid = cfg.grid(points)?;
    let jsa = match cfg.crystal.pmf {
        PmfSource::Ideal => build_jsa(&pump, |dk| Complex64::new(target_pmf(&comb, dk), 0.0), &map, &grid)?,
        PmfSource::Engineered => {
            let config = design_domains(&comb, cfg.crystal.domain_width_m)?;
            build_jsa(&pump, |dk| pmf_of_domains(&config, dk), &map, &grid)?
        }
    };
    Ok(jsa)
}

fn mode_count(cfg: &RunConfig) -> usize {
    if cfg.crystal.bin_spacing_hz == 0.0 {
        1
    } else {
        2 * cfg.crystal.bin_pairs
    }
}

fn simulate(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let jsa = joint_amplitude(cfg, cfg.grid_points)?;
    let weights = schmidt_weights(&jsa)?;
    let report = EntanglementReport::from_weights(&weights, mode_count(cfg))?;
    info!("{}", report.summary_line());
    let jsi = jsa.intensity();
    out.write("jsi.txt", |w| jsi.write_to(w))?;
    let axis = jsa.grid().idler.values();
    let (idler, signal) = jsi.marginals();
    out.write("marginals.csv", |w| {
        writeln!(w, "detuning_hz,idler,signal")?;
        for k in 0..axis.len() {
            writeln!(w, "{:e},{:e},{:e}", axis[k] / (2.0 * PI), idler[k], signal[k])?;
        }
        Ok(())
    })?;
    let mut r = report.to_text();
    // Heralded single-photon purity Σλ² is the inverse Schmidt number.
    let _ = writeln!(r, "heralded_purity: {:.6}", 1.0 / report.schmidt_number);
    let _ = writeln!(r, "boundary_fraction: {:e}", jsa.boundary_fraction());
    let _ = writeln!(r, "grid_points: {}", cfg.grid_points);
    out.text("report.txt", &r)
}

fn hom(cfg: &RunConfig, out: &mut Out, kind: CurveKind) -> Result<(), CliError> {
    let h = &cfg.hom;
    let jsa = joint_amplitude(cfg, cfg.grid_points)?;
    let delays = linspace(h.delay_min_s, h.delay_max_s, h.delay_points);
    let p: Vec<f64> = match kind {
        CurveKind::TwoPhoton => {
            let k = TwoPhotonKernel::new(&jsa)?;
            delays.iter().map(|&t| k.eval(t)).collect()
        }
        CurveKind::Heralded => {
            let k = HeraldedKernel::new(&jsa)?;
            delays.iter().map(|&t| k.eval(t)).collect()
        }
    };
    let curve = HomCurve::new(kind, delays.clone(), p.clone())?;
    out.write("curve.csv", |w| curve.write_to(w))?;
    let mut r = String::new();
    let _ = writeln!(r, "kind: {}", kind.as_str());
    let _ = writeln!(r, "visibility: {:.6}", visibility(&curve, Baseline::Fixed(0.5))?);
    let _ = writeln!(r, "p_zero_delay: {:.6e}", interpolate_zero(&delays, &p));

    if cfg.crystal.bin_spacing_hz > 0.0 {
        let delta = delta_from_bin_spacing(cfg.crystal.bin_spacing_hz);
        let sigma = cfg.dispersion()?.difference_width(cfg.crystal.peak_width_m);
        let (closed, clamp) = sweep_closed(kind, &delays, cfg.crystal.bin_pairs, delta, sigma)?;
        out.write("closed.csv", |w| closed.write_to(w))?;
        let _ = writeln!(r, "closed_form_visibility: {:.6}", visibility(&closed, Baseline::Fixed(0.5))?);
        let _ = writeln!(r, "closed_form_clamped: {}", clamp.clamped);

        if h.baseline_counts > 0.0 {
            let mut rng = trial_rng(cfg.seed, HOM_STREAM);
            let counts: Vec<f64> = p
                .iter()
                .map(|&v| poisson(2.0 * h.baseline_counts * v, &mut rng) as f64)
                .collect();
            let noisy = HomCurve::new(kind, delays, counts)?;
            out.write("counts.csv", |w| noisy.write_to(w))?;
            let guess = HomGuess {
                bin_spacing_hz: cfg.crystal.bin_spacing_hz,
                sigma,
                visibility: 0.9,
                baseline: None,
            };
            let options = HomFitOptions {
                n_pairs: cfg.crystal.bin_pairs,
                ..HomFitOptions::default()
            };
            let fit = fit_hom(&noisy, &guess, &options)?;
            info!("fitted spacing {:.4e} Hz", fit.bin_spacing_hz);
            out.text("fit.txt", &fit.to_text())?;
        }
    }
    out.text("report.txt", &r)
}

/// Linear interpolation of `values` at zero delay.
fn interpolate_zero(delays: &[f64], values: &[f64]) -> f64 {
    for k in 1..delays.len() {
        if delays[k - 1] <= 0.0 && delays[k] >= 0.0 {
            let span = delays[k] - delays[k - 1];
            if span == 0.0 {
                return values[k];
            }
            let a = -delays[k - 1] / span;
            return values[k - 1] * (1.0 - a) + values[k] * a;
        }
    }
    f64::NAN
}

fn tofs_sim(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let jsi = joint_amplitude(cfg, cfg.grid_points)?.intensity();
    let counts = simulate_counts(&jsi, &cfg.spectrometer, cfg.tofs.events, cfg.seed)?;
    info!("{} events recorded", counts.total());
    out.write("counts.txt", |w| counts.write_to(w))?;
    analyze_counts(cfg, &counts, out)
}

fn tofs_analyze(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let rel = cfg
        .tofs
        .input
        .as_deref()
        .ok_or_else(|| CliError::config("tofs-analyze needs tofs.input"))?;
    let path = cfg.input_path(rel);
    let file = fs::File::open(&path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let counts = CountMatrix::read_from(BufReader::new(file), cfg.spectrometer.center_wavelength)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    analyze_counts(cfg, &counts, out)
}

fn analyze_counts(cfg: &RunConfig, counts: &CountMatrix, out: &mut Out) -> Result<(), CliError> {
    let rec = reconstruct_jsi(counts)?;
    let amp = amplitude_from_jsi(&rec.jsi)?;
    let weights = schmidt_weights(&amp)?;
    let modes = mode_count(cfg);
    let mut report = EntanglementReport::from_weights(&weights, modes)?;
    if cfg.tofs.trials > 0 {
        let est = monte_carlo_uncertainty(
            counts.counts(),
            cfg.tofs.trials,
            cfg.seed,
            &[Metric::SchmidtNumber, Metric::FidelityToMaximal(modes)],
        )?;
        report = report.with_uncertainty(est[0], est[1]);
    }
    info!("{}", report.summary_line());

    let axis = rec.jsi.grid().idler;
    out.write("marginals.csv", |w| {
        writeln!(w, "time_s,detuning_hz,idler,signal")?;
        for k in 0..counts.nt() {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e}",
                counts.time_center(k),
                axis.value(k) / (2.0 * PI),
                rec.idler_marginal[k],
                rec.signal_marginal[k]
            )?;
        }
        Ok(())
    })?;
    let mut r = report.to_text();
    let _ = writeln!(r, "events: {}", counts.total());
    for (name, marginal) in [("idler", &rec.idler_marginal), ("signal", &rec.signal_marginal)] {
        let peaks = find_separated_peaks(marginal, cfg.tofs.peak_threshold, cfg.tofs.peak_separation_bins);
        let hz: Vec<String> = peaks
            .iter()
            .map(|&p| {
                let x = axis.start() + refine_peak(marginal, p) * axis.step();
                format!("{:.4e}", x / (2.0 * PI))
            })
            .collect();
        let _ = writeln!(r, "{name}_peaks: {}", peaks.len());
        let _ = writeln!(r, "{name}_peak_detunings_hz: {}", hz.join(","));
    }
    out.text("report.txt", &r)
}

fn per_bin_values(v: &PerBin, n: usize, seed: u64) -> Vec<f64> {
    match v {
        PerBin::All(x) => vec![*x; n],
        PerBin::Each(list) => list.clone(),
        PerBin::Random => {
            let mut rng = trial_rng(seed, PHASE_STREAM);
            (0..n).map(|_| rng.random_range(-PI..PI)).collect()
        }
    }
}

fn hyper_state(cfg: &RunConfig) -> Result<HyperState, CliError> {
    let t = &cfg.tomography;
    let labels = bin_labels(cfg.crystal.bin_pairs);
    let n = labels.len();
    let w = per_bin_values(&t.weights, n, cfg.seed);
    let phi = per_bin_values(&t.phases_rad, n, cfg.seed);
    let c = per_bin_values(&t.coherence, n, cfg.seed);
    let ret = per_bin_values(&t.retardance_rad, n, cfg.seed);
    let bins = (0..n)
        .map(|k| BinState {
            label: labels[k],
            weight: w[k],
            phase: phi[k],
            coherence: c[k],
            retardance: ret[k],
        })
        .collect();
    HyperState::new(bins).map_err(|e| CliError::config(format!("[tomography] {e}")))
}

fn gate(cfg: &RunConfig) -> GateSpec {
    GateSpec {
        bin_spacing_hz: cfg.crystal.bin_spacing_hz,
        width: cfg.tomography.gate_width_s,
    }
}

fn tomo_sim(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    if cfg.crystal.bin_spacing_hz == 0.0 {
        return Err(CliError::config("tomography needs crystal.bin_spacing_hz > 0"));
    }
    let hyper = hyper_state(cfg)?;
    let grid = cfg.grid(cfg.tomography.grid_points)?;
    let spectra = bin_spectra(&cfg.comb()?, &cfg.pump()?, &cfg.dispersion()?, &grid)?;
    let labels: Vec<i32> = spectra.iter().map(|s| s.0).collect();
    let jsis: Vec<_> = spectra.into_iter().map(|s| s.1).collect();
    let bundle = simulate_tomography(&hyper, &jsis, &cfg.spectrometer, cfg.tomography.events, cfg.seed)?;
    info!("{} events over 16 projections", bundle.total());
    let dir = out.dir.join("bundle");
    bundle.write_dir(&dir).map_err(|e| match e {
        qpmforge_core::Error::Io(io) => CliError::output(&dir, io),
        other => CliError::Numeric(other),
    })?;
    out.files.push("bundle/".into());

    let mut truth = String::from("bin,weight,phase_rad,purity,fidelity\n");
    for b in hyper.bins() {
        let st = b.state();
        let _ = writeln!(
            truth,
            "{},{:.6},{:.6},{:.6},{:.6}",
            b.label,
            b.weight,
            b.phase,
            purity(&st),
            fidelity_singlet(&st).0
        );
    }
    out.text("truth.csv", &truth)?;
    fit_bundle(cfg, &bundle, &labels, out)
}

fn tomo_fit(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let rel = cfg
        .tomography
        .input
        .as_deref()
        .ok_or_else(|| CliError::config("tomo-fit needs tomography.input"))?;
    let dir = cfg.input_path(rel);
    let bundle = TomographyBundle::read_dir(&dir, cfg.spectrometer.center_wavelength)
        .map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    fit_bundle(cfg, &bundle, &bin_labels(cfg.crystal.bin_pairs), out)
}

fn fit_bundle(cfg: &RunConfig, bundle: &TomographyBundle, labels: &[i32], out: &mut Out) -> Result<(), CliError> {
    let results = analyze_bundle(bundle, labels, &gate(cfg), cfg.tomography.trials, cfg.seed)?;
    out.text("results.csv", &format_results(&results))
}
