//! Deterministic random streams and counting-noise helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};

/// Independent stream `stream` derived from `seed`; used per Monte-Carlo trial
/// so results do not depend on thread scheduling.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

pub fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).map(|d| d.sample(rng)).unwrap_or(0)
}

/// Replaces each count `c` by a Poisson draw of mean `c`.
pub fn poisson_resample<R: Rng + ?Sized>(counts: &[u64], rng: &mut R) -> Vec<u64> {
    counts.iter().map(|&c| poisson(c as f64, rng)).collect()
}

/// Distributes exactly `total` events over cells with probabilities `probs`
/// (need not sum to 1) by sequential conditional binomials.
pub fn multinomial<R: Rng + ?Sized>(total: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let last = match probs.iter().rposition(|&p| p > 0.0) {
        Some(k) => k,
        None => return out,
    };
    let mut remaining_events = total;
    let mut remaining_prob: f64 = probs.iter().filter(|&&p| p > 0.0).sum();
    for (k, &p) in probs.iter().enumerate() {
        if remaining_events == 0 {
            break;
        }
        if p <= 0.0 {
            continue;
        }
        if k == last {
            out[k] = remaining_events;
            break;
        }
        let draw = binomial(remaining_events, p / remaining_prob, rng);
        out[k] = draw;
        remaining_events -= draw;
        remaining_prob = (remaining_prob - p).max(0.0);
    }
    out
}

/// Sample mean and standard deviation (n − 1 denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                trials: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            trials: n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multinomial_conserves_total() {
        let mut rng = trial_rng(7, 0);
        let probs = [0.0, 0.2, 0.0, 0.5, 0.3, 0.0];
        for total in [0u64, 1, 17, 1_000_000] {
            let c = multinomial(total, &probs, &mut rng);
            assert_eq!(c.iter().sum::<u64>(), total);
            assert_eq!(c[0] + c[2] + c[5], 0);
        }
    }

    #[test]
    fn multinomial_matches_probabilities() {
        let mut rng = trial_rng(1, 3);
        let c = multinomial(10_000_000, &[1.0, 3.0], &mut rng);
        let f = c[0] as f64 / 1e7;
        assert!((f - 0.25).abs() < 5.0 * (0.25f64 * 0.75 / 1e7).sqrt());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = trial_rng(5, 1).random();
        let b: u64 = trial_rng(5, 1).random();
        let c: u64 = trial_rng(5, 2).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_std_uses_bessel_correction() {
        let e = Estimate::from_samples(&[1.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.std - 2f64.sqrt()).abs() < 1e-15);
    }
}
