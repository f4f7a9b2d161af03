//! Seeded synthetic wind series: a daily sinusoid on top of AR(1) noise.

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::series::{decompose, WindSample, WindSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub start: DateTime<Utc>,
    pub hours: usize,
    pub mean: f64,
    /// Amplitude of the 24 h sinusoid.
    pub amplitude: f64,
    pub ar_coeff: f64,
    pub noise_sd: f64,
    /// Probability that a slot is missing.
    pub gap_probability: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            start: Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap(),
            hours: 24 * 365,
            mean: 5.0,
            amplitude: 2.0,
            ar_coeff: 0.8,
            noise_sd: 0.5,
            gap_probability: 0.0,
            seed: 0,
        }
    }
}

/// `s(t) = mean + amplitude sin(2 pi t / 24) + e(t)`, `e(t) = ar_coeff e(t-1) + N(0, noise_sd^2)`,
/// clamped at zero. The direction wanders slowly with its own daily swing so
/// the component designs have something to work with.
pub fn generate(config: &SyntheticConfig) -> WindSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let innovation = Normal::new(0.0, config.noise_sd).expect("finite noise sd");
    let veer = Normal::new(0.0, 4.0).expect("finite sd");
    // start the noise from its stationary law
    let stationary_sd = config.noise_sd / (1.0 - config.ar_coeff * config.ar_coeff).max(1e-12).sqrt();
    let mut e = Normal::new(0.0, stationary_sd).expect("finite sd").sample(&mut rng);
    let mut heading = 0.0f64;
    let slots = (0..config.hours)
        .map(|t| {
            if t > 0 {
                e = config.ar_coeff * e + innovation.sample(&mut rng);
            }
            heading = 0.95 * heading + veer.sample(&mut rng);
            let phase = std::f64::consts::TAU * t as f64 / 24.0;
            let s = (config.mean + config.amplitude * phase.sin() + e).max(0.0);
            let direction = (200.0 + 30.0 * (phase + 1.0).sin() + heading).rem_euclid(360.0);
            let missing = config.gap_probability > 0.0 && rng.gen_bool(config.gap_probability);
            if missing {
                return None;
            }
            let (z, m) = decompose(s, direction).expect("valid speed and direction");
            Some(WindSample::from_components(z, m))
        })
        .collect::<Vec<_>>();
    WindSeries::new(config.start, slots).expect("generated series has a present slot")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_consistent() {
        let c = SyntheticConfig { hours: 500, ..SyntheticConfig::default() };
        let a = generate(&c);
        assert_eq!(a, generate(&c));
        assert_eq!(a.len(), 500);
        for s in a.slots().iter().flatten() {
            assert!(s.s >= 0.0);
            s.validate().unwrap();
        }
        let other = generate(&SyntheticConfig { seed: 1, ..c });
        assert_ne!(a, other);
    }

    #[test]
    fn mean_and_gaps() {
        let c = SyntheticConfig { hours: 24 * 200, gap_probability: 0.1, ..SyntheticConfig::default() };
        let s = generate(&c);
        let frac = 1.0 - s.valid_count() as f64 / s.len() as f64;
        assert!((frac - 0.1).abs() < 0.02);
        let speeds: Vec<f64> = s.speeds().into_iter().flatten().collect();
        let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
        assert!((mean - 5.0).abs() < 0.2);
    }
}
