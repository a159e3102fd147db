use std::f64::consts::PI;

use chrono::{NaiveDateTime, TimeDelta};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::frame::{TimeSeriesFrame, DATE_FORMAT};
use crate::error::{Error, Result};
use crate::numeric::NdArray;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineComponent {
    /// In samples.
    pub period: f64,
    pub amp: f64,
    /// Radians.
    #[serde(default)]
    pub phase: f64,
}

/// Synthetic series description, read from TOML.
///
/// Feature `k` at step `t` is
/// `sum_c amp_c * sin(2π t / period_c + phase_c + k * dim_phase_step) + trend * t + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub components: Vec<SineComponent>,
    #[serde(default)]
    pub trend: f64,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dim_phase_step: f64,
    #[serde(default = "default_start")]
    pub start: String,
    #[serde(default = "default_interval")]
    pub interval_minutes: u32,
}

fn default_start() -> String {
    "2016-07-01 00:00:00".to_string()
}

fn default_interval() -> u32 {
    60
}

impl SynthSpec {
    /// Noise-free multi-sine with daily and half-daily cycles.
    pub fn multi_sine(n: usize, d: usize, noise_std: f64, seed: u64) -> Self {
        SynthSpec {
            n,
            d,
            components: vec![
                SineComponent {
                    period: 24.0,
                    amp: 1.0,
                    phase: 0.0,
                },
                SineComponent {
                    period: 12.0,
                    amp: 0.5,
                    phase: 0.3,
                },
            ],
            trend: 0.0,
            noise_std,
            seed,
            dim_phase_step: 0.7,
            start: default_start(),
            interval_minutes: 60,
        }
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<TimeSeriesFrame> {
    if spec.n == 0 || spec.d == 0 {
        return Err(Error::config("synthetic series needs n >= 1 and d >= 1"));
    }
    if spec.noise_std < 0.0 || !spec.noise_std.is_finite() {
        return Err(Error::config(format!(
            "noise_std must be non-negative, got {}",
            spec.noise_std
        )));
    }
    if spec
        .components
        .iter()
        .any(|c| c.period.is_nan() || c.period <= 0.0 || !c.amp.is_finite())
    {
        return Err(Error::config(
            "sine components need a positive period and finite amplitude",
        ));
    }
    if spec.interval_minutes == 0 {
        return Err(Error::config("interval_minutes must be positive"));
    }
    let start = NaiveDateTime::parse_from_str(&spec.start, DATE_FORMAT)
        .map_err(|e| Error::config(format!("bad start timestamp {:?}: {e}", spec.start)))?;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut values = Vec::with_capacity(spec.n * spec.d);
    for t in 0..spec.n {
        for k in 0..spec.d {
            let mut v = spec.trend * t as f64;
            for c in &spec.components {
                v += c.amp * (2.0 * PI * t as f64 / c.period + c.phase + k as f64 * spec.dim_phase_step).sin();
            }
            if spec.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            values.push(v);
        }
    }
    let step = TimeDelta::minutes(spec.interval_minutes as i64);
    let timestamps = (0..spec.n).map(|t| start + step * t as i32).collect();
    let names = (0..spec.d).map(|k| format!("s{k}")).collect();
    TimeSeriesFrame::new(timestamps, NdArray::new(vec![spec.n, spec.d], values)?, names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Frequency;

    fn single(amp: f64, period: f64) -> SynthSpec {
        SynthSpec {
            n: 200,
            d: 3,
            components: vec![SineComponent {
                period,
                amp,
                phase: 0.4,
            }],
            trend: 0.0,
            noise_std: 0.0,
            seed: 1,
            dim_phase_step: 0.5,
            start: default_start(),
            interval_minutes: 60,
        }
    }

    #[test]
    fn bounded_single_sine() {
        let f = synth_generate(&single(1.0, 17.0)).unwrap();
        assert!(f.values().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(f.freq(), Frequency::Hourly);
    }

    #[test]
    fn period_24_repeats_daily() {
        let f = synth_generate(&single(1.0, 24.0)).unwrap();
        for r in 0..(200 - 24) {
            for c in 0..3 {
                assert!((f.values().at2(r, c) - f.values().at2(r + 24, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let spec = SynthSpec::multi_sine(100, 2, 0.3, 42);
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&SynthSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs() {
        assert!(synth_generate(&SynthSpec {
            n: 0,
            ..single(1.0, 24.0)
        })
        .is_err());
        assert!(synth_generate(&single(1.0, 0.0)).is_err());
        assert!(synth_generate(&SynthSpec {
            noise_std: -1.0,
            ..single(1.0, 24.0)
        })
        .is_err());
    }

    #[test]
    fn parses_toml() {
        let spec: SynthSpec =
            toml::from_str("n = 10\nd = 2\nnoise_std = 0.1\nseed = 3\n[[components]]\nperiod = 24\namp = 1.0\n")
                .unwrap();
        assert_eq!(spec.components.len(), 1);
        assert!(toml::from_str::<SynthSpec>("n = 1\nd = 1\ncomponents = []\ntypo = 1\n").is_err());
    }
}
