//! Seeded synthetic series for experiments and tests.

use std::f64::consts::PI;

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::series::{SeriesError, Stamp, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Daily-period sine with noise whose spread follows |sin|.
    SineHetero,
    /// Zero-mean first-order autoregression.
    Ar1,
    /// Sine base plus right-skewed log-normal noise with median zero.
    LognormalSkew,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// AR(1) coefficient.
    #[serde(default = "default_phi")]
    pub phi: f64,
    /// AR(1) innovation standard deviation.
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    /// Log-scale standard deviation of the skewed noise.
    #[serde(default = "default_log_sigma")]
    pub log_sigma: f64,
}

fn default_phi() -> f64 {
    0.8
}
fn default_noise_sd() -> f64 {
    1.0
}
fn default_log_sigma() -> f64 {
    0.5
}

const PERIOD: f64 = 24.0;

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            seed,
            phi: default_phi(),
            noise_sd: default_noise_sd(),
            log_sigma: default_log_sigma(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n < 2 {
            return Err(format!("synthetic length {} is too short", self.n));
        }
        if !(self.phi.abs() < 1.0) {
            return Err(format!("phi = {} must satisfy |phi| < 1", self.phi));
        }
        if !(self.noise_sd > 0.0) || !(self.log_sigma > 0.0) {
            return Err("noise scales must be positive".into());
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<TimeSeries, SeriesError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let wave = |i: usize| (2.0 * PI * i as f64 / PERIOD).sin();
        let values: Vec<f64> = match self.kind {
            SyntheticKind::SineHetero => (0..self.n)
                .map(|i| {
                    let s = wave(i);
                    5.0 + 2.0 * s + (0.3 + 0.2 * s.abs()) * std.sample(&mut rng)
                })
                .collect(),
            SyntheticKind::Ar1 => {
                let stationary = self.noise_sd / (1.0 - self.phi * self.phi).sqrt();
                let mut x = stationary * std.sample(&mut rng);
                (0..self.n)
                    .map(|_| {
                        x = self.phi * x + self.noise_sd * std.sample(&mut rng);
                        x
                    })
                    .collect()
            }
            SyntheticKind::LognormalSkew => (0..self.n)
                .map(|i| 5.0 + 2.0 * wave(i) + (self.log_sigma * std.sample(&mut rng)).exp() - 1.0)
                .collect(),
        };
        let start = NaiveDate::from_ymd_opt(2020, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .expect("valid start");
        let stamps = (0..self.n)
            .map(|i| Stamp::At(start + Duration::hours(i as i64)))
            .collect();
        TimeSeries::new(format!("{:?}", self.kind).to_lowercase(), stamps, values)
    }
}
