//! Consumer demand: a constant level plus a long seasonal and a weekly
//! sinusoid plus Gaussian noise, floored at zero.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::rng::{offsets, SimRng};
use crate::stats;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandParams {
    pub base: f64,
    pub seasonal_amp: f64,
    pub seasonal_period: f64,
    pub weekly_amp: f64,
    pub weekly_period: f64,
    pub noise_sd: f64,
    pub horizon: usize,
}

impl Default for DemandParams {
    fn default() -> Self {
        Self {
            base: 50.0,
            seasonal_amp: 20.0,
            seasonal_period: 90.0,
            weekly_amp: 5.0,
            weekly_period: 7.0,
            noise_sd: 3.0,
            horizon: 1095,
        }
    }
}

impl DemandParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.base,
            self.seasonal_amp,
            self.seasonal_period,
            self.weekly_amp,
            self.weekly_period,
            self.noise_sd,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("demand parameters must be finite"));
        }
        if self.seasonal_amp < 0.0 || self.weekly_amp < 0.0 || self.noise_sd < 0.0 {
            return Err(Error::config("demand amplitudes and noise_sd must be >= 0"));
        }
        if self.seasonal_period <= 0.0 || self.weekly_period <= 0.0 {
            return Err(Error::config("demand periods must be > 0"));
        }
        if self.horizon == 0 {
            return Err(Error::config("demand horizon must be >= 1"));
        }
        Ok(())
    }

    /// Noise-free demand level on day `t`.
    pub fn deterministic(&self, t: usize) -> f64 {
        let t = t as f64;
        self.base
            + self.seasonal_amp * (2.0 * PI * t / self.seasonal_period).sin()
            + self.weekly_amp * (2.0 * PI * t / self.weekly_period).sin()
    }
}

/// Non-negative daily demand, indexed by day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemandSeries(pub Vec<f64>);

impl DemandSeries {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "day,demand")?;
        for (t, d) in self.0.iter().enumerate() {
            writeln!(out, "{t},{d}")?;
        }
        Ok(())
    }
}

/// Generates the consumer demand series for `seed`.
pub fn generate_demand(params: &DemandParams, seed: u64) -> Result<DemandSeries> {
    params.validate()?;
    let mut rng = SimRng::channel(seed, offsets::DEMAND);
    let values = (0..params.horizon)
        .map(|t| {
            let noise = if params.noise_sd > 0.0 {
                rng.normal(0.0, params.noise_sd)
            } else {
                0.0
            };
            (params.deterministic(t) + noise).max(0.0)
        })
        .collect();
    Ok(DemandSeries(values))
}

/// Adds zero-mean Gaussian noise scaled by `noise_level` times the series'
/// population standard deviation, clamped to `[0, 2 * max(series)]`.
pub fn inject_noise(series: &DemandSeries, noise_level: f64, seed: u64) -> Result<DemandSeries> {
    if series.is_empty() {
        return Err(Error::domain("cannot inject noise into an empty series"));
    }
    if !(noise_level >= 0.0) || !noise_level.is_finite() {
        return Err(Error::domain(format!("noise level must be >= 0, got {noise_level}")));
    }
    let sd = noise_level * stats::pop_sd(series.values());
    if sd == 0.0 {
        return Ok(series.clone());
    }
    let ceiling = 2.0 * series.values().iter().cloned().fold(f64::MIN, f64::max);
    let mut rng = SimRng::channel(seed, offsets::NOISE);
    let values = series
        .values()
        .iter()
        .map(|&v| (v + rng.normal(0.0, sd)).clamp(0.0, ceiling.max(0.0)))
        .collect();
    Ok(DemandSeries(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> DemandParams {
        DemandParams {
            noise_sd: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_values() {
        let s = generate_demand(&noiseless(), 1).unwrap();
        assert_eq!(s.values()[0], 50.0);
        // 315 is a whole number of both periods.
        assert!((s.values()[315] - 50.0).abs() < 1e-9);
        // Scalar calculator value of 50 + 20 sin(2π·10/90) + 5 sin(2π·10/7).
        assert!((s.values()[10] - 65.025_170_889_318_57).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_params() {
        let p = DemandParams {
            seasonal_period: 0.0,
            ..Default::default()
        };
        assert!(matches!(generate_demand(&p, 1), Err(Error::Config(_))));
        let p = DemandParams {
            horizon: 0,
            ..Default::default()
        };
        assert!(generate_demand(&p, 1).is_err());
        let p = DemandParams {
            weekly_amp: -1.0,
            ..Default::default()
        };
        assert!(generate_demand(&p, 1).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let p = DemandParams::default();
        let a = generate_demand(&p, 42).unwrap();
        let b = generate_demand(&p, 42).unwrap();
        let c = generate_demand(&p, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 1095);
        assert!(a.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn floors_at_zero() {
        let p = DemandParams {
            base: 0.0,
            ..Default::default()
        };
        let s = generate_demand(&p, 3).unwrap();
        assert!(s.values().iter().all(|&v| v >= 0.0));
        assert!(s.values().iter().any(|&v| v == 0.0));
    }

    #[test]
    fn noise_identity_cases() {
        let s = generate_demand(&DemandParams::default(), 42).unwrap();
        assert_eq!(inject_noise(&s, 0.0, 9).unwrap(), s);
        let flat = DemandSeries(vec![30.0; 20]);
        assert_eq!(inject_noise(&flat, 1.0, 9).unwrap(), flat);
    }

    #[test]
    fn noise_respects_clamp() {
        let s = DemandSeries(vec![40.0, 60.0]);
        for seed in 0..200 {
            let n = inject_noise(&s, 1.0, seed).unwrap();
            assert!(n.values().iter().all(|&v| (0.0..=120.0).contains(&v)));
        }
        let big = inject_noise(&s, 50.0, 1).unwrap();
        assert!(big.values().iter().all(|&v| (0.0..=120.0).contains(&v)));
    }

    #[test]
    fn noise_errors() {
        assert!(inject_noise(&DemandSeries(vec![]), 0.1, 1).is_err());
        assert!(inject_noise(&DemandSeries(vec![1.0]), -0.1, 1).is_err());
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        DemandSeries(vec![1.5, 2.0]).write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "day,demand\n0,1.5\n1,2\n");
    }
}
