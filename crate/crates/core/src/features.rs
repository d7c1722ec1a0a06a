//! Per-layer feature vectors, min-max scaling and sliding-window datasets.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::stats;
use crate::{Error, Result};

pub const N_FEATURES: usize = 10;
pub const WINDOW: usize = 10;
pub const HORIZON: usize = 7;
/// Trailing days used by the two volatility features.
pub const VOLATILITY_DAYS: usize = 5;

pub type FeatureVector = [f64; N_FEATURES];

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "demand",
    "order_lag1",
    "order_lag2",
    "inventory_lag1",
    "inventory_lag2",
    "sales_lag1",
    "order_sd_5",
    "demand_sd_5",
    "season",
    "time_norm",
];

/// Realised per-day series of one layer. On day `t` demand is known through
/// `t`; orders, end-of-day inventory and sales through `t - 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerHistory {
    pub demand: Vec<f64>,
    pub orders: Vec<f64>,
    pub inventory: Vec<f64>,
    pub sales: Vec<f64>,
}

impl LayerHistory {
    pub fn push(&mut self, demand: f64, order: f64, inventory_end: f64, sales: f64) {
        self.demand.push(demand);
        self.orders.push(order);
        self.inventory.push(inventory_end);
        self.sales.push(sales);
    }

    pub fn len(&self) -> usize {
        self.demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demand.is_empty()
    }
}

/// Calendar constants the time features need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeBasis {
    pub season_period: f64,
    pub horizon: usize,
}

impl Default for TimeBasis {
    fn default() -> Self {
        Self {
            season_period: 90.0,
            horizon: 1095,
        }
    }
}

/// Value `lag` days before `t`; days before 0 repeat the first value.
fn lagged(series: &[f64], t: usize, lag: usize, name: &str) -> Result<f64> {
    let idx = t.saturating_sub(lag);
    series
        .get(idx)
        .copied()
        .ok_or_else(|| Error::domain(format!("{name} history does not cover day {idx}")))
}

/// Population sd over days `t-5 ..= t-1`, padded at the start.
fn trailing_sd(series: &[f64], t: usize, name: &str) -> Result<f64> {
    let window = (1..=VOLATILITY_DAYS)
        .map(|lag| lagged(series, t, lag, name))
        .collect::<Result<Vec<_>>>()?;
    Ok(stats::pop_sd(&window))
}

pub fn build_feature_vector(history: &LayerHistory, t: usize, time: TimeBasis) -> Result<FeatureVector> {
    let demand_t = history
        .demand
        .get(t)
        .copied()
        .ok_or_else(|| Error::domain(format!("demand history does not cover day {t}")))?;
    Ok([
        demand_t,
        lagged(&history.orders, t, 1, "order")?,
        lagged(&history.orders, t, 2, "order")?,
        lagged(&history.inventory, t, 1, "inventory")?,
        lagged(&history.inventory, t, 2, "inventory")?,
        lagged(&history.sales, t, 1, "sales")?,
        trailing_sd(&history.orders, t, "order")?,
        trailing_sd(&history.demand, t, "demand")?,
        (2.0 * PI * t as f64 / time.season_period).sin(),
        t as f64 / time.horizon as f64,
    ])
}

/// Per-feature min-max scaler, fit once on training rows and then frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[FeatureVector]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::domain("cannot fit a scaler on an empty matrix"));
        }
        let mut min = vec![f64::INFINITY; N_FEATURES];
        let mut max = vec![f64::NEG_INFINITY; N_FEATURES];
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("non-finite feature {}", FEATURE_NAMES[j])));
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    /// `(x - min) / (max - min)`, or 0 where the feature was constant.
    /// Values outside the training range are not clipped.
    pub fn apply(&self, x: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; N_FEATURES];
        for j in 0..N_FEATURES {
            let span = self.max[j] - self.min[j];
            out[j] = if span > 0.0 { (x[j] - self.min[j]) / span } else { 0.0 };
        }
        out
    }

    /// Inverse of `apply`; constant features map back to their value.
    pub fn invert(&self, x: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; N_FEATURES];
        for j in 0..N_FEATURES {
            out[j] = self.min[j] + x[j] * (self.max[j] - self.min[j]);
        }
        out
    }
}

/// Supervised windows: 10 consecutive feature vectors predicting the next
/// 7 days of demand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowDataset {
    pub inputs: Vec<Vec<FeatureVector>>,
    pub targets: Vec<Vec<f64>>,
    /// Raw demand over each input window, for models that read demand directly.
    pub input_demand: Vec<Vec<f64>>,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Slides a `window`-day input over `features`, pairing it with the
/// following `horizon` days of `demand`.
pub fn make_windows(
    features: &[FeatureVector],
    demand: &[f64],
    window: usize,
    horizon: usize,
) -> Result<WindowDataset> {
    if features.len() != demand.len() {
        return Err(Error::domain(format!(
            "features ({}) and demand ({}) differ in length",
            features.len(),
            demand.len()
        )));
    }
    let len = features.len();
    if window == 0 || horizon == 0 || len < window + horizon {
        return Err(Error::domain(format!(
            "sequence of {len} days is too short for window {window} + horizon {horizon}"
        )));
    }
    let count = len - window - horizon + 1;
    let mut ds = WindowDataset::default();
    for s in 0..count {
        ds.inputs.push(features[s..s + window].to_vec());
        ds.targets.push(demand[s + window..s + window + horizon].to_vec());
        ds.input_demand.push(demand[s..s + window].to_vec());
    }
    Ok(ds)
}

pub fn write_feature_csv<W: Write>(mut out: W, rows: &[FeatureVector]) -> Result<()> {
    writeln!(out, "day,{}", FEATURE_NAMES.join(","))?;
    for (t, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{t},{}", cells.join(","))?;
    }
    Ok(())
}
