//! Bullwhip ratio, permutation importance and the noise robustness sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_demand, run_training_phase, run_validation_phase, ExperimentConfig};
use crate::features::{FeatureVector, WindowDataset, N_FEATURES};
use crate::forecast::Forecaster;
use crate::rng::{offsets, SimRng};
use crate::stats;
use crate::{Error, Result};

pub const IMPORTANCE_SHUFFLES: usize = 5;

/// `Var(orders) / Var(consumer demand)` (population variances).
pub fn bullwhip_ratio(orders: &[f64], demand: &[f64]) -> Result<f64> {
    if orders.is_empty() || demand.is_empty() {
        return Err(Error::domain("bullwhip ratio needs non-empty series"));
    }
    let vd = stats::pop_variance(demand);
    if vd == 0.0 {
        return Err(Error::Degenerate("consumer demand has zero variance".into()));
    }
    Ok(stats::pop_variance(orders) / vd)
}

fn dataset_mse(forecaster: &Forecaster, inputs: &[Vec<FeatureVector>], data: &WindowDataset) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, window) in inputs.iter().enumerate() {
        let pred = forecaster.predict(window, &data.input_demand[i])?;
        for (p, y) in pred.iter().zip(&data.targets[i]) {
            total += (p - y).powi(2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Increase in forecast MSE when one feature is shuffled across windows,
/// averaged over [`IMPORTANCE_SHUFFLES`] seeded permutations.
pub fn permutation_importance(forecaster: &Forecaster, data: &WindowDataset, seed: u64) -> Result<[f64; N_FEATURES]> {
    if data.is_empty() {
        return Err(Error::domain("importance needs at least one window"));
    }
    let baseline = dataset_mse(forecaster, &data.inputs, data)?;
    let mut rng = SimRng::channel(seed, offsets::IMPORTANCE);
    let mut scores = [0.0; N_FEATURES];
    for (f, score) in scores.iter_mut().enumerate() {
        let mut sum = 0.0;
        for _ in 0..IMPORTANCE_SHUFFLES {
            let mut perm: Vec<usize> = (0..data.len()).collect();
            rng.shuffle(&mut perm);
            let shuffled: Vec<Vec<FeatureVector>> = data
                .inputs
                .iter()
                .zip(&perm)
                .map(|(window, &src)| {
                    window
                        .iter()
                        .zip(&data.inputs[src])
                        .map(|(row, donor)| {
                            let mut row = *row;
                            row[f] = donor[f];
                            row
                        })
                        .collect()
                })
                .collect();
            sum += dataset_mse(forecaster, &shuffled, data)? - baseline;
        }
        *score = sum / IMPORTANCE_SHUFFLES as f64;
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub level: f64,
    pub seed: u64,
    /// Final validation cumulative profit of layers 1..=3.
    pub layer_profits: [f64; 3],
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub model: String,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn row(&self, level: f64, seed: u64) -> Option<&RobustnessRow> {
        self.rows.iter().find(|r| r.level == level && r.seed == seed)
    }

    /// Mean total profit per level, in level order of appearance.
    pub fn mean_by_level(&self) -> Vec<(f64, f64)> {
        let mut levels: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !levels.contains(&r.level) {
                levels.push(r.level);
            }
        }
        levels
            .into_iter()
            .map(|l| {
                let v: Vec<f64> = self.rows.iter().filter(|r| r.level == l).map(|r| r.total).collect();
                (l, stats::mean(&v))
            })
            .collect()
    }
}

/// Trains once per seed on clean data, then replays the validation period
/// at each noise level.
pub fn robustness_sweep(config: &ExperimentConfig, levels: &[f64], seeds: &[u64]) -> Result<RobustnessTable> {
    config.validate()?;
    if levels.is_empty() || levels.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::config("noise levels must be non-empty and >= 0"));
    }
    let per_seed: Vec<Vec<RobustnessRow>> = seeds
        .par_iter()
        .map(|&seed| {
            let clean = run_demand(config, seed, 0.0)?;
            let trained = run_training_phase(config, seed, &clean)?;
            levels
                .iter()
                .map(|&level| {
                    let demand = run_demand(config, seed, level)?;
                    let (result, _) = run_validation_phase(config, &trained, &demand)
                        .map_err(|e| e.context(format!("seed {seed}, noise {level}")))?;
                    let layer_profits = [
                        result.final_profit(1)?,
                        result.final_profit(2)?,
                        result.final_profit(3)?,
                    ];
                    Ok(RobustnessRow {
                        level,
                        seed,
                        layer_profits,
                        total: layer_profits.iter().sum(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(RobustnessTable {
        model: config.forecaster.kind.name().to_string(),
        rows: per_seed.into_iter().flatten().collect(),
    })
}
