//! Experiment orchestration.
//!
//! A run has two phases. During training the chain runs with pass-through
//! ordering (every layer orders exactly what it was asked for) to produce a
//! history; per-layer scalers and forecasters are fit on it. During
//! validation each layer forecasts, smooths, enumerates candidate orders and
//! places the most profitable one, day by day.

pub mod tune;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{Chain, ChainConfig, DayRecord, LayerState};
use crate::demand::{self, DemandParams, DemandSeries};
use crate::features::{self, FeatureVector, LayerHistory, Scaler, TimeBasis, HORIZON, WINDOW};
use crate::forecast::{fit_forecaster, Forecaster, ForecasterKind, ForecasterSpec, Smoother, SMOOTHING_ALPHA};
use crate::policy::{self, PolicyInput, PolicyParams};
use crate::rng::{derive_seed, offsets};
use crate::{Error, Result};

pub use tune::{tune, SamplerKind, SearchSpace, TuneOutcome, TuningConfig};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train_days: usize,
    pub seeds: Vec<u64>,
    /// Relative sd of noise added to validation demand (0 disables).
    pub noise_level: f64,
    pub demand: DemandParams,
    pub chain: ChainConfig,
    pub policy: PolicyParams,
    pub forecaster: ForecasterSpec,
    pub tuning: TuningConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_days: 219,
            seeds: (42..=51).collect(),
            noise_level: 0.0,
            demand: DemandParams::default(),
            chain: ChainConfig::default(),
            policy: PolicyParams::default(),
            forecaster: ForecasterSpec::default(),
            tuning: TuningConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn horizon(&self) -> usize {
        self.demand.horizon
    }

    pub fn validation_days(&self) -> usize {
        self.horizon().saturating_sub(self.train_days)
    }

    pub fn time_basis(&self) -> TimeBasis {
        TimeBasis {
            season_period: self.demand.seasonal_period,
            horizon: self.horizon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.demand.validate()?;
        self.chain.validate()?;
        self.policy.validate()?;
        self.forecaster.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.train_days >= self.horizon() {
            return Err(Error::config(format!(
                "train_days ({}) must be smaller than the horizon ({})",
                self.train_days,
                self.horizon()
            )));
        }
        if self.train_days < WINDOW + HORIZON {
            return Err(Error::config(format!(
                "train_days must be at least {} to form one window",
                WINDOW + HORIZON
            )));
        }
        if self.chain.n_layers != 4 {
            return Err(Error::config("experiments use the four-layer chain"));
        }
        if self.policy.batch_size != self.chain.batch_size {
            return Err(Error::config("policy.batch_size must equal chain.batch_size"));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::config("noise_level must be >= 0"));
        }
        Ok(())
    }

    pub fn with_model(mut self, kind: ForecasterKind) -> Self {
        self.forecaster.kind = kind;
        self
    }
}

/// Fitted scaler and forecaster of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerModel {
    pub layer: usize,
    pub scaler: Scaler,
    pub forecaster: Forecaster,
}

/// Everything the validation phase needs from training.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub seed: u64,
    pub chain: Chain,
    /// Indexed by layer; entry 0 is unused.
    pub histories: Vec<LayerHistory>,
    /// Scaled feature vectors per layer for every simulated day.
    pub scaled_features: Vec<Vec<FeatureVector>>,
    pub models: Vec<LayerModel>,
    pub records: Vec<DayRecord>,
    pub window_count: usize,
}

fn push_record(histories: &mut [LayerHistory], record: &DayRecord) {
    for (k, day) in record.layers.iter().enumerate() {
        histories[k + 1].push(day.demand, day.order, day.inventory_end, day.sales);
    }
}

/// Simulates the training days with pass-through ordering and fits one
/// scaler and forecaster per stocking layer.
pub fn run_training_phase(config: &ExperimentConfig, seed: u64, demand: &DemandSeries) -> Result<TrainingOutcome> {
    config.validate()?;
    if demand.len() < config.train_days {
        return Err(Error::domain("demand series shorter than the training phase"));
    }
    let mut chain = Chain::new(config.chain.clone())?;
    let n = config.chain.n_layers;
    let mut histories = vec![LayerHistory::default(); n];
    let mut records = Vec::with_capacity(config.train_days);
    for t in 0..config.train_days {
        let rec = chain.step_with(demand.values()[t], |ctx| Ok(ctx.demand))?;
        push_record(&mut histories, &rec);
        records.push(rec);
    }

    let time = config.time_basis();
    let mut scaled_features = vec![Vec::new(); n];
    let mut models = Vec::new();
    let mut window_count = 0;
    for layer in 1..n {
        let ctx = |e: Error| e.context(format!("training layer {layer}"));
        let raw: Vec<FeatureVector> = (0..config.train_days)
            .map(|t| features::build_feature_vector(&histories[layer], t, time))
            .collect::<Result<_>>()
            .map_err(ctx)?;
        let scaler = Scaler::fit(&raw).map_err(ctx)?;
        let scaled: Vec<FeatureVector> = raw.iter().map(|x| scaler.apply(x)).collect();
        let dataset =
            features::make_windows(&scaled, &histories[layer].demand, WINDOW, HORIZON).map_err(ctx)?;
        window_count = dataset.len();
        let model_seed = derive_seed(seed, offsets::MODEL + layer as u64 * 10);
        let forecaster = fit_forecaster(&config.forecaster, &dataset, model_seed).map_err(ctx)?;
        scaled_features[layer] = scaled;
        models.push(LayerModel {
            layer,
            scaler,
            forecaster,
        });
    }

    Ok(TrainingOutcome {
        seed,
        chain,
        histories,
        scaled_features,
        models,
        records,
        window_count,
    })
}

/// Per-layer daily series of a validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSeries {
    pub layer: usize,
    /// Series name -> one value per validation day.
    pub series: BTreeMap<String, Vec<f64>>,
    /// Raw 7-day forecast issued on each validation day.
    pub forecast_raw: Vec<Vec<f64>>,
}

impl LayerSeries {
    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.series
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Schema(format!("layer {} has no '{name}' series", self.layer)))
    }
}

pub const SERIES_NAMES: [&str; 15] = [
    "demand",
    "orders",
    "arrivals",
    "sales",
    "inventory_start",
    "inventory",
    "revenue",
    "purchase_cost",
    "holding_cost",
    "shortage_cost",
    "profit",
    "cumulative_profit",
    "forecast",
    "forecast_smoothed",
    "mae",
];

/// Result of one seed, persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub model: ForecasterKind,
    pub seed: u64,
    pub train_days: usize,
    pub validation_days: usize,
    pub consumer_demand: Vec<f64>,
    pub layers: Vec<LayerSeries>,
    pub config: ExperimentConfig,
}

impl RunResult {
    pub fn layer(&self, layer: usize) -> Result<&LayerSeries> {
        self.layers
            .iter()
            .find(|l| l.layer == layer)
            .ok_or_else(|| Error::Schema(format!("run has no layer {layer}")))
    }

    /// Final validation-period cumulative profit of `layer`.
    pub fn final_profit(&self, layer: usize) -> Result<f64> {
        Ok(self.layer(layer)?.get("cumulative_profit")?.last().copied().unwrap_or(0.0))
    }

    pub fn total_profit(&self) -> Result<f64> {
        self.layers.iter().map(|l| self.final_profit(l.layer)).sum()
    }

    pub fn to_canonical_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

/// Day records of the whole horizon plus the final chain, for ledger checks.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<DayRecord>,
    pub final_states: Vec<LayerState>,
}

/// Consumer demand for a run: clean over training, noised over validation.
pub fn run_demand(config: &ExperimentConfig, seed: u64, noise_level: f64) -> Result<DemandSeries> {
    let clean = demand::generate_demand(&config.demand, seed)?;
    if noise_level == 0.0 {
        return Ok(clean);
    }
    let split = config.train_days.min(clean.len());
    let validation = DemandSeries(clean.values()[split..].to_vec());
    let noisy = demand::inject_noise(&validation, noise_level, seed)?;
    let mut values = clean.values()[..split].to_vec();
    values.extend_from_slice(noisy.values());
    Ok(DemandSeries(values))
}

struct LayerRun {
    smoother: Smoother,
    forecast: Vec<f64>,
    smoothed: Vec<f64>,
    raw: Vec<Vec<f64>>,
    mae: Vec<f64>,
    last_day_ahead: Option<f64>,
}

/// Runs the validation days on a copy of the trained state.
pub fn run_validation_phase(
    config: &ExperimentConfig,
    trained: &TrainingOutcome,
    demand: &DemandSeries,
) -> Result<(RunResult, RunTrace)> {
    let horizon = config.horizon();
    if demand.len() != horizon {
        return Err(Error::domain("demand series does not match the horizon"));
    }
    let n = config.chain.n_layers;
    let time = config.time_basis();
    let mut chain = trained.chain.clone();
    let mut histories = trained.histories.clone();
    let mut scaled = trained.scaled_features.clone();
    let mut layers: Vec<LayerRun> = (0..n)
        .map(|_| LayerRun {
            smoother: Smoother::new(SMOOTHING_ALPHA),
            forecast: Vec::new(),
            smoothed: Vec::new(),
            raw: Vec::new(),
            mae: Vec::new(),
            last_day_ahead: None,
        })
        .collect();
    let tail_len = config.forecaster.sma_window.max(config.policy.demand_lookback).max(WINDOW);
    let mut records = trained.records.clone();

    for t in config.train_days..horizon {
        let rec = chain.step_with(demand.values()[t], |ctx| {
            let layer = ctx.layer;
            let model = &trained.models[layer - 1];
            let hist = &mut histories[layer];
            hist.demand.push(ctx.demand);
            let fv = features::build_feature_vector(hist, t, time)?;
            scaled[layer].push(model.scaler.apply(&fv));
            let window = &scaled[layer][scaled[layer].len() - WINDOW..];
            let tail = &hist.demand[hist.demand.len().saturating_sub(tail_len)..];
            let raw = model.forecaster.predict(window, tail)?;

            let run = &mut layers[layer];
            let err = run.last_day_ahead.map_or(0.0, |f| (f - ctx.demand).abs());
            run.mae.push(err);
            run.last_day_ahead = Some(raw[0]);
            let fc = run.smoother.push(raw)?;
            let decision = policy::decide(
                PolicyInput {
                    t,
                    layer,
                    state: ctx.state,
                    forecast_point: fc.smoothed_point,
                    forecasts: &fc.raw,
                    recent_demand: tail,
                },
                &config.policy,
                &config.chain,
            )?;
            run.forecast.push(fc.raw[0]);
            run.smoothed.push(fc.smoothed_point);
            run.raw.push(fc.raw);
            // Demand was pushed above; the remaining series catch up after the step.
            hist.demand.pop();
            Ok(decision.chosen)
        })?;
        push_record(&mut histories, &rec);
        records.push(rec);
    }

    let validation = &records[config.train_days..];
    let mut out_layers = Vec::with_capacity(n - 1);
    for layer in 1..n {
        let pick = |f: fn(&crate::chain::LayerDay) -> f64| -> Vec<f64> {
            validation.iter().map(|r| f(r.layer(layer))).collect()
        };
        let profit = pick(|d| d.profit);
        let mut running = 0.0;
        let cumulative: Vec<f64> = profit
            .iter()
            .map(|p| {
                running += p;
                running
            })
            .collect();
        let run = &mut layers[layer];
        let mut series = BTreeMap::new();
        series.insert("demand".to_string(), pick(|d| d.demand));
        series.insert("orders".to_string(), pick(|d| d.order));
        series.insert("arrivals".to_string(), pick(|d| d.arrivals));
        series.insert("sales".to_string(), pick(|d| d.sales));
        series.insert("inventory_start".to_string(), pick(|d| d.inventory_start));
        series.insert("inventory".to_string(), pick(|d| d.inventory_end));
        series.insert("revenue".to_string(), pick(|d| d.revenue));
        series.insert("purchase_cost".to_string(), pick(|d| d.purchase_cost));
        series.insert("holding_cost".to_string(), pick(|d| d.holding_cost));
        series.insert("shortage_cost".to_string(), pick(|d| d.shortage_cost));
        series.insert("profit".to_string(), profit);
        series.insert("cumulative_profit".to_string(), cumulative);
        series.insert("forecast".to_string(), std::mem::take(&mut run.forecast));
        series.insert("forecast_smoothed".to_string(), std::mem::take(&mut run.smoothed));
        series.insert("mae".to_string(), std::mem::take(&mut run.mae));
        out_layers.push(LayerSeries {
            layer,
            series,
            forecast_raw: std::mem::take(&mut run.raw),
        });
    }

    let result = RunResult {
        schema_version: RESULT_SCHEMA_VERSION,
        model: config.forecaster.kind,
        seed: trained.seed,
        train_days: config.train_days,
        validation_days: horizon - config.train_days,
        consumer_demand: demand.values()[config.train_days..].to_vec(),
        layers: out_layers,
        config: config.clone(),
    };
    let trace = RunTrace {
        records,
        final_states: (0..n).map(|i| chain.state(i).clone()).collect(),
    };
    Ok((result, trace))
}

/// Training plus validation for one seed at the configured noise level.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<(RunResult, RunTrace)> {
    let demand = run_demand(config, seed, config.noise_level)?;
    let trained = run_training_phase(config, seed, &demand)?;
    run_validation_phase(config, &trained, &demand)
}

#[derive(Debug, Default)]
pub struct ExperimentOutcome {
    pub results: Vec<RunResult>,
    pub failures: Vec<(u64, String)>,
}

/// Runs every configured seed independently (in parallel). Failed seeds are
/// reported, the rest still complete.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let runs: Vec<(u64, Result<RunResult>)> = config
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(config, seed).map(|(r, _)| r)))
        .collect();
    let mut outcome = ExperimentOutcome::default();
    for (seed, r) in runs {
        match r {
            Ok(r) => outcome.results.push(r),
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                outcome.failures.push((seed, e.to_string()));
            }
        }
    }
    Ok(outcome)
}

/// `<dir>/<model>/<seed>.json`
pub fn result_path(dir: &Path, model: ForecasterKind, seed: u64) -> PathBuf {
    dir.join(model.name()).join(format!("{seed}.json"))
}

pub fn write_result(dir: &Path, result: &RunResult) -> Result<PathBuf> {
    let path = result_path(dir, result.model, result.seed);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, result.to_canonical_json()?)?;
    Ok(path)
}

pub fn read_result(path: &Path) -> Result<RunResult> {
    let bytes = fs::read(path)?;
    let r: RunResult = serde_json::from_slice(&bytes)?;
    if r.schema_version != RESULT_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "{}: unsupported schema version {}",
            path.display(),
            r.schema_version
        )));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::Checkpoint;

    pub(crate) fn small_config(kind: ForecasterKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default().with_model(kind);
        cfg.demand.horizon = 120;
        cfg.train_days = 40;
        cfg.seeds = vec![42];
        cfg.forecaster.lnn.n_neurons = 8;
        cfg.forecaster.lnn.train.epochs = 3;
        cfg.forecaster.gbt.n_trees = 10;
        cfg
    }

    #[test]
    fn validation_checks() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.train_days = 2000;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.policy.batch_size = 8;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn training_window_count_and_pass_through() {
        let cfg = ExperimentConfig::default().with_model(ForecasterKind::Sma);
        let demand = run_demand(&cfg, 42, 0.0).unwrap();
        let trained = run_training_phase(&cfg, 42, &demand).unwrap();
        assert_eq!(trained.window_count, 203);
        for rec in &trained.records {
            let d = rec.layer(1).demand;
            assert_eq!(rec.layer(2).demand, d);
            assert_eq!(rec.layer(3).demand, d);
        }
    }

    #[test]
    fn validation_length_and_ledger() {
        let cfg = ExperimentConfig::default().with_model(ForecasterKind::Sma);
        let (r, trace) = run_seed(&cfg, 42).unwrap();
        assert_eq!(r.validation_days, 876);
        assert_eq!(trace.records.len(), 1095);
        for l in &r.layers {
            for name in SERIES_NAMES {
                assert_eq!(l.get(name).unwrap().len(), 876, "{name}");
            }
            let profit = l.get("profit").unwrap();
            let cum = l.get("cumulative_profit").unwrap();
            let mut s = 0.0;
            for (p, c) in profit.iter().zip(cum) {
                s += p;
                assert_eq!(s, *c);
            }
            assert!(l.get("orders").unwrap().iter().all(|&o| (o / 16.0).fract() == 0.0));
        }
    }

    #[test]
    fn noise_only_touches_validation() {
        let cfg = ExperimentConfig::default();
        let clean = run_demand(&cfg, 42, 0.0).unwrap();
        let noisy = run_demand(&cfg, 42, 0.5).unwrap();
        assert_eq!(clean.values()[..219], noisy.values()[..219]);
        assert_ne!(clean.values()[219..], noisy.values()[219..]);
    }

    #[test]
    fn training_ignores_validation_demand() {
        let cfg = small_config(ForecasterKind::Hybrid);
        let clean = run_demand(&cfg, 42, 0.0).unwrap();
        let noisy = run_demand(&cfg, 42, 1.0).unwrap();
        let a = run_training_phase(&cfg, 42, &clean).unwrap();
        let b = run_training_phase(&cfg, 42, &noisy).unwrap();
        let ca = Checkpoint::from_models(&a.models).to_json().unwrap();
        let cb = Checkpoint::from_models(&b.models).to_json().unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn seed_order_does_not_matter() {
        let mut cfg = small_config(ForecasterKind::Gbt);
        cfg.seeds = vec![42, 43];
        let a = run_experiment(&cfg).unwrap();
        cfg.seeds = vec![43, 42];
        let mut b = run_experiment(&cfg).unwrap();
        // The config echo records the seed list itself.
        for r in &mut b.results {
            r.config.seeds = vec![42, 43];
        }
        assert_eq!(a.results[0], b.results[1]);
        assert_eq!(a.results[1], b.results[0]);
    }

    #[test]
    fn results_round_trip_through_files() {
        let cfg = small_config(ForecasterKind::Sma);
        let (r, _) = run_seed(&cfg, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_result(dir.path(), &r).unwrap();
        assert!(path.ends_with("sma/42.json"));
        let back = read_result(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_canonical_json().unwrap(), std::fs::read(&path).unwrap());
    }
}
