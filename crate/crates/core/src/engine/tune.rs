//! Hyperparameter search maximising the manufacturer's validation profit.
//!
//! Two samplers: seeded random search (default) and a small TPE-style
//! sampler that, after a few random start-up trials, splits past trials into
//! a good top quantile and the rest, fits a Parzen density to each in unit
//! coordinates, and picks the candidate with the highest good/bad ratio.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::forecast::ForecasterKind;
use crate::rng::{offsets, SimRng};
use crate::{Error, Result};

/// Layer whose cumulative profit is the tuning objective.
pub const OBJECTIVE_LAYER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Random,
    Tpe,
}

/// A bounded dimension. Integers are sampled on the grid `lo, lo+step, ..`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dimension {
    Int { lo: i64, hi: i64, step: i64 },
    Float { lo: f64, hi: f64, log: bool },
}

impl Dimension {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Dimension::Int { lo, hi, step } => lo <= hi && step > 0,
            Dimension::Float { lo, hi, log } => lo.is_finite() && hi.is_finite() && lo <= hi && (!log || lo > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("search dimension '{name}' is not a valid range")))
        }
    }

    /// Maps `u` in [0, 1] onto the dimension.
    pub fn at_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            Dimension::Int { lo, hi, step } => {
                let n = (hi - lo) / step;
                let k = ((u * (n + 1) as f64).floor() as i64).min(n);
                (lo + k * step) as f64
            }
            Dimension::Float { lo, hi, log: false } => lo + u * (hi - lo),
            Dimension::Float { lo, hi, log: true } => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
        }
    }

    /// Inverse of `at_unit` (cell centre for integers).
    pub fn to_unit(&self, v: f64) -> f64 {
        match *self {
            Dimension::Int { lo, hi, step } => {
                let n = ((hi - lo) / step + 1) as f64;
                (((v - lo as f64) / step as f64).round() + 0.5) / n
            }
            Dimension::Float { lo, hi, log } => {
                if hi == lo {
                    return 0.5;
                }
                if log {
                    (v.ln() - lo.ln()) / (hi.ln() - lo.ln())
                } else {
                    (v - lo) / (hi - lo)
                }
            }
        }
    }
}

/// Named search dimensions. Names map onto configuration fields in
/// [`apply_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace(pub BTreeMap<String, Dimension>);

pub const PARAM_NAMES: [&str; 8] = [
    "n_neurons",
    "lnn_learning_rate",
    "lnn_batch_size",
    "lnn_epochs",
    "gbt_n_trees",
    "gbt_max_depth",
    "gbt_learning_rate",
    "safety_stock_base",
];

impl SearchSpace {
    /// Default ranges for a model. Neuron counts stop at 256 to keep a
    /// tuning run within desk-scale time.
    pub fn for_model(kind: ForecasterKind) -> Self {
        let mut m = BTreeMap::new();
        let lnn = [
            ("n_neurons", Dimension::Int { lo: 64, hi: 256, step: 64 }),
            ("lnn_learning_rate", Dimension::Float { lo: 1e-5, hi: 1e-3, log: true }),
            ("lnn_batch_size", Dimension::Int { lo: 4, hi: 8, step: 4 }),
            ("lnn_epochs", Dimension::Int { lo: 50, hi: 100, step: 1 }),
        ];
        let gbt = [
            ("gbt_n_trees", Dimension::Int { lo: 100, hi: 300, step: 1 }),
            ("gbt_max_depth", Dimension::Int { lo: 3, hi: 7, step: 1 }),
            ("gbt_learning_rate", Dimension::Float { lo: 0.01, hi: 0.3, log: true }),
        ];
        m.insert("safety_stock_base".to_string(), Dimension::Float { lo: 5.0, hi: 20.0, log: false });
        if kind == ForecasterKind::Hybrid {
            m.extend(lnn.iter().map(|(k, d)| (k.to_string(), *d)));
        }
        if kind != ForecasterKind::Sma {
            m.extend(gbt.iter().map(|(k, d)| (k.to_string(), *d)));
        }
        SearchSpace(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::config("search space is empty"));
        }
        for (name, dim) in &self.0 {
            if !PARAM_NAMES.contains(&name.as_str()) {
                return Err(Error::config(format!(
                    "unknown search dimension '{name}' (known: {})",
                    PARAM_NAMES.join(", ")
                )));
            }
            dim.validate(name)?;
        }
        Ok(())
    }

    fn at_units(&self, units: &[f64]) -> BTreeMap<String, f64> {
        self.0
            .iter()
            .zip(units)
            .map(|((name, dim), &u)| (name.clone(), dim.at_unit(u)))
            .collect()
    }

    fn to_units(&self, params: &BTreeMap<String, f64>) -> Vec<f64> {
        self.0.iter().map(|(name, dim)| dim.to_unit(params[name])).collect()
    }
}

/// Writes sampled values into a copy of `config`.
pub fn apply_params(config: &ExperimentConfig, params: &BTreeMap<String, f64>) -> Result<ExperimentConfig> {
    let mut c = config.clone();
    for (name, &v) in params {
        match name.as_str() {
            "n_neurons" => c.forecaster.lnn.n_neurons = v as usize,
            "lnn_learning_rate" => c.forecaster.lnn.train.learning_rate = v,
            "lnn_batch_size" => c.forecaster.lnn.train.batch_size = v as usize,
            "lnn_epochs" => c.forecaster.lnn.train.epochs = v as usize,
            "gbt_n_trees" => c.forecaster.gbt.n_trees = v as usize,
            "gbt_max_depth" => c.forecaster.gbt.max_depth = v as usize,
            "gbt_learning_rate" => c.forecaster.gbt.learning_rate = v,
            "safety_stock_base" => c.policy.safety_stock_base = v,
            other => return Err(Error::config(format!("unknown parameter '{other}'"))),
        }
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub n_trials: usize,
    pub sampler: SamplerKind,
    /// Seed of the sampler's random stream.
    pub seed: u64,
    /// Simulation seed used to score trials when tuning once per model.
    pub run_seed: u64,
    /// Tune separately for every experiment seed instead of once.
    pub per_seed: bool,
    /// Random trials before the TPE sampler starts modelling.
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    /// Overrides the model's default space when set.
    pub space: Option<SearchSpace>,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            n_trials: 10,
            sampler: SamplerKind::Random,
            seed: 42,
            run_seed: 42,
            per_seed: false,
            n_startup: 3,
            gamma: 0.25,
            n_candidates: 24,
            space: None,
        }
    }
}

impl TuningConfig {
    pub fn space_for(&self, kind: ForecasterKind) -> SearchSpace {
        self.space.clone().unwrap_or_else(|| SearchSpace::for_model(kind))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub run_seed: u64,
    pub params: BTreeMap<String, f64>,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub model: ForecasterKind,
    pub run_seed: u64,
    pub best_index: usize,
    pub best_params: BTreeMap<String, f64>,
    pub best_objective: f64,
    pub trials: Vec<Trial>,
}

/// Final validation cumulative profit of the manufacturer for one run.
pub fn objective(config: &ExperimentConfig, run_seed: u64) -> Result<f64> {
    let (result, _) = super::run_seed(config, run_seed)?;
    result.final_profit(OBJECTIVE_LAYER)
}

fn evaluate(config: &ExperimentConfig, index: usize, run_seed: u64, params: BTreeMap<String, f64>) -> Trial {
    let value = apply_params(config, &params).and_then(|c| objective(&c, run_seed));
    match value {
        Ok(v) if v.is_finite() => Trial {
            index,
            run_seed,
            params,
            objective: Some(v),
            error: None,
        },
        Ok(v) => Trial {
            index,
            run_seed,
            params,
            objective: None,
            error: Some(format!("non-finite objective {v}")),
        },
        Err(e) => Trial {
            index,
            run_seed,
            params,
            objective: None,
            error: Some(e.to_string()),
        },
    }
}

fn gaussian_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Parzen density on [0, 1]: a uniform prior component plus one Gaussian
/// kernel per observation.
fn parzen(points: &[Vec<f64>], x: &[f64], bandwidth: f64) -> f64 {
    let mut log_density = 0.0;
    for (d, &xd) in x.iter().enumerate() {
        let mut s = 1.0;
        for p in points {
            s += gaussian_pdf(xd, p[d], bandwidth);
        }
        log_density += (s / (points.len() + 1) as f64).ln();
    }
    log_density
}

fn tpe_suggest(history: &[(Vec<f64>, f64)], dims: usize, cfg: &TuningConfig, rng: &mut SimRng) -> Vec<f64> {
    let mut sorted: Vec<&(Vec<f64>, f64)> = history.iter().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
    let n_good = ((cfg.gamma * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let good: Vec<Vec<f64>> = sorted[..n_good].iter().map(|h| h.0.clone()).collect();
    let bad: Vec<Vec<f64>> = sorted[n_good..].iter().map(|h| h.0.clone()).collect();
    let bandwidth = (0.5 * (history.len() as f64).powf(-0.2)).max(0.05);

    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..cfg.n_candidates.max(1) {
        let centre = &good[rng.below(good.len())];
        let cand: Vec<f64> = (0..dims)
            .map(|d| (centre[d] + bandwidth * rng.standard_normal()).clamp(0.0, 1.0))
            .collect();
        let score = parzen(&good, &cand, bandwidth) - parzen(&bad, &cand, bandwidth);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, cand));
        }
    }
    best.map(|(_, c)| c).unwrap_or_else(|| vec![0.5; dims])
}

/// Runs `cfg.n_trials` trials of `config`'s model on `run_seed`.
pub fn tune(config: &ExperimentConfig, cfg: &TuningConfig, run_seed: u64) -> Result<TuneOutcome> {
    config.validate()?;
    let space = cfg.space_for(config.forecaster.kind);
    space.validate()?;
    if cfg.n_trials == 0 {
        return Err(Error::Tuning("n_trials must be positive".into()));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        return Err(Error::config("tuning.gamma must lie in (0, 1)"));
    }
    let dims = space.0.len();
    let mut rng = SimRng::channel(cfg.seed.wrapping_add(run_seed), offsets::TUNING);

    let trials: Vec<Trial> = match cfg.sampler {
        SamplerKind::Random => {
            let units: Vec<Vec<f64>> = (0..cfg.n_trials)
                .map(|_| (0..dims).map(|_| rng.uniform()).collect())
                .collect();
            units
                .into_par_iter()
                .enumerate()
                .map(|(i, u)| evaluate(config, i, run_seed, space.at_units(&u)))
                .collect()
        }
        SamplerKind::Tpe => {
            let mut trials = Vec::with_capacity(cfg.n_trials);
            let mut history: Vec<(Vec<f64>, f64)> = Vec::new();
            for i in 0..cfg.n_trials {
                let u = if history.len() < cfg.n_startup.max(1) {
                    (0..dims).map(|_| rng.uniform()).collect()
                } else {
                    tpe_suggest(&history, dims, cfg, &mut rng)
                };
                let trial = evaluate(config, i, run_seed, space.at_units(&u));
                if let Some(v) = trial.objective {
                    history.push((space.to_units(&trial.params), v));
                }
                trials.push(trial);
            }
            trials
        }
    };

    for t in &trials {
        match (&t.objective, &t.error) {
            (Some(v), _) => log::info!("trial {}: objective {v:.2}", t.index),
            (None, Some(e)) => log::warn!("trial {} failed: {e}", t.index),
            _ => {}
        }
    }
    let best = trials
        .iter()
        .filter_map(|t| t.objective.map(|v| (t, v)))
        .fold(None::<(&Trial, f64)>, |acc, (t, v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((t, v)),
        });
    let (best, value) = best.ok_or_else(|| Error::Tuning("all trials failed".into()))?;
    Ok(TuneOutcome {
        model: config.forecaster.kind,
        run_seed,
        best_index: best.index,
        best_params: best.params.clone(),
        best_objective: value,
        trials,
    })
}
