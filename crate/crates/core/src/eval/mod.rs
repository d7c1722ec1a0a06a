//! Run metrics, efficiency, composite scoring and statistical comparison.

mod analysis;
pub mod report;
mod significance;

use serde::{Deserialize, Serialize};

use crate::chain::ChainConfig;
use crate::engine::RunResult;
use crate::stats;
use crate::{Error, Result};

pub use analysis::{
    bullwhip_ratio, permutation_importance, robustness_sweep, RobustnessRow, RobustnessTable, IMPORTANCE_SHUFFLES,
};
pub use significance::{
    anova, holm_adjust, ln_gamma, paired_ttest, regularized_incomplete_beta, welch_ttest, welch_ttest_one_sided,
    Alternative, AnovaResult, TestResult,
};

/// Guard for the turnover denominator.
pub const TURNOVER_EPS: f64 = 1e-9;
pub const MA_DAYS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub cumulative_profit: f64,
    pub inventory_turnover: f64,
    pub service_level: f64,
    pub total_cost: f64,
    pub prediction_mae: f64,
    pub order_volatility: f64,
    pub efficiency: Vec<f64>,
    /// Moving average from day 7 on (length `n - 6`).
    pub efficiency_ma: Vec<f64>,
}

/// The five scored metrics in weight order.
pub const SCORED_METRICS: [&str; 5] = ["profit", "turnover", "service", "cost", "mae"];

impl MetricSet {
    pub fn scored(&self) -> [f64; 5] {
        [
            self.cumulative_profit,
            self.inventory_turnover,
            self.service_level,
            self.total_cost,
            self.prediction_mae,
        ]
    }
}

/// Metrics of one layer of a run.
pub fn compute_metrics(run: &RunResult, layer: usize) -> Result<MetricSet> {
    let l = run.layer(layer)?;
    let demand = l.get("demand")?;
    let sales = l.get("sales")?;
    let inv_start = l.get("inventory_start")?;
    let inv_end = l.get("inventory")?;
    let holding = l.get("holding_cost")?;
    let shortage = l.get("shortage_cost")?;
    let profit = l.get("profit")?;
    let cumulative = l.get("cumulative_profit")?;
    let orders = l.get("orders")?;
    let mae = l.get("mae")?;
    let n = demand.len();
    for s in [sales, inv_start, inv_end, holding, shortage, profit, cumulative, orders, mae] {
        if s.len() != n {
            return Err(Error::Schema(format!("layer {layer} series lengths differ")));
        }
    }
    if n == 0 {
        return Err(Error::Schema(format!("layer {layer} has no days")));
    }

    let turnover: Vec<f64> = (0..n)
        .map(|t| sales[t] / ((inv_start[t] + inv_end[t]) / 2.0).max(TURNOVER_EPS))
        .collect();
    let service: Vec<f64> = (0..n)
        .map(|t| if demand[t] == 0.0 { 1.0 } else { sales[t] / demand[t] })
        .collect();
    let nonzero_mae: Vec<f64> = mae.iter().copied().filter(|&v| v != 0.0).collect();
    let (efficiency, efficiency_ma) = efficiency(profit, demand, layer, &run.config.chain)?;

    Ok(MetricSet {
        cumulative_profit: cumulative[n - 1],
        inventory_turnover: stats::mean(&turnover),
        service_level: stats::mean(&service),
        total_cost: shortage.iter().sum::<f64>() + holding.iter().sum::<f64>(),
        prediction_mae: if nonzero_mae.is_empty() { 0.0 } else { stats::mean(&nonzero_mae) },
        order_volatility: stats::pop_sd(orders),
        efficiency,
        efficiency_ma,
    })
}

/// Daily profit relative to the theoretical `D * (P - C)`, with 0 whenever
/// the theoretical profit is 0, and its trailing 7-day mean.
pub fn efficiency(profit: &[f64], demand: &[f64], layer: usize, config: &ChainConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if profit.len() != demand.len() {
        return Err(Error::domain("profit and demand differ in length"));
    }
    if layer == 0 || layer >= config.n_layers {
        return Err(Error::domain(format!("layer {layer} is not a stocking layer")));
    }
    let margin = config.margin(layer);
    let e: Vec<f64> = profit
        .iter()
        .zip(demand)
        .map(|(p, d)| {
            let theoretical = d * margin;
            if theoretical == 0.0 {
                0.0
            } else {
                p / theoretical
            }
        })
        .collect();
    let ma = e.windows(MA_DAYS).map(stats::mean).collect();
    Ok((e, ma))
}

/// `(v - min) / (max - min)`, or 0 everywhere when the extrema coincide.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    values
        .iter()
        .map(|v| if range > 0.0 { (v - lo) / range } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreWeights {
    pub profit: f64,
    pub turnover: f64,
    pub service: f64,
    pub cost: f64,
    pub mae: f64,
}

pub const LAYER_WEIGHTS: [f64; 3] = [0.4, 0.3, 0.3];

impl ScoreWeights {
    pub const DEFAULT: ScoreWeights = ScoreWeights {
        profit: 0.5,
        turnover: 0.2,
        service: 0.2,
        cost: -0.1,
        mae: -0.1,
    };
    pub const CUSTOM: ScoreWeights = ScoreWeights {
        profit: 0.4,
        turnover: 0.1,
        service: 0.3,
        cost: -0.1,
        mae: -0.1,
    };

    pub fn as_array(&self) -> [f64; 5] {
        [self.profit, self.turnover, self.service, self.cost, self.mae]
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::DEFAULT),
            "custom" => Ok(Self::CUSTOM),
            other => Err(Error::config(format!(
                "unknown weight scheme '{other}' (expected default or custom)"
            ))),
        }
    }
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Weighted sum (correctly rounded) of normalized metrics in [`SCORED_METRICS`] order.
pub fn layer_score(normalized: &[f64; 5], weights: &ScoreWeights) -> f64 {
    let terms: Vec<f64> = normalized.iter().zip(weights.as_array()).map(|(m, w)| m * w).collect();
    stats::exact_sum(&terms)
}

/// Retailer, distributor, manufacturer scores combined 0.4 / 0.3 / 0.3.
pub fn total_score(layer_scores: &[f64; 3]) -> f64 {
    let terms: Vec<f64> = layer_scores.iter().zip(LAYER_WEIGHTS).map(|(s, w)| s * w).collect();
    stats::exact_sum(&terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub model: String,
    pub seed: u64,
    pub metrics: Vec<MetricSet>,
    pub layer_scores: [f64; 3],
    pub total: f64,
}

/// Scores every run. Each metric is normalized with extrema taken over all
/// models, runs and layers together.
pub fn score_runs(runs: &[RunResult], weights: &ScoreWeights) -> Result<Vec<RunScore>> {
    let metrics: Vec<Vec<MetricSet>> = runs
        .iter()
        .map(|r| (1..=3).map(|l| compute_metrics(r, l)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let flat: Vec<[f64; 5]> = metrics.iter().flatten().map(MetricSet::scored).collect();
    let mut normalized = vec![[0.0; 5]; flat.len()];
    for m in 0..5 {
        let column: Vec<f64> = flat.iter().map(|row| row[m]).collect();
        for (i, v) in minmax_normalize(&column).into_iter().enumerate() {
            normalized[i][m] = v;
        }
    }
    Ok(runs
        .iter()
        .zip(metrics)
        .enumerate()
        .map(|(i, (run, metrics))| {
            let layer_scores = [0, 1, 2].map(|l| layer_score(&normalized[i * 3 + l], weights));
            RunScore {
                model: run.model.name().to_string(),
                seed: run.seed,
                metrics,
                layer_scores,
                total: total_score(&layer_scores),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub t: f64,
    pub p: f64,
    pub p_holm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    /// What was compared (`total_score` or `total_profit`).
    pub quantity: String,
    pub pairwise: Vec<PairwiseTest>,
    pub anova: Option<AnovaResult>,
    /// Models by descending mean.
    pub ranking: Vec<(String, f64)>,
}

/// Pairwise Welch tests with Holm-adjusted p values, one-way ANOVA and a
/// ranking by mean. `groups` maps model name to one value per run. Tests
/// are skipped when a group has fewer than two runs.
pub fn stat_report(quantity: &str, groups: &[(String, Vec<f64>)]) -> Result<StatReport> {
    let testable = groups.len() >= 2 && groups.iter().all(|g| g.1.len() >= 2);
    if !testable {
        log::warn!("{quantity}: need at least two runs per model for significance tests");
    }
    let mut pairwise = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            if !testable {
                continue;
            }
            let r = welch_ttest(&groups[i].1, &groups[j].1)?;
            pairwise.push(PairwiseTest {
                a: groups[i].0.clone(),
                b: groups[j].0.clone(),
                t: r.statistic,
                p: r.p_value,
                p_holm: r.p_value,
            });
        }
    }
    let adjusted = holm_adjust(&pairwise.iter().map(|p| p.p).collect::<Vec<_>>());
    for (p, adj) in pairwise.iter_mut().zip(adjusted) {
        p.p_holm = adj;
    }
    let samples: Vec<Vec<f64>> = groups.iter().map(|g| g.1.clone()).collect();
    let anova = if testable {
        match anova(&samples) {
            Ok(a) => Some(a),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let mut ranking: Vec<(String, f64)> = groups.iter().map(|(m, v)| (m.clone(), stats::mean(v))).collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(StatReport {
        quantity: quantity.to_string(),
        pairwise,
        anova,
        ranking,
    })
}
