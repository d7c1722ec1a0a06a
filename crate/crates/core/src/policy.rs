//! Daily ordering policy: safety stock, candidate enumeration, a short
//! profit lookahead per candidate and batch rounding of the winner.

use serde::{Deserialize, Serialize};

use crate::chain::{ChainConfig, LayerState};
use crate::stats;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// `batch * ceil(q / batch)`
    #[default]
    Ceil,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub safety_stock_base: f64,
    pub ss_factor: f64,
    pub demand_lookback: usize,
    pub candidate_step: f64,
    pub batch_size: u32,
    pub demand_multiplier: f64,
    pub lookahead_horizon: usize,
    pub rounding: Rounding,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            safety_stock_base: 10.0,
            ss_factor: 1.0,
            demand_lookback: 10,
            candidate_step: 80.0,
            batch_size: 16,
            demand_multiplier: 1.5,
            lookahead_horizon: 7,
            rounding: Rounding::Ceil,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        let positive = self.safety_stock_base >= 0.0
            && self.ss_factor >= 0.0
            && self.demand_lookback > 0
            && self.candidate_step > 0.0
            && self.batch_size > 0
            && self.demand_multiplier > 0.0
            && self.lookahead_horizon > 0;
        if positive {
            Ok(())
        } else {
            Err(Error::config(
                "policy parameters must be positive (safety stock base may be zero)",
            ))
        }
    }
}

/// `base + factor * sd(history)` with the population sd.
pub fn safety_stock(base: f64, factor: f64, history: &[f64]) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::domain("safety stock needs demand history"));
    }
    Ok(base + factor * stats::pop_sd(history))
}

/// Candidate order quantities, ascending. The lower bound tops stock up to
/// forecast plus safety stock; the upper bound covers `multiplier` times the
/// recent average demand over the lookahead horizon. `cap` optionally limits
/// the order so that inventory stays within a maximum.
pub fn candidate_orders(
    forecast_point: f64,
    inventory: f64,
    avg_demand: f64,
    safety_stock: f64,
    params: &PolicyParams,
    cap: Option<f64>,
) -> Vec<f64> {
    let mut lower = (forecast_point + safety_stock - inventory).max(0.0);
    let mut upper = lower.max(params.demand_multiplier * avg_demand * params.lookahead_horizon as f64 - inventory);
    if let Some(cap) = cap {
        lower = lower.min(cap.max(0.0));
        upper = upper.min(cap.max(0.0));
    }
    let mut out = vec![lower];
    if upper > lower {
        let mut q = lower + params.candidate_step;
        while q < upper {
            out.push(q);
            q += params.candidate_step;
        }
        out.push(upper);
    }
    out
}

/// Ledger of a simulated lookahead.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Projection {
    pub revenue: f64,
    pub purchase_cost: f64,
    pub holding_cost: f64,
    pub shortage_cost: f64,
    pub profit: f64,
}

/// Simulates days `t+1 ..= t+H` for one layer after ordering `candidate` on
/// day `t`, with daily demand taken from `forecasts` (H = its length).
/// `state` is the layer after today's sales. Unmet demand is lost.
pub fn project_profit(
    candidate: f64,
    forecasts: &[f64],
    state: &LayerState,
    t: usize,
    config: &ChainConfig,
    layer: usize,
) -> Projection {
    let mut inventory = state.inventory;
    let mut p = Projection {
        purchase_cost: config.unit_cost[layer] * candidate,
        ..Default::default()
    };
    for (k, &demand) in forecasts.iter().enumerate() {
        let offset = k + 1;
        inventory += state.due_on(t + offset);
        if offset == config.lead_time {
            inventory += candidate;
        }
        let start = inventory;
        let sales = demand.min(inventory);
        inventory -= sales;
        p.revenue += config.unit_price[layer] * sales;
        p.holding_cost += config.holding_cost(layer, start, inventory);
        p.shortage_cost += config.shortage_cost(layer, demand - sales);
    }
    p.profit = p.revenue - p.purchase_cost - p.holding_cost - p.shortage_cost;
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderDecision {
    /// `(quantity, projected profit)` per candidate.
    pub candidates: Vec<(f64, f64)>,
    /// Best candidate before rounding.
    pub best: f64,
    pub chosen: f64,
    pub forecast_used: f64,
}

pub fn round_to_batch(q: f64, batch: u32, rounding: Rounding) -> f64 {
    let b = batch as f64;
    let batches = match rounding {
        Rounding::Ceil => (q / b).ceil(),
        Rounding::Nearest => (q / b).round(),
    };
    batches.max(0.0) * b
}

/// Picks the most profitable candidate (the smaller one on ties) and rounds
/// it to the batch grid.
pub fn choose_order(
    candidates: &[f64],
    projections: &[f64],
    batch: u32,
    rounding: Rounding,
    forecast_used: f64,
) -> Result<OrderDecision> {
    if candidates.is_empty() || candidates.len() != projections.len() {
        return Err(Error::domain("need one projection per candidate, at least one candidate"));
    }
    let mut best = 0;
    for i in 1..candidates.len() {
        let better = projections[i] > projections[best]
            || (projections[i] == projections[best] && candidates[i] < candidates[best]);
        if better {
            best = i;
        }
    }
    let q = candidates[best];
    Ok(OrderDecision {
        candidates: candidates.iter().copied().zip(projections.iter().copied()).collect(),
        best: q,
        chosen: round_to_batch(q, batch, rounding),
        forecast_used,
    })
}

/// Everything the policy looks at for one layer on one day.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub t: usize,
    pub layer: usize,
    /// Layer state after today's sales.
    pub state: &'a LayerState,
    /// Smoothed point forecast.
    pub forecast_point: f64,
    /// Daily path for the lookahead.
    pub forecasts: &'a [f64],
    /// Trailing demand, most recent last (at least one value).
    pub recent_demand: &'a [f64],
}

/// Full daily decision: safety stock, candidates, projections, choice.
pub fn decide(input: PolicyInput<'_>, params: &PolicyParams, config: &ChainConfig) -> Result<OrderDecision> {
    let lookback = &input.recent_demand[input.recent_demand.len().saturating_sub(params.demand_lookback)..];
    let ss = safety_stock(params.safety_stock_base, params.ss_factor, lookback)?;
    let avg = stats::mean(lookback);
    let cap = config.max_inventory.map(|m| m - input.state.inventory);
    let candidates = candidate_orders(input.forecast_point, input.state.inventory, avg, ss, params, cap);
    let path = &input.forecasts[..input.forecasts.len().min(params.lookahead_horizon)];
    let projections: Vec<f64> = candidates
        .iter()
        .map(|&q| project_profit(q, path, input.state, input.t, config, input.layer).profit)
        .collect();
    choose_order(&candidates, &projections, params.batch_size, params.rounding, input.forecast_point)
}
