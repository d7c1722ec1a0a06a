//! Serial supply chain: consumers (layer 0) feed retailers (1), distributors
//! (2) and manufacturers (3). Each day a layer receives due shipments, sells
//! what it can of its demand (unmet demand is lost), places an order with its
//! upstream neighbour and pays holding cost on what remains.
//!
//! The manufacturer's orders are always filled by an unlimited outside source.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Rates are currency per unit per day.
    #[default]
    Absolute,
    /// Rates are a fraction of the layer's unit cost per unit per day.
    FractionOfUnitCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HoldingBasis {
    #[default]
    EndOfDay,
    /// Mean of post-arrival and end-of-day inventory.
    MidDay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub n_layers: usize,
    pub unit_cost: Vec<f64>,
    pub unit_price: Vec<f64>,
    pub holding_rate: f64,
    pub shortage_rate: f64,
    pub lead_time: usize,
    pub initial_inventory: f64,
    pub batch_size: u32,
    pub max_inventory: Option<f64>,
    pub holding_cost_mode: CostMode,
    pub holding_basis: HoldingBasis,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            unit_cost: vec![0.0, 30.0, 45.0, 60.0],
            unit_price: vec![0.0, 70.0, 100.0, 130.0],
            holding_rate: 0.03,
            shortage_rate: 0.03,
            lead_time: 1,
            initial_inventory: 100.0,
            batch_size: 16,
            max_inventory: None,
            holding_cost_mode: CostMode::Absolute,
            holding_basis: HoldingBasis::EndOfDay,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(Error::config("n_layers must be >= 2"));
        }
        if self.unit_cost.len() != self.n_layers || self.unit_price.len() != self.n_layers {
            return Err(Error::config(format!(
                "unit_cost and unit_price need {} entries",
                self.n_layers
            )));
        }
        for i in 1..self.n_layers {
            if !(self.unit_price[i] > self.unit_cost[i]) {
                return Err(Error::config(format!(
                    "unit_price[{i}] must exceed unit_cost[{i}]"
                )));
            }
            if self.unit_cost[i] < 0.0 {
                return Err(Error::config(format!("unit_cost[{i}] must be >= 0")));
            }
        }
        if self.lead_time < 1 {
            return Err(Error::config("lead_time must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.holding_rate >= 0.0) || !(self.shortage_rate >= 0.0) {
            return Err(Error::config("holding_rate and shortage_rate must be >= 0"));
        }
        if !(self.initial_inventory >= 0.0) {
            return Err(Error::config("initial_inventory must be >= 0"));
        }
        if let Some(cap) = self.max_inventory {
            if !(cap >= 0.0) {
                return Err(Error::config("max_inventory must be >= 0"));
            }
        }
        Ok(())
    }

    /// Layers that hold stock, i.e. `1..n_layers`.
    pub fn stocking_layers(&self) -> std::ops::Range<usize> {
        1..self.n_layers
    }

    pub fn margin(&self, layer: usize) -> f64 {
        self.unit_price[layer] - self.unit_cost[layer]
    }

    fn rate_scale(&self, layer: usize) -> f64 {
        match self.holding_cost_mode {
            CostMode::Absolute => 1.0,
            CostMode::FractionOfUnitCost => self.unit_cost[layer],
        }
    }

    /// Holding cost for one day given the inventory at the start (after
    /// arrivals) and end of the day.
    pub fn holding_cost(&self, layer: usize, start: f64, end: f64) -> f64 {
        let units = match self.holding_basis {
            HoldingBasis::EndOfDay => end,
            HoldingBasis::MidDay => 0.5 * (start + end),
        };
        self.holding_rate * self.rate_scale(layer) * units
    }

    pub fn shortage_cost(&self, layer: usize, unmet: f64) -> f64 {
        self.shortage_rate * self.rate_scale(layer) * unmet
    }

    pub fn is_batch_feasible(&self, order: f64) -> bool {
        let b = self.batch_size as f64;
        order >= 0.0 && (order / b).fract() == 0.0
    }
}

/// Demand seen by layers `1..=orders.len()` given the orders placed by the
/// layer below each of them (`orders[0]` is the consumers' order, which equals
/// consumer demand).
pub fn propagate_demand(downstream_orders: &[f64]) -> Vec<f64> {
    downstream_orders.to_vec()
}

/// Revenue minus purchase, holding and shortage cost.
pub fn profit(revenue: f64, purchase_cost: f64, holding_cost: f64, shortage_cost: f64) -> f64 {
    revenue - purchase_cost - holding_cost - shortage_cost
}

/// Profit under perfect fulfilment without holding or shortage: `D * (P - C)`.
pub fn theoretical_profit(demand: f64, layer: usize, config: &ChainConfig) -> Result<f64> {
    if layer == 0 || layer >= config.n_layers {
        return Err(Error::domain(format!(
            "theoretical profit is defined for layers 1..{}, got {layer}",
            config.n_layers - 1
        )));
    }
    Ok(demand * config.margin(layer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub inventory: f64,
    /// Arrival day -> units in transit.
    pub pipeline: BTreeMap<usize, f64>,
    pub cumulative_profit: f64,
}

impl LayerState {
    pub fn new(initial_inventory: f64) -> Self {
        Self {
            inventory: initial_inventory,
            pipeline: BTreeMap::new(),
            cumulative_profit: 0.0,
        }
    }

    pub fn in_transit(&self) -> f64 {
        self.pipeline.values().sum()
    }

    /// Units due to arrive on `day`.
    pub fn due_on(&self, day: usize) -> f64 {
        self.pipeline.get(&day).copied().unwrap_or(0.0)
    }
}

/// One layer's ledger for one day.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerDay {
    pub demand: f64,
    pub order: f64,
    pub arrivals: f64,
    pub sales: f64,
    pub revenue: f64,
    pub purchase_cost: f64,
    pub holding_cost: f64,
    pub shortage_cost: f64,
    pub profit: f64,
    pub inventory_start: f64,
    pub inventory_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub t: usize,
    /// Entry `k` describes layer `k + 1`.
    pub layers: Vec<LayerDay>,
}

impl DayRecord {
    pub fn layer(&self, layer: usize) -> &LayerDay {
        &self.layers[layer - 1]
    }
}

/// What a layer knows when it decides today's order: demand has been
/// observed and sales made, purchase and holding are still to come.
#[derive(Debug)]
pub struct OrderContext<'a> {
    pub t: usize,
    pub layer: usize,
    pub demand: f64,
    pub sales: f64,
    pub state: &'a LayerState,
    pub config: &'a ChainConfig,
}

#[derive(Debug, Clone)]
pub struct Chain {
    config: ChainConfig,
    /// Index 0 is an unused placeholder for the consumer layer.
    states: Vec<LayerState>,
    day: usize,
}

impl Chain {
    pub fn new(config: ChainConfig) -> Result<Self> {
        config.validate()?;
        let states = (0..config.n_layers)
            .map(|i| LayerState::new(if i == 0 { 0.0 } else { config.initial_inventory }))
            .collect();
        Ok(Self {
            config,
            states,
            day: 0,
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    /// Day that the next call to `step` will simulate.
    pub fn day(&self) -> usize {
        self.day
    }

    pub fn state(&self, layer: usize) -> &LayerState {
        &self.states[layer]
    }

    /// Advances one day with fixed orders for layers `1..n_layers`
    /// (`orders[k]` is layer `k + 1`'s order).
    pub fn step(&mut self, orders: &[f64], demand0: f64) -> Result<DayRecord> {
        let expected = self.config.n_layers - 1;
        if orders.len() != expected {
            return Err(Error::domain(format!(
                "expected {expected} orders, got {}",
                orders.len()
            )));
        }
        self.step_with(demand0, |ctx| Ok(orders[ctx.layer - 1]))
    }

    /// Advances one day, asking `decide` for each layer's order (bottom-up,
    /// retailer first) once that layer has observed demand and sold.
    pub fn step_with<F>(&mut self, demand0: f64, mut decide: F) -> Result<DayRecord>
    where
        F: FnMut(&OrderContext<'_>) -> Result<f64>,
    {
        if !(demand0 >= 0.0) || !demand0.is_finite() {
            return Err(Error::domain(format!(
                "consumer demand must be finite and >= 0, got {demand0}"
            )));
        }
        let t = self.day;
        let n = self.config.n_layers;
        let mut downstream_order = demand0;
        let mut layers = Vec::with_capacity(n - 1);
        let mut next_states = self.states.clone();

        for layer in 1..n {
            let state = &mut next_states[layer];
            let arrivals = state.pipeline.remove(&t).unwrap_or(0.0);
            state.inventory += arrivals;
            let inventory_start = state.inventory;

            let demand = downstream_order;
            let sales = demand.min(state.inventory);
            state.inventory -= sales;
            let unmet = demand - sales;

            let ctx = OrderContext {
                t,
                layer,
                demand,
                sales,
                state,
                config: &self.config,
            };
            let order = decide(&ctx).map_err(|e| e.context(format!("day {t}, layer {layer}")))?;
            if !(order >= 0.0) || !order.is_finite() {
                return Err(Error::domain(format!(
                    "order for layer {layer} on day {t} must be finite and >= 0, got {order}"
                )));
            }
            if order > 0.0 {
                *state.pipeline.entry(t + self.config.lead_time).or_insert(0.0) += order;
            }

            let revenue = self.config.unit_price[layer] * sales;
            let purchase_cost = self.config.unit_cost[layer] * order;
            let holding_cost = self.config.holding_cost(layer, inventory_start, state.inventory);
            let shortage_cost = self.config.shortage_cost(layer, unmet);
            let day_profit = profit(revenue, purchase_cost, holding_cost, shortage_cost);
            state.cumulative_profit += day_profit;

            layers.push(LayerDay {
                demand,
                order,
                arrivals,
                sales,
                revenue,
                purchase_cost,
                holding_cost,
                shortage_cost,
                profit: day_profit,
                inventory_start,
                inventory_end: state.inventory,
            });
            downstream_order = order;
        }

        self.states = next_states;
        self.day += 1;
        Ok(DayRecord { t, layers })
    }
}
