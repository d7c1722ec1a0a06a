//! TOML experiment configuration.
//!
//! Every table and field is optional; missing values take the defaults shown
//! in [`DEFAULT_TEMPLATE`]. Unknown fields are rejected with their location.

use std::path::Path;

use crate::engine::ExperimentConfig;
use crate::{Error, Result};

/// Commented configuration equal to `ExperimentConfig::default()`.
pub const DEFAULT_TEMPLATE: &str = r#"# Experiment configuration. Every value shown is the default.

# Days simulated with pass-through ordering before the models are fit.
train_days = 219
# One independent run per seed.
seeds = [42, 43, 44, 45, 46, 47, 48, 49, 50, 51]
# Relative sd of noise added to validation demand (0 = clean).
noise_level = 0.0

[demand]
base = 50.0
seasonal_amp = 20.0
seasonal_period = 90.0
weekly_amp = 5.0
weekly_period = 7.0
noise_sd = 3.0
# Total simulated days (training + validation).
horizon = 1095

[chain]
# Layer 0 is the consumer; 1 retailer, 2 distributor, 3 manufacturer.
n_layers = 4
unit_cost = [0.0, 30.0, 45.0, 60.0]
unit_price = [0.0, 70.0, 100.0, 130.0]
holding_rate = 0.03
shortage_rate = 0.03
lead_time = 1
initial_inventory = 100.0
batch_size = 16
# max_inventory = 400.0
# "absolute" or "fraction_of_unit_cost"
holding_cost_mode = "absolute"
# "end_of_day" or "mid_day"
holding_basis = "end_of_day"

[policy]
safety_stock_base = 10.0
ss_factor = 1.0
demand_lookback = 10
candidate_step = 80.0
# Must equal chain.batch_size.
batch_size = 16
demand_multiplier = 1.5
lookahead_horizon = 7
# "ceil" or "nearest"
rounding = "ceil"

[forecaster]
# "hybrid", "gbt" or "sma"
kind = "hybrid"
sma_window = 10

[forecaster.lnn]
n_neurons = 64

[forecaster.lnn.cell]
alpha_base = 0.5
kappa = 0.1
tau = 1.0
dt = 1.0

[forecaster.lnn.train]
learning_rate = 0.001
epochs = 50
batch_size = 8
weight_decay = 0.0001
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
clip_norm = 1.0

[forecaster.gbt]
n_trees = 100
max_depth = 3
learning_rate = 0.1
min_leaf = 2

[tuning]
n_trials = 10
# "random" or "tpe"
sampler = "random"
seed = 42
# Simulation seed scored when tuning once per model.
run_seed = 42
per_seed = false
n_startup = 3
gamma = 0.25
n_candidates = 24
"#;

/// Parses and validates configuration text. `origin` names the source in
/// error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
    cfg.validate().map_err(|e| e.context(origin.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}
