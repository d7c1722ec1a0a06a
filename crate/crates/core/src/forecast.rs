//! Demand forecasters and the post-processing of their 7-day output.
//!
//! Three models share one interface:
//! - `hybrid`: a liquid cell is trained on the windows, then one boosted
//!   ensemble per horizon day is fit on the cell's flattened hidden states;
//! - `gbt`: one boosted ensemble per horizon day on the flattened scaled
//!   feature window;
//! - `sma`: the trailing mean of raw demand, repeated for every day.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureVector, WindowDataset, HORIZON, N_FEATURES, WINDOW};
use crate::gbt::{self, Ensemble, GbtParams};
use crate::lnn::{self, CellConstants, LnnParams, TrainConfig};
use crate::stats;
use crate::{Error, Result};

pub const SMOOTHING_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecasterKind {
    Hybrid,
    Gbt,
    Sma,
}

impl ForecasterKind {
    pub const ALL: [ForecasterKind; 3] = [ForecasterKind::Hybrid, ForecasterKind::Gbt, ForecasterKind::Sma];

    pub fn name(self) -> &'static str {
        match self {
            ForecasterKind::Hybrid => "hybrid",
            ForecasterKind::Gbt => "gbt",
            ForecasterKind::Sma => "sma",
        }
    }
}

impl std::fmt::Display for ForecasterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ForecasterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" | "lnn" => Ok(ForecasterKind::Hybrid),
            "gbt" | "xgboost" => Ok(ForecasterKind::Gbt),
            "sma" => Ok(ForecasterKind::Sma),
            other => Err(Error::config(format!(
                "unknown model '{other}' (expected hybrid, gbt or sma)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LnnSpec {
    pub n_neurons: usize,
    pub cell: CellConstants,
    pub train: TrainConfig,
}

impl Default for LnnSpec {
    fn default() -> Self {
        Self {
            n_neurons: 64,
            cell: CellConstants::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterSpec {
    pub kind: ForecasterKind,
    pub lnn: LnnSpec,
    pub gbt: GbtParams,
    pub sma_window: usize,
}

impl Default for ForecasterSpec {
    fn default() -> Self {
        Self {
            kind: ForecasterKind::Hybrid,
            lnn: LnnSpec::default(),
            gbt: GbtParams::default(),
            sma_window: 10,
        }
    }
}

impl ForecasterSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ForecasterKind::Hybrid => {
                if self.lnn.n_neurons == 0 {
                    return Err(Error::config("lnn.n_neurons must be positive"));
                }
                self.lnn.cell.validate()?;
                self.lnn.train.validate()?;
                self.gbt.validate()
            }
            ForecasterKind::Gbt => self.gbt.validate(),
            ForecasterKind::Sma => {
                if self.sma_window == 0 {
                    Err(Error::config("sma_window must be positive"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Min-max map of training targets onto [0, 1] for the cell's readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub min: f64,
    pub max: f64,
}

impl TargetScale {
    fn fit(targets: &[Vec<f64>]) -> Self {
        let (min, max) = targets
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Self { min, max }
    }

    fn apply(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (v - self.min) / span
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridModel {
    pub lnn: LnnParams,
    pub target_scale: TargetScale,
    /// One ensemble per horizon day.
    pub heads: Vec<Ensemble>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Forecaster {
    Hybrid(HybridModel),
    Gbt { heads: Vec<Ensemble> },
    Sma { window: usize },
}

fn as_rows(window: &[FeatureVector]) -> Vec<Vec<f64>> {
    window.iter().map(|x| x.to_vec()).collect()
}

fn flatten(window: &[FeatureVector]) -> Vec<f64> {
    window.iter().flat_map(|x| x.iter().copied()).collect()
}

fn fit_heads(x: &[Vec<f64>], targets: &[Vec<f64>], params: &GbtParams) -> Result<Vec<Ensemble>> {
    (0..HORIZON)
        .into_par_iter()
        .map(|k| {
            let y: Vec<f64> = targets.iter().map(|t| t[k]).collect();
            gbt::fit(x, &y, params).map_err(|e| e.context(format!("horizon day {}", k + 1)))
        })
        .collect()
}

fn predict_heads(heads: &[Ensemble], x: &[f64]) -> Result<Vec<f64>> {
    heads.iter().map(|h| h.predict(x)).collect()
}

fn check_dataset(dataset: &WindowDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Training("empty window dataset".into()));
    }
    if dataset.targets.len() != dataset.len() || dataset.targets.iter().any(|t| t.len() != HORIZON) {
        return Err(Error::domain(format!("every window needs {HORIZON} targets")));
    }
    if dataset.inputs.iter().any(|w| w.len() != WINDOW) {
        return Err(Error::domain(format!("every window needs {WINDOW} steps")));
    }
    Ok(())
}

/// Fits the model described by `spec`. `seed` drives weight initialisation
/// and batch order of the liquid cell.
pub fn fit_forecaster(spec: &ForecasterSpec, dataset: &WindowDataset, seed: u64) -> Result<Forecaster> {
    spec.validate()?;
    match spec.kind {
        ForecasterKind::Sma => Ok(Forecaster::Sma {
            window: spec.sma_window,
        }),
        ForecasterKind::Gbt => {
            check_dataset(dataset)?;
            let x: Vec<Vec<f64>> = dataset.inputs.iter().map(|w| flatten(w)).collect();
            Ok(Forecaster::Gbt {
                heads: fit_heads(&x, &dataset.targets, &spec.gbt)?,
            })
        }
        ForecasterKind::Hybrid => {
            check_dataset(dataset)?;
            let scale = TargetScale::fit(&dataset.targets);
            let scaled: Vec<Vec<f64>> = dataset
                .targets
                .iter()
                .map(|t| t.iter().map(|&v| scale.apply(v)).collect())
                .collect();
            let init = lnn::init_xavier(N_FEATURES, spec.lnn.n_neurons, HORIZON, spec.lnn.cell, seed)?;
            let (cell, _) = lnn::train(dataset, &scaled, init, &spec.lnn.train, seed.wrapping_add(1))?;
            let hidden = dataset
                .inputs
                .iter()
                .map(|w| lnn::forward(&as_rows(w), &cell, WINDOW).map(|o| o.flattened_hidden()))
                .collect::<Result<Vec<_>>>()?;
            Ok(Forecaster::Hybrid(HybridModel {
                heads: fit_heads(&hidden, &dataset.targets, &spec.gbt)?,
                lnn: cell,
                target_scale: scale,
            }))
        }
    }
}

impl Forecaster {
    pub fn kind(&self) -> ForecasterKind {
        match self {
            Forecaster::Hybrid(_) => ForecasterKind::Hybrid,
            Forecaster::Gbt { .. } => ForecasterKind::Gbt,
            Forecaster::Sma { .. } => ForecasterKind::Sma,
        }
    }

    /// Width of the vectors the boosted heads consume, if any.
    pub fn head_input_dim(&self) -> Option<usize> {
        match self {
            Forecaster::Hybrid(m) => m.heads.first().map(|h| h.n_features),
            Forecaster::Gbt { heads } => heads.first().map(|h| h.n_features),
            Forecaster::Sma { .. } => None,
        }
    }

    /// 7-day demand forecast from a scaled feature window and the raw
    /// demand observed over it. Negative outputs are floored at zero.
    pub fn predict(&self, window: &[FeatureVector], demand: &[f64]) -> Result<Vec<f64>> {
        if window.len() != WINDOW {
            return Err(Error::domain(format!(
                "forecast window has {} steps, expected {WINDOW}",
                window.len()
            )));
        }
        let raw = match self {
            Forecaster::Sma { window: n } => {
                if demand.is_empty() {
                    return Err(Error::domain("moving average needs demand history"));
                }
                let tail = &demand[demand.len().saturating_sub(*n)..];
                vec![stats::mean(tail); HORIZON]
            }
            Forecaster::Gbt { heads } => predict_heads(heads, &flatten(window))?,
            Forecaster::Hybrid(m) => {
                let out = lnn::forward(&as_rows(window), &m.lnn, WINDOW)?;
                predict_heads(&m.heads, &out.flattened_hidden())?
            }
        };
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite forecast".into()));
        }
        Ok(raw.into_iter().map(|v| v.max(0.0)).collect())
    }
}

/// Weighted mean of the horizon with weights falling linearly from 1.0 on
/// the first day to 0.5 on the last.
pub fn weight_horizon(raw: &[f64]) -> Result<f64> {
    if raw.len() != HORIZON {
        return Err(Error::domain(format!(
            "expected {HORIZON} forecast values, got {}",
            raw.len()
        )));
    }
    let last = (HORIZON - 1) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, v) in raw.iter().enumerate() {
        let w = 1.0 - 0.5 * k as f64 / last;
        num += w * v;
        den += w;
    }
    Ok(num / den)
}

/// Exponential smoothing; the first observation initialises the state.
pub fn smooth(previous: Option<f64>, point: f64, alpha: f64) -> f64 {
    match previous {
        None => point,
        Some(prev) => alpha * point + (1.0 - alpha) * prev,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub raw: Vec<f64>,
    pub weighted_point: f64,
    pub smoothed_point: f64,
}

/// Per-layer smoothing state carried through a validation run.
#[derive(Debug, Clone, Default)]
pub struct Smoother {
    state: Option<f64>,
    alpha: f64,
}

impl Smoother {
    pub fn new(alpha: f64) -> Self {
        Self { state: None, alpha }
    }

    pub fn push(&mut self, raw: Vec<f64>) -> Result<Forecast> {
        let weighted = weight_horizon(&raw)?.max(0.0);
        let smoothed = smooth(self.state, weighted, self.alpha).max(0.0);
        self.state = Some(smoothed);
        Ok(Forecast {
            raw,
            weighted_point: weighted,
            smoothed_point: smoothed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;

    fn window() -> Vec<FeatureVector> {
        vec![[0.5; N_FEATURES]; WINDOW]
    }

    #[test]
    fn sma_examples() {
        let f = fit_forecaster(
            &ForecasterSpec {
                kind: ForecasterKind::Sma,
                ..Default::default()
            },
            &WindowDataset::default(),
            1,
        )
        .unwrap();
        assert_eq!(f.predict(&window(), &[50.0; 10]).unwrap(), vec![50.0; 7]);
        let mixed: Vec<f64> = [40.0; 5].iter().chain([60.0; 5].iter()).copied().collect();
        assert_eq!(f.predict(&window(), &mixed).unwrap(), vec![50.0; 7]);
        assert!(f.predict(&window()[..9], &mixed).is_err());
        assert_eq!(f.head_input_dim(), None);
    }

    #[test]
    fn sma_matches_brute_force_mean() {
        let mut rng = SimRng::new(3);
        let f = Forecaster::Sma { window: 10 };
        for _ in 0..50 {
            let d: Vec<f64> = (0..25).map(|_| rng.uniform_range(0.0, 100.0)).collect();
            let mut s = 0.0;
            for v in &d[15..] {
                s += v;
            }
            let p = f.predict(&window(), &d).unwrap();
            assert!((p[0] - s / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn horizon_weighting() {
        assert_eq!(weight_horizon(&[4.0; 7]).unwrap(), 4.0);
        let v = weight_horizon(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((v - 1.0 / 5.25).abs() < 1e-12);
        assert_eq!(weight_horizon(&[0.0; 7]).unwrap(), 0.0);
        assert!(weight_horizon(&[1.0; 6]).is_err());
    }

    #[test]
    fn smoothing() {
        assert_eq!(smooth(None, 50.0, 0.3), 50.0);
        assert!((smooth(Some(50.0), 60.0, 0.3) - 53.0).abs() < 1e-12);
        let mut s = None;
        for _ in 0..200 {
            s = Some(smooth(s.or(Some(0.0)), 7.0, 0.3));
        }
        assert!((s.unwrap() - 7.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weighting_is_convex(raw in prop::collection::vec(-100.0f64..100.0, 7)) {
            let w = weight_horizon(&raw).unwrap();
            let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(w >= lo - 1e-9 && w <= hi + 1e-9);
        }

        #[test]
        fn smoothing_contracts(prev in -100.0f64..100.0, new in -100.0f64..100.0, alpha in 0.01f64..=1.0) {
            let out = smooth(Some(prev), new, alpha);
            prop_assert!((out - new).abs() <= (1.0 - alpha) * (prev - new).abs() + 1e-9);
        }
    }

    fn fixture(n: usize, level: f64) -> WindowDataset {
        let mut rng = SimRng::new(12);
        let mut ds = WindowDataset::default();
        for _ in 0..n {
            let w: Vec<FeatureVector> = (0..WINDOW)
                .map(|_| {
                    let mut v = [0.0; N_FEATURES];
                    v.iter_mut().for_each(|x| *x = rng.uniform());
                    v
                })
                .collect();
            ds.inputs.push(w);
            ds.targets.push(vec![level; HORIZON]);
            ds.input_demand.push(vec![level; WINDOW]);
        }
        ds
    }

    fn small_hybrid() -> ForecasterSpec {
        ForecasterSpec {
            kind: ForecasterKind::Hybrid,
            lnn: LnnSpec {
                n_neurons: 8,
                train: TrainConfig {
                    epochs: 5,
                    ..Default::default()
                },
                ..Default::default()
            },
            gbt: GbtParams {
                n_trees: 20,
                ..Default::default()
            },
            sma_window: 10,
        }
    }

    #[test]
    fn head_dimensions() {
        let ds = fixture(30, 50.0);
        let g = fit_forecaster(
            &ForecasterSpec {
                kind: ForecasterKind::Gbt,
                gbt: GbtParams {
                    n_trees: 5,
                    ..Default::default()
                },
                ..Default::default()
            },
            &ds,
            1,
        )
        .unwrap();
        assert_eq!(g.head_input_dim(), Some(100));
        let mut spec = small_hybrid();
        spec.lnn.n_neurons = 64;
        spec.lnn.train.epochs = 1;
        spec.gbt.n_trees = 2;
        let h = fit_forecaster(&spec, &ds, 1).unwrap();
        assert_eq!(h.head_input_dim(), Some(640));
    }

    #[test]
    fn hybrid_on_constant_demand() {
        let ds = fixture(40, 50.0);
        let h = fit_forecaster(&small_hybrid(), &ds, 3).unwrap();
        let p = h.predict(&ds.inputs[0], &ds.input_demand[0]).unwrap();
        assert_eq!(p.len(), 7);
        for v in p {
            assert!((v - 50.0).abs() <= 5.0, "{v}");
        }
    }

    #[test]
    fn hybrid_is_deterministic() {
        let mut ds = fixture(30, 0.0);
        let mut rng = SimRng::new(5);
        for t in ds.targets.iter_mut() {
            t.iter_mut().for_each(|v| *v = rng.uniform_range(20.0, 80.0));
        }
        let a = fit_forecaster(&small_hybrid(), &ds, 9).unwrap();
        let b = fit_forecaster(&small_hybrid(), &ds, 9).unwrap();
        assert_eq!(a, b);
        let w = &ds.inputs[3];
        assert_eq!(a.predict(w, &[]).unwrap(), b.predict(w, &[]).unwrap());
    }

    #[test]
    fn forecasts_are_floored() {
        let heads = vec![
            Ensemble {
                n_features: 100,
                base_prediction: -3.0,
                learning_rate: 0.1,
                trees: vec![],
            };
            7
        ];
        let f = Forecaster::Gbt { heads };
        assert_eq!(f.predict(&window(), &[]).unwrap(), vec![0.0; 7]);
    }

    #[test]
    fn smoother_tracks_state() {
        let mut s = Smoother::new(0.3);
        let a = s.push(vec![50.0; 7]).unwrap();
        assert_eq!(a.smoothed_point, 50.0);
        let b = s.push(vec![60.0; 7]).unwrap();
        assert!((b.smoothed_point - 53.0).abs() < 1e-12);
        assert_eq!(b.weighted_point, 60.0);
    }
}
