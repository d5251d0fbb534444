//! Hot-water draw forecasting: features, five model families, evaluation
//! metrics and the horizon-switched ensemble.

pub mod backtest;
pub mod features;
pub mod linear;
pub mod metrics;
pub mod snapshot;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backtest::{backtest, BacktestOptions, BacktestRow};
pub use features::{build_features, ForecastFeatureRow, HistoryBundle, HistoryView, TrainingTable};
pub use metrics::{evaluate, metrics, Evaluation, Metrics};

use features::N_FEATURES;
use linear::{linear_predict, local_hours, FourierModel, LinearDesign};
use tree::{BinnedFeatures, BoostingParams, ForestParams, GradientBoosting, RandomForest};

/// Default forecast horizon: one day of 5-minute steps.
pub const HORIZON: usize = 288;
/// Default draw threshold for the recency features, kg/min.
pub const DEFAULT_TAU: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("need {needed} samples of history, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("unknown model id `{0}`")]
    UnknownModelId(String),
    #[error("model has not been fitted for lookahead {0}")]
    UnfittedModel(usize),
    #[error("forecasts do not align with actuals: {0}")]
    Alignment(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
    #[error("invalid ensemble configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    Persistence,
    Linear,
    RandomForest,
    GradientBoosting,
    SeasonalFourier,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [
        ModelId::Persistence,
        ModelId::Linear,
        ModelId::RandomForest,
        ModelId::GradientBoosting,
        ModelId::SeasonalFourier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Persistence => "persistence",
            ModelId::Linear => "linear",
            ModelId::RandomForest => "random_forest",
            ModelId::GradientBoosting => "gradient_boosting",
            ModelId::SeasonalFourier => "seasonal_fourier",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = ForecastError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "persistence" => Ok(ModelId::Persistence),
            "linear" | "linear_regression" | "ols" => Ok(ModelId::Linear),
            "random_forest" | "rf" => Ok(ModelId::RandomForest),
            "gradient_boosting" | "gbt" | "xgboost" => Ok(ModelId::GradientBoosting),
            "seasonal_fourier" | "fourier" | "prophet" => Ok(ModelId::SeasonalFourier),
            other => Err(ForecastError::UnknownModelId(other.to_string())),
        }
    }
}

/// Hyper-parameters shared by the model families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub forest: ForestParams,
    pub boosting: BoostingParams,
    pub daily_pairs: usize,
    pub weekly_pairs: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            boosting: BoostingParams::default(),
            daily_pairs: 6,
            weekly_pairs: 3,
            tau: DEFAULT_TAU,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Body {
    /// Value one season (`period` samples) before the target.
    Persistence { period: usize },
    Linear(Vec<Option<[f64; N_FEATURES + 1]>>),
    RandomForest(Vec<Option<RandomForest>>),
    GradientBoosting(Vec<Option<GradientBoosting>>),
    SeasonalFourier(FourierModel),
}

/// A trained forecaster. Per-horizon families hold one model per fitted
/// lookahead; index `j` of the inner vectors is lookahead `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    id: ModelId,
    body: Body,
}

/// Everything a member may condition on when predicting from origin `k`.
#[derive(Debug, Clone, Copy)]
pub struct ForecastInput<'a> {
    pub history: HistoryView<'a>,
    pub k: usize,
    pub features: &'a ForecastFeatureRow,
}

/// Anything that maps (input, lookahead) to a flow forecast.
pub trait Member {
    fn predict(&self, input: &ForecastInput<'_>, j: usize) -> Result<f64, ForecastError>;
}

impl FittedModel {
    pub fn id(&self) -> ModelId {
        self.id
    }

    /// Persistence needs no training data.
    pub fn persistence(period: usize) -> Self {
        Self { id: ModelId::Persistence, body: Body::Persistence { period } }
    }

    /// Lookaheads with a trained model (all lookaheads for persistence and
    /// seasonal-Fourier).
    pub fn is_fitted_for(&self, j: usize) -> bool {
        match &self.body {
            Body::Persistence { .. } | Body::SeasonalFourier(_) => true,
            Body::Linear(v) => v.get(j).map_or(false, Option::is_some),
            Body::RandomForest(v) => v.get(j).map_or(false, Option::is_some),
            Body::GradientBoosting(v) => v.get(j).map_or(false, Option::is_some),
        }
    }
}

/// Fits `id` on `table` for the given lookaheads (direct multi-horizon).
pub fn fit(id: ModelId, table: &TrainingTable, horizons: &[usize], opts: &ModelOptions) -> Result<FittedModel, ForecastError> {
    if table.rows.is_empty() {
        return Err(ForecastError::EmptyTrainingSet);
    }
    let max_j = horizons.iter().copied().max().unwrap_or(0);
    let period = (86_400 / table.step.num_seconds().max(1)) as usize;
    let body = match id {
        ModelId::Persistence => Body::Persistence { period },
        ModelId::SeasonalFourier => {
            let times: Vec<f64> =
                (0..table.flows.len()).map(|i| local_hours(&(table.start + table.step * i as i32))).collect();
            Body::SeasonalFourier(FourierModel::fit(&times, &table.flows, opts.daily_pairs, opts.weekly_pairs)?)
        }
        ModelId::Linear => {
            // Rows with a target at every requested lookahead share one design.
            let usable: Vec<usize> =
                (0..table.rows.len()).filter(|&r| table.origins[r] + max_j < table.flows.len()).collect();
            if usable.is_empty() {
                return Err(ForecastError::EmptyTrainingSet);
            }
            let refs: Vec<&[f64; N_FEATURES]> = usable.iter().map(|&r| &table.rows[r]).collect();
            let design = LinearDesign::new(&refs)?;
            let mut coefs = vec![None; max_j + 1];
            for &j in horizons {
                let y: Vec<f64> = usable.iter().map(|&r| table.flows[table.origins[r] + j]).collect();
                coefs[j] = Some(design.coefficients(&y));
            }
            Body::Linear(coefs)
        }
        ModelId::RandomForest | ModelId::GradientBoosting => {
            let binned = BinnedFeatures::new(&table.rows);
            let mut forests = vec![None; max_j + 1];
            let mut boosted = vec![None; max_j + 1];
            for &j in horizons {
                let (subset, y_sub) = table.targets(j);
                if subset.is_empty() {
                    return Err(ForecastError::EmptyTrainingSet);
                }
                let mut y = vec![0.0; table.rows.len()];
                for (&r, &v) in subset.iter().zip(&y_sub) {
                    y[r] = v;
                }
                let seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(j as u64);
                if id == ModelId::RandomForest {
                    forests[j] = Some(RandomForest::fit(&binned, &y, &subset, &opts.forest, seed));
                } else {
                    boosted[j] = Some(GradientBoosting::fit(&binned, &y, &subset, &opts.boosting, seed));
                }
            }
            if id == ModelId::RandomForest {
                Body::RandomForest(forests)
            } else {
                Body::GradientBoosting(boosted)
            }
        }
    };
    Ok(FittedModel { id, body })
}

impl Member for FittedModel {
    fn predict(&self, input: &ForecastInput<'_>, j: usize) -> Result<f64, ForecastError> {
        let x = input.features.to_array();
        let raw = match &self.body {
            Body::Persistence { period } => {
                let target = input.k + j;
                if target < *period {
                    return Err(ForecastError::InsufficientHistory { needed: period - j + 1, available: input.k + 1 });
                }
                let src = target - period;
                if src > input.k || src >= input.history.len() {
                    return Err(ForecastError::UnfittedModel(j));
                }
                input.history.mdot[src]
            }
            Body::SeasonalFourier(m) => m.predict_at(local_hours(&input.history.time_at(input.k + j))),
            Body::Linear(v) => linear_predict(v.get(j).and_then(|b| b.as_ref()).ok_or(ForecastError::UnfittedModel(j))?, &x),
            Body::RandomForest(v) => v.get(j).and_then(|m| m.as_ref()).ok_or(ForecastError::UnfittedModel(j))?.predict(&x),
            Body::GradientBoosting(v) => v.get(j).and_then(|m| m.as_ref()).ok_or(ForecastError::UnfittedModel(j))?.predict(&x),
        };
        Ok(raw.max(0.0))
    }
}

/// Flow forecast for lookaheads 1..=len from origin `origin_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawForecast {
    pub origin_k: usize,
    /// `values[j - 1]` is the forecast for lookahead `j`, kg/min.
    pub values: Vec<f64>,
}

impl DrawForecast {
    pub fn zeros(origin_k: usize, horizon: usize) -> Self {
        Self { origin_k, values: vec![0.0; horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    /// Forecast at lookahead `j ≥ 1`.
    pub fn at(&self, j: usize) -> f64 {
        self.values[j - 1]
    }
}

/// Full forecast from a single member.
pub fn forecast_with(member: &dyn Member, input: &ForecastInput<'_>, horizon: usize) -> Result<DrawForecast, ForecastError> {
    let values = (1..=horizon).map(|j| member.predict(input, j)).collect::<Result<Vec<_>, _>>()?;
    Ok(DrawForecast { origin_k: input.k, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Lookaheads below `j1` use the short member.
    pub j1: usize,
    /// Lookaheads in `[j1, j2)` use the medium member; the rest use the long member.
    pub j2: usize,
    pub horizon: usize,
    pub short_model: ModelId,
    pub medium_model: ModelId,
    pub long_model: ModelId,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            j1: 5,
            j2: 101,
            horizon: HORIZON,
            short_model: ModelId::RandomForest,
            medium_model: ModelId::SeasonalFourier,
            long_model: ModelId::Persistence,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if !(1 <= self.j1 && self.j1 < self.j2 && self.j2 <= self.horizon) {
            return Err(ForecastError::InvalidConfig("require 1 ≤ J1 < J2 ≤ J".into()));
        }
        Ok(())
    }

    /// Which member serves lookahead `j`: 0 short, 1 medium, 2 long.
    pub fn member_for(&self, j: usize) -> usize {
        if j < self.j1 {
            0
        } else if j < self.j2 {
            1
        } else {
            2
        }
    }

    fn lookaheads(&self, member: usize) -> Vec<usize> {
        (1..=self.horizon).filter(|&j| self.member_for(j) == member).collect()
    }
}

/// Piecewise assembly of three members by lookahead.
pub fn ensemble_forecast(
    cfg: &EnsembleConfig,
    members: [&dyn Member; 3],
    input: &ForecastInput<'_>,
) -> Result<DrawForecast, ForecastError> {
    cfg.validate()?;
    let values = (1..=cfg.horizon)
        .map(|j| members[cfg.member_for(j)].predict(input, j))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DrawForecast { origin_k: input.k, values })
}

/// A fitted three-member ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub config: EnsembleConfig,
    pub options: ModelOptions,
    pub short: FittedModel,
    pub medium: FittedModel,
    pub long: FittedModel,
}

impl Ensemble {
    /// Trains each member only on the lookaheads it serves.
    pub fn fit(config: EnsembleConfig, options: ModelOptions, history: &HistoryView<'_>) -> Result<Self, ForecastError> {
        config.validate()?;
        let table = TrainingTable::build(history, options.tau)?;
        let ids = [config.short_model, config.medium_model, config.long_model];
        let mut fitted = Vec::with_capacity(3);
        for (m, id) in ids.into_iter().enumerate() {
            fitted.push(fit(id, &table, &config.lookaheads(m), &options)?);
        }
        let long = fitted.pop().unwrap();
        let medium = fitted.pop().unwrap();
        let short = fitted.pop().unwrap();
        Ok(Self { config, options, short, medium, long })
    }

    pub fn forecast(&self, history: &HistoryView<'_>, k: usize) -> Result<DrawForecast, ForecastError> {
        let features = build_features(history, k, self.options.tau)?;
        let input = ForecastInput { history: *history, k, features: &features };
        ensemble_forecast(&self.config, [&self.short, &self.medium, &self.long], &input)
    }
}

/// Anything that can produce a draw forecast from history at origin `k`.
pub trait DrawForecaster {
    fn forecast(&self, history: &HistoryView<'_>, k: usize) -> Result<DrawForecast, ForecastError>;
}

impl DrawForecaster for Ensemble {
    fn forecast(&self, history: &HistoryView<'_>, k: usize) -> Result<DrawForecast, ForecastError> {
        Ensemble::forecast(self, history, k)
    }
}
