//! Train/test split evaluation of individual model families.

use serde::{Deserialize, Serialize};

use super::{build_features, evaluate, fit, forecast_with, Evaluation, ForecastError, ForecastInput, HistoryView, ModelId, ModelOptions, TrainingTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestOptions {
    pub horizon: usize,
    /// Steps between forecast origins in the test span.
    pub stride: usize,
    pub models: ModelOptions,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self { horizon: super::HORIZON, stride: 12, models: ModelOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRow {
    pub model: ModelId,
    pub origins: usize,
    pub evaluation: Evaluation,
}

/// Fits each model on samples before `split` and scores forecasts issued
/// from origins in `[split, len − horizon)`.
pub fn backtest(
    history: &HistoryView<'_>,
    split: usize,
    models: &[ModelId],
    opts: &BacktestOptions,
) -> Result<Vec<BacktestRow>, ForecastError> {
    if opts.horizon == 0 || opts.stride == 0 {
        return Err(ForecastError::InvalidConfig("horizon and stride must be positive".into()));
    }
    if split >= history.len() || split + opts.horizon >= history.len() {
        return Err(ForecastError::Alignment(format!(
            "split at {split} leaves no full horizon in {} samples",
            history.len()
        )));
    }
    let table = TrainingTable::build(&history.truncate(split), opts.models.tau)?;
    let lookaheads: Vec<usize> = (1..=opts.horizon).collect();
    let origins: Vec<usize> = (split..history.len() - opts.horizon).step_by(opts.stride).collect();
    let mut out = Vec::with_capacity(models.len());
    for &id in models {
        let model = fit(id, &table, &lookaheads, &opts.models)?;
        let mut forecasts = Vec::with_capacity(origins.len());
        for &k in &origins {
            let features = build_features(history, k, opts.models.tau)?;
            let input = ForecastInput { history: *history, k, features: &features };
            forecasts.push(forecast_with(&model, &input, opts.horizon)?);
        }
        out.push(BacktestRow { model: id, origins: origins.len(), evaluation: evaluate(history.mdot, &forecasts)? });
    }
    Ok(out)
}
