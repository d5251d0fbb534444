use serde::{Deserialize, Serialize};

use super::{DrawForecast, ForecastError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Σ y·|y − ŷ| / N
    pub wmae: f64,
}

/// Error metrics over paired samples.
pub fn metrics(actual: &[f64], predicted: &[f64]) -> Result<Metrics, ForecastError> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(ForecastError::Alignment(format!(
            "{} actual values vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    let n = actual.len() as f64;
    let (mut abs, mut sq, mut w) = (0.0, 0.0, 0.0);
    for (&y, &p) in actual.iter().zip(predicted) {
        let e = (y - p).abs();
        abs += e;
        sq += e * e;
        w += y * e;
    }
    Ok(Metrics { mae: abs / n, rmse: (sq / n).sqrt(), wmae: w / n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: Metrics,
    /// Entry `j − 1` is the WMAE at lookahead `j`, averaged over origins.
    pub wmae_by_horizon: Vec<f64>,
}

/// Scores forecasts against the actual flow series they were issued on.
pub fn evaluate(actual: &[f64], forecasts: &[DrawForecast]) -> Result<Evaluation, ForecastError> {
    let horizon = forecasts.first().map(|f| f.horizon()).ok_or_else(|| ForecastError::Alignment("no forecasts".into()))?;
    let mut ys = Vec::with_capacity(forecasts.len() * horizon);
    let mut ps = Vec::with_capacity(forecasts.len() * horizon);
    let mut by_h = vec![0.0; horizon];
    for f in forecasts {
        if f.horizon() != horizon {
            return Err(ForecastError::Alignment("forecasts differ in horizon".into()));
        }
        if f.origin_k + horizon >= actual.len() {
            return Err(ForecastError::Alignment(format!("forecast from origin {} runs past the data", f.origin_k)));
        }
        for j in 1..=horizon {
            let y = actual[f.origin_k + j];
            let p = f.at(j);
            ys.push(y);
            ps.push(p);
            by_h[j - 1] += y * (y - p).abs();
        }
    }
    let n = forecasts.len() as f64;
    by_h.iter_mut().for_each(|v| *v /= n);
    Ok(Evaluation { overall: metrics(&ys, &ps)?, wmae_by_horizon: by_h })
}
