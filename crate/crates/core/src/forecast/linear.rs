//! Least-squares forecasters: per-horizon linear regression on the feature
//! row, and a trend plus Fourier-seasonality curve in wall-clock time.

use std::f64::consts::PI;

use chrono::{DateTime, FixedOffset, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::N_FEATURES;
use super::ForecastError;

fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, ForecastError> {
    x.clone()
        .svd(true, true)
        .solve(y, 1e-10)
        .map_err(|e| ForecastError::Numerical(e.to_string()))
}

/// Pseudo-inverse of the design matrix [1, features], shared by every horizon.
pub struct LinearDesign {
    pinv: DMatrix<f64>,
}

impl LinearDesign {
    pub fn new(rows: &[&[f64; N_FEATURES]]) -> Result<Self, ForecastError> {
        if rows.is_empty() {
            return Err(ForecastError::EmptyTrainingSet);
        }
        let x = DMatrix::from_fn(rows.len(), N_FEATURES + 1, |r, c| if c == 0 { 1.0 } else { rows[r][c - 1] });
        let pinv = x.pseudo_inverse(1e-10).map_err(|e| ForecastError::Numerical(e.to_string()))?;
        Ok(Self { pinv })
    }

    pub fn coefficients(&self, y: &[f64]) -> [f64; N_FEATURES + 1] {
        let beta = &self.pinv * DVector::from_column_slice(y);
        let mut out = [0.0; N_FEATURES + 1];
        out.copy_from_slice(beta.as_slice());
        out
    }
}

pub fn linear_predict(beta: &[f64; N_FEATURES + 1], x: &[f64; N_FEATURES]) -> f64 {
    beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// Reference Monday used to phase the daily and weekly harmonics.
fn epoch() -> chrono::NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

/// Local wall-clock hours since the reference Monday.
pub fn local_hours(t: &DateTime<FixedOffset>) -> f64 {
    (t.naive_local() - epoch()).num_seconds() as f64 / 3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierModel {
    pub daily_pairs: usize,
    pub weekly_pairs: usize,
    /// Trend is linear in (t − t_center) / t_scale.
    pub t_center: f64,
    pub t_scale: f64,
    /// [intercept, trend, daily sin/cos pairs, weekly sin/cos pairs]
    pub coefficients: Vec<f64>,
}

impl FourierModel {
    fn regressors(&self, t_hours: f64) -> Vec<f64> {
        let mut r = Vec::with_capacity(2 + 2 * (self.daily_pairs + self.weekly_pairs));
        r.push(1.0);
        r.push((t_hours - self.t_center) / self.t_scale);
        for (pairs, period) in [(self.daily_pairs, 24.0), (self.weekly_pairs, 168.0)] {
            for n in 1..=pairs {
                let (s, c) = (2.0 * PI * n as f64 * t_hours / period).sin_cos();
                r.push(s);
                r.push(c);
            }
        }
        r
    }

    pub fn fit(times: &[f64], y: &[f64], daily_pairs: usize, weekly_pairs: usize) -> Result<Self, ForecastError> {
        if times.is_empty() || times.len() != y.len() {
            return Err(ForecastError::EmptyTrainingSet);
        }
        let lo = times.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut model = Self {
            daily_pairs,
            weekly_pairs,
            t_center: 0.5 * (lo + hi),
            t_scale: (0.5 * (hi - lo)).max(1.0),
            coefficients: Vec::new(),
        };
        let width = 2 + 2 * (daily_pairs + weekly_pairs);
        let mut x = DMatrix::zeros(times.len(), width);
        for (r, &t) in times.iter().enumerate() {
            for (c, v) in model.regressors(t).into_iter().enumerate() {
                x[(r, c)] = v;
            }
        }
        model.coefficients = lstsq(&x, &DVector::from_column_slice(y))?.as_slice().to_vec();
        Ok(model)
    }

    pub fn predict_at(&self, t_hours: f64) -> f64 {
        self.regressors(t_hours).iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_planted_daily_sinusoid() {
        // 30 days of 5-minute samples of 2 + sin(2π·hour/24).
        let times: Vec<f64> = (0..30 * 288).map(|i| 17.0 * 24.0 + i as f64 / 12.0).collect();
        let y: Vec<f64> = times.iter().map(|t| 2.0 + (2.0 * PI * t / 24.0).sin()).collect();
        let m = FourierModel::fit(&times, &y, 6, 3).unwrap();
        let c = &m.coefficients;
        assert!((c[0] - 2.0).abs() < 1e-6);
        assert!(c[1].abs() < 1e-6);
        let amplitude = (c[2] * c[2] + c[3] * c[3]).sqrt();
        assert!((amplitude - 1.0).abs() < 1e-6, "amplitude {amplitude}");
        assert!(c[4..].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn linear_recovers_exact_plane() {
        let rows: Vec<[f64; N_FEATURES]> = (0..50)
            .map(|i| {
                let mut r = [0.0; N_FEATURES];
                for (f, v) in r.iter_mut().enumerate() {
                    *v = ((i * (f + 3)) as f64 * 0.731).sin();
                }
                r
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 0.3 + 2.0 * r[0] - r[8]).collect();
        let refs: Vec<&[f64; N_FEATURES]> = rows.iter().collect();
        let beta = LinearDesign::new(&refs).unwrap().coefficients(&y);
        assert!((beta[0] - 0.3).abs() < 1e-9 && (beta[1] - 2.0).abs() < 1e-9 && (beta[9] + 1.0).abs() < 1e-9);
        assert!((linear_predict(&beta, &rows[7]) - y[7]).abs() < 1e-9);
    }
}
