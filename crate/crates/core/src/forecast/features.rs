use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Duration, FixedOffset, Timelike};
use serde::{Deserialize, Serialize};

use super::ForecastError;
use crate::timeseries::TimeSeries;

/// Samples in the one-hour look-back used by the draw-count feature.
pub const PAST_HOUR_STEPS: usize = 12;
/// Cap on the steps-since-draw feature.
pub const STEPS_SINCE_CAP: usize = 288;
/// Number of entries in [`ForecastFeatureRow::to_array`].
pub const N_FEATURES: usize = 9;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "sin_h",
    "cos_h",
    "sin_w",
    "cos_w",
    "recent_draw_count",
    "steps_since_draw",
    "mdot_now",
    "t_u_now",
    "t_l_now",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastFeatureRow {
    pub sin_h: f64,
    pub cos_h: f64,
    pub sin_w: f64,
    pub cos_w: f64,
    pub recent_draw_count: u32,
    pub steps_since_draw: u32,
    pub mdot_now: f64,
    pub t_u_now: f64,
    pub t_l_now: f64,
}

impl ForecastFeatureRow {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.sin_h,
            self.cos_h,
            self.sin_w,
            self.cos_w,
            self.recent_draw_count as f64,
            self.steps_since_draw as f64,
            self.mdot_now,
            self.t_u_now,
            self.t_l_now,
        ]
    }
}

/// Flow and node-temperature history sharing one sample grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryBundle {
    pub mdot: TimeSeries,
    pub t_u: TimeSeries,
    pub t_l: TimeSeries,
}

impl HistoryBundle {
    pub fn new(mdot: TimeSeries, t_u: TimeSeries, t_l: TimeSeries) -> Result<Self, ForecastError> {
        for ts in [&t_u, &t_l] {
            if ts.len() != mdot.len() || ts.start() != mdot.start() || ts.step() != mdot.step() {
                return Err(ForecastError::Alignment("history series are not aligned".into()));
            }
        }
        Ok(Self { mdot, t_u, t_l })
    }

    pub fn view(&self) -> HistoryView<'_> {
        HistoryView {
            start: self.mdot.start(),
            step: self.mdot.step(),
            mdot: self.mdot.values(),
            t_u: self.t_u.values(),
            t_l: self.t_l.values(),
        }
    }
}

/// Borrowed history; sample `i` is stamped `start + i·step`.
#[derive(Debug, Clone, Copy)]
pub struct HistoryView<'a> {
    pub start: DateTime<FixedOffset>,
    pub step: Duration,
    pub mdot: &'a [f64],
    pub t_u: &'a [f64],
    pub t_l: &'a [f64],
}

impl<'a> HistoryView<'a> {
    pub fn len(&self) -> usize {
        self.mdot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mdot.is_empty()
    }

    pub fn time_at(&self, k: usize) -> DateTime<FixedOffset> {
        self.start + self.step * k as i32
    }

    /// Restricts the view to samples `[0, end)`.
    pub fn truncate(&self, end: usize) -> Self {
        Self { mdot: &self.mdot[..end], t_u: &self.t_u[..end], t_l: &self.t_l[..end], ..*self }
    }

    /// Samples per 24 hours.
    pub fn steps_per_day(&self) -> usize {
        (86_400 / self.step.num_seconds().max(1)) as usize
    }
}

/// Clock encodings of a timestamp (local hour and weekday, Monday = 0).
pub fn clock_encoding(t: &DateTime<FixedOffset>) -> (f64, f64, f64, f64) {
    let hour = t.hour() as f64;
    let weekday = t.weekday().num_days_from_monday() as f64;
    let (sh, ch) = (2.0 * PI * hour / 24.0).sin_cos();
    let (sw, cw) = (2.0 * PI * weekday / 7.0).sin_cos();
    (sh, ch, sw, cw)
}

/// Features describing the state at sample `k` (the most recent sample).
pub fn build_features(history: &HistoryView<'_>, k: usize, tau: f64) -> Result<ForecastFeatureRow, ForecastError> {
    if k + 1 < PAST_HOUR_STEPS || k >= history.len() {
        return Err(ForecastError::InsufficientHistory { needed: PAST_HOUR_STEPS, available: k.min(history.len()) + 1 });
    }
    let (sin_h, cos_h, sin_w, cos_w) = clock_encoding(&history.time_at(k));
    let window = &history.mdot[k + 1 - PAST_HOUR_STEPS..=k];
    let recent_draw_count = window.iter().filter(|&&m| m >= tau).count() as u32;
    let lookback_start = k.saturating_sub(STEPS_SINCE_CAP);
    let steps_since_draw = history.mdot[lookback_start..=k]
        .iter()
        .rposition(|&m| m >= tau)
        .map(|p| (1 + k - (lookback_start + p)).min(STEPS_SINCE_CAP))
        .unwrap_or(STEPS_SINCE_CAP) as u32;
    Ok(ForecastFeatureRow {
        sin_h,
        cos_h,
        sin_w,
        cos_w,
        recent_draw_count,
        steps_since_draw,
        mdot_now: history.mdot[k],
        t_u_now: history.t_u[k],
        t_l_now: history.t_l[k],
    })
}

/// Feature rows for every origin from the first admissible sample onwards.
#[derive(Debug, Clone)]
pub struct TrainingTable {
    /// Origin sample index of each row.
    pub origins: Vec<usize>,
    pub rows: Vec<[f64; N_FEATURES]>,
    /// The full flow history; row `r` at lookahead `j` targets `flows[origins[r] + j]`.
    pub flows: Vec<f64>,
    pub start: DateTime<FixedOffset>,
    pub step: Duration,
}

impl TrainingTable {
    pub fn build(history: &HistoryView<'_>, tau: f64) -> Result<Self, ForecastError> {
        if history.len() < PAST_HOUR_STEPS + 1 {
            return Err(ForecastError::EmptyTrainingSet);
        }
        let mut origins = Vec::new();
        let mut rows = Vec::new();
        for k in PAST_HOUR_STEPS - 1..history.len() {
            rows.push(build_features(history, k, tau)?.to_array());
            origins.push(k);
        }
        Ok(Self { origins, rows, flows: history.mdot.to_vec(), start: history.start, step: history.step })
    }

    /// Row indices and targets available for lookahead `j`.
    pub fn targets(&self, j: usize) -> (Vec<usize>, Vec<f64>) {
        let mut idx = Vec::new();
        let mut y = Vec::new();
        for (r, &k) in self.origins.iter().enumerate() {
            if k + j < self.flows.len() {
                idx.push(r);
                y.push(self.flows[k + j]);
            }
        }
        (idx, y)
    }
}
