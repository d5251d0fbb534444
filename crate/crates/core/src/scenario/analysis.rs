//! Summary statistics over scenario results.

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, Timelike};
use serde::{Deserialize, Serialize};

use super::{ScenarioError, ScenarioResult, TraceRow};

pub const WINDOW_HOURS: f64 = 4.0;
/// Draw events above this volume count as large (5 US gallons).
pub const LARGE_DRAW_L: f64 = 18.9;

/// A comfort window opened by a large draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortEvent {
    pub window_start: DateTime<FixedOffset>,
    pub window_end: DateTime<FixedOffset>,
    pub large_draws: usize,
    /// Lowest outlet temperature seen while water was flowing in the window.
    pub min_outlet: f64,
    pub volume_l: f64,
}

struct DrawSegment {
    start: usize,
    end: usize,
    volume_l: f64,
    min_outlet: f64,
}

fn segments(traces: &[TraceRow]) -> Vec<DrawSegment> {
    let mut out: Vec<DrawSegment> = Vec::new();
    let mut open = false;
    for (i, r) in traces.iter().enumerate() {
        if r.draw_kg > 0.0 {
            if open {
                let s = out.last_mut().unwrap();
                s.end = i + 1;
                s.volume_l += r.draw_kg;
                s.min_outlet = s.min_outlet.min(r.outlet);
            } else {
                out.push(DrawSegment { start: i, end: i + 1, volume_l: r.draw_kg, min_outlet: r.outlet });
            }
            open = true;
        } else {
            open = false;
        }
    }
    out
}

/// Groups draws into windows of `window_hours`, each anchored at a large
/// draw that no earlier window covers. Draws are contiguous runs of
/// nonzero flow on the trace grid.
pub fn comfort_windows(traces: &[TraceRow], window_hours: f64, large_draw_l: f64) -> Vec<ComfortEvent> {
    let segs = segments(traces);
    let window = Duration::milliseconds((window_hours * 3.6e6).round() as i64);
    let mut events = Vec::new();
    let mut covered_until: Option<DateTime<FixedOffset>> = None;
    for (i, seg) in segs.iter().enumerate() {
        let t0 = traces[seg.start].time;
        if seg.volume_l <= large_draw_l || covered_until.is_some_and(|c| t0 < c) {
            continue;
        }
        let end = t0 + window;
        let mut ev = ComfortEvent { window_start: t0, window_end: end, large_draws: 0, min_outlet: f64::INFINITY, volume_l: 0.0 };
        for s in segs[i..].iter().take_while(|s| traces[s.start].time < end) {
            if s.volume_l > large_draw_l {
                ev.large_draws += 1;
            }
            ev.volume_l += s.volume_l;
            // Only the flowing steps inside the window count.
            for r in &traces[s.start..s.end] {
                if r.time < end {
                    ev.min_outlet = ev.min_outlet.min(r.outlet);
                }
            }
        }
        covered_until = Some(end);
        events.push(ev);
    }
    events
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyTotals {
    pub date: NaiveDate,
    pub volume_l: f64,
    pub energy_kwh: f64,
    pub cost: f64,
}

/// Per local calendar day totals.
pub fn daily_totals(result: &ScenarioResult) -> Vec<DailyTotals> {
    let mut out: Vec<DailyTotals> = Vec::new();
    for r in &result.traces {
        let date = r.time.date_naive();
        match out.last_mut() {
            Some(d) if d.date == date => {
                d.volume_l += r.draw_kg;
                d.energy_kwh += r.energy_kwh();
                d.cost += r.cost;
            }
            _ => out.push(DailyTotals { date, volume_l: r.draw_kg, energy_kwh: r.energy_kwh(), cost: r.cost }),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

impl Regression {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares of y on x. A constant y has R² = 0.
pub fn regress_daily(x: &[f64], y: &[f64]) -> Result<Regression, ScenarioError> {
    if x.len() != y.len() {
        return Err(ScenarioError::Invalid(format!("{} x values but {} y values", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(ScenarioError::TooFewDays { needed: 3, got: n });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 1e-12 * (1.0 + mx * mx) {
        return Err(ScenarioError::DegenerateData);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 0.0 };
    Ok(Regression { slope, intercept, r2, n })
}

/// Daily energy against daily draw volume.
pub fn regress_energy_on_volume(result: &ScenarioResult) -> Result<Regression, ScenarioError> {
    let days = daily_totals(result);
    let x: Vec<f64> = days.iter().map(|d| d.volume_l).collect();
    let y: Vec<f64> = days.iter().map(|d| d.energy_kwh).collect();
    regress_daily(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub candidate: String,
    pub baseline: String,
    /// Savings of the candidate relative to the baseline, percent.
    pub energy_savings_pct: f64,
    pub cost_savings_pct: f64,
    pub intensity_wh_per_l: (f64, f64),
    pub cost_per_l: (f64, f64),
    pub energy_kwh: (f64, f64),
    pub cost: (f64, f64),
}

fn savings_pct(candidate: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        100.0 * (baseline - candidate) / baseline
    }
}

/// Savings of `candidate` relative to `baseline`. Pairs are
/// (candidate, baseline). Both runs must cover the same span and draws.
pub fn compare(candidate: &ScenarioResult, baseline: &ScenarioResult) -> Result<Comparison, ScenarioError> {
    let same_draws = candidate.traces.len() == baseline.traces.len()
        && candidate.traces.iter().zip(&baseline.traces).all(|(a, b)| a.time == b.time && a.draw_kg == b.draw_kg);
    if candidate.start != baseline.start || candidate.days != baseline.days || !same_draws {
        return Err(ScenarioError::MismatchedSpan);
    }
    Ok(Comparison {
        candidate: candidate.name.clone(),
        baseline: baseline.name.clone(),
        energy_savings_pct: savings_pct(candidate.energy_kwh, baseline.energy_kwh),
        cost_savings_pct: savings_pct(candidate.cost_per_l(), baseline.cost_per_l()),
        intensity_wh_per_l: (candidate.intensity_wh_per_l(), baseline.intensity_wh_per_l()),
        cost_per_l: (candidate.cost_per_l(), baseline.cost_per_l()),
        energy_kwh: (candidate.energy_kwh, baseline.energy_kwh),
        cost: (candidate.cost, baseline.cost),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavingsRow {
    pub price: f64,
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySavings {
    pub baseline_fit: Regression,
    pub candidate_fit: Regression,
    pub rows: Vec<SavingsRow>,
}

/// Monthly dollar savings at flat electricity rates, from the daily
/// energy-volume fits of both runs. The mean uses the mean daily volume;
/// the range spans the lightest and heaviest observed days.
pub fn monthly_savings(
    candidate: &ScenarioResult,
    baseline: &ScenarioResult,
    prices: &[f64],
) -> Result<MonthlySavings, ScenarioError> {
    let candidate_fit = regress_energy_on_volume(candidate)?;
    let baseline_fit = regress_energy_on_volume(baseline)?;
    let volumes: Vec<f64> = daily_totals(baseline).iter().map(|d| d.volume_l).collect();
    let mean_v = volumes.iter().sum::<f64>() / volumes.len() as f64;
    let min_v = volumes.iter().copied().fold(f64::INFINITY, f64::min);
    let max_v = volumes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kwh_month = |v: f64| 30.0 * (baseline_fit.predict(v) - candidate_fit.predict(v));
    let rows = prices
        .iter()
        .map(|&price| {
            let (a, b) = (price * kwh_month(min_v), price * kwh_month(max_v));
            SavingsRow { price, mean: price * kwh_month(mean_v), low: a.min(b), high: a.max(b) }
        })
        .collect();
    Ok(MonthlySavings { baseline_fit, candidate_fit, rows })
}

/// Simple payback in months.
pub fn payback_months(extra_upfront: f64, monthly_savings: f64) -> Result<f64, ScenarioError> {
    if monthly_savings <= 0.0 || !monthly_savings.is_finite() {
        return Err(ScenarioError::NonpositiveSavings);
    }
    Ok(extra_upfront / monthly_savings)
}

/// Heat-pump electrical energy in local hours `[from, to)`.
pub fn energy_in_hours(result: &ScenarioResult, from: u32, to: u32) -> f64 {
    result.traces.iter().filter(|r| (from..to).contains(&r.time.hour())).map(|r| r.hp_kwh).sum()
}

/// Pearson correlation between clock-hour energy and the hour's mean price.
pub fn hourly_energy_price_correlation(result: &ScenarioResult) -> f64 {
    let mut hours: Vec<(f64, f64, usize)> = Vec::new();
    let mut last: Option<(NaiveDate, u32)> = None;
    for r in &result.traces {
        let key = (r.time.date_naive(), r.time.hour());
        if last != Some(key) {
            hours.push((0.0, 0.0, 0));
            last = Some(key);
        }
        let h = hours.last_mut().unwrap();
        h.0 += r.energy_kwh();
        h.1 += r.price;
        h.2 += 1;
    }
    let e: Vec<f64> = hours.iter().map(|h| h.0).collect();
    let p: Vec<f64> = hours.iter().map(|h| h.1 / h.2 as f64).collect();
    pearson(&e, &p)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
