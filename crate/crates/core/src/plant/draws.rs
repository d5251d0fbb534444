//! Seeded synthetic hot-water draw schedules.

use chrono::{DateTime, FixedOffset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::timeseries::{control_step, TimeSeries, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Two 50 L showers at 07:00 and 08:30 every day, plus background use.
    ConsecutiveShowers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawScheduleSpec {
    pub seed: u64,
    pub start: DateTime<FixedOffset>,
    /// Probabilities of 0, 1, 2, 3 showers in a day.
    pub shower_count_probs: [f64; 4],
    pub shower_volume_l: (f64, f64),
    pub shower_rate_lpm: f64,
    pub morning_peak_hour: f64,
    pub evening_peak_hour: f64,
    pub morning_share: f64,
    pub peak_spread_hours: f64,
    pub appliance_prob: f64,
    pub appliance_volume_l: (f64, f64),
    pub appliance_rate_lpm: f64,
    pub small_per_day: (usize, usize),
    pub small_volume_l: (f64, f64),
    pub small_rate_lpm: f64,
    /// Days above this band are redrawn; days below it get extra small draws.
    pub daily_band_l: (f64, f64),
    pub preset: Option<Preset>,
}

impl DrawScheduleSpec {
    pub fn new(start: DateTime<FixedOffset>, seed: u64) -> Self {
        Self {
            seed,
            start,
            shower_count_probs: [0.0, 0.72, 0.25, 0.03],
            shower_volume_l: (30.0, 60.0),
            shower_rate_lpm: 8.0,
            morning_peak_hour: 7.0,
            evening_peak_hour: 20.5,
            morning_share: 0.6,
            peak_spread_hours: 1.0,
            appliance_prob: 0.5,
            appliance_volume_l: (15.0, 30.0),
            appliance_rate_lpm: 6.0,
            small_per_day: (10, 20),
            small_volume_l: (0.5, 5.0),
            small_rate_lpm: 3.0,
            daily_band_l: (100.0, 290.0),
            preset: None,
        }
    }

    pub fn consecutive_showers(start: DateTime<FixedOffset>, seed: u64) -> Self {
        Self { preset: Some(Preset::ConsecutiveShowers), ..Self::new(start, seed) }
    }
}

/// One draw at constant flow, timed in minutes from the schedule start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawEvent {
    pub start_minute: f64,
    pub volume_l: f64,
    pub rate_lpm: f64,
}

impl DrawEvent {
    pub fn end_minute(&self) -> f64 {
        self.start_minute + self.volume_l / self.rate_lpm
    }
}

fn day_events(spec: &DrawScheduleSpec, rng: &mut ChaCha8Rng) -> Vec<DrawEvent> {
    let mut events = Vec::new();
    let spread = Normal::new(0.0, spec.peak_spread_hours).unwrap();
    let mut showers: Vec<DrawEvent> = Vec::new();
    match spec.preset {
        Some(Preset::ConsecutiveShowers) => {
            for hour in [7.0, 8.5] {
                showers.push(DrawEvent { start_minute: hour * 60.0, volume_l: 50.0, rate_lpm: spec.shower_rate_lpm });
            }
        }
        None => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let count = spec.shower_count_probs.iter().position(|p| {
                acc += p;
                u < acc
            });
            for _ in 0..count.unwrap_or(3) {
                let center = if rng.gen_bool(spec.morning_share) { spec.morning_peak_hour } else { spec.evening_peak_hour };
                let hour = (center + spread.sample(rng)).clamp(5.0, 23.0);
                let volume = rng.gen_range(spec.shower_volume_l.0..=spec.shower_volume_l.1);
                showers.push(DrawEvent { start_minute: hour * 60.0, volume_l: volume, rate_lpm: spec.shower_rate_lpm });
            }
            // Back-to-back showers do not overlap.
            showers.sort_by(|a, b| a.start_minute.total_cmp(&b.start_minute));
            for i in 1..showers.len() {
                let earliest = showers[i - 1].end_minute() + 10.0;
                if showers[i].start_minute < earliest {
                    showers[i].start_minute = earliest;
                }
            }
        }
    }
    events.extend(showers.into_iter().filter(|e| e.end_minute() <= 1440.0));
    if rng.gen_bool(spec.appliance_prob) {
        let hour = (spec.evening_peak_hour - 1.5 + spread.sample(rng)).clamp(6.0, 22.5);
        let volume = rng.gen_range(spec.appliance_volume_l.0..=spec.appliance_volume_l.1);
        events.push(DrawEvent { start_minute: hour * 60.0, volume_l: volume, rate_lpm: spec.appliance_rate_lpm });
    }
    let n_small = rng.gen_range(spec.small_per_day.0..=spec.small_per_day.1);
    for _ in 0..n_small {
        let hour = rng.gen_range(6.0..23.0);
        let volume = rng.gen_range(spec.small_volume_l.0..=spec.small_volume_l.1);
        events.push(DrawEvent { start_minute: hour * 60.0, volume_l: volume, rate_lpm: spec.small_rate_lpm });
    }
    events
}

/// Draw events for `days` days, sorted by start time.
pub fn generate_events(spec: &DrawScheduleSpec, days: usize) -> Vec<DrawEvent> {
    let mut all = Vec::new();
    for day in 0..days {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(day as u64));
        let mut events = day_events(spec, &mut rng);
        let total = |ev: &[DrawEvent]| ev.iter().map(|e| e.volume_l).sum::<f64>();
        for _ in 0..100 {
            if total(&events) <= spec.daily_band_l.1 {
                break;
            }
            events = day_events(spec, &mut rng);
        }
        // Light days are topped up with small draws rather than redrawn,
        // which would bias the mean upward.
        while total(&events) < spec.daily_band_l.0 {
            let hour = rng.gen_range(6.0..23.0);
            let volume = rng.gen_range(spec.small_volume_l.0..=spec.small_volume_l.1);
            events.push(DrawEvent { start_minute: hour * 60.0, volume_l: volume, rate_lpm: spec.small_rate_lpm });
        }
        all.extend(events.into_iter().map(|e| DrawEvent { start_minute: e.start_minute + 1440.0 * day as f64, ..e }));
    }
    all.sort_by(|a, b| a.start_minute.total_cmp(&b.start_minute));
    all
}

/// Bins events into 5-minute mean flows (kg/min, 1 kg per litre).
pub fn bin_events(events: &[DrawEvent], start: DateTime<FixedOffset>, days: usize) -> TimeSeries {
    let step_min = control_step().num_minutes() as f64;
    let n = days * (1440.0 / step_min) as usize;
    let mut flows = vec![0.0; n];
    for e in events {
        let (a, b) = (e.start_minute, e.end_minute().min(n as f64 * step_min));
        let mut bin = (a / step_min).floor() as usize;
        while bin < n && (bin as f64) * step_min < b {
            let lo = a.max(bin as f64 * step_min);
            let hi = b.min((bin + 1) as f64 * step_min);
            if hi > lo {
                flows[bin] += e.rate_lpm * (hi - lo) / step_min;
            }
            bin += 1;
        }
    }
    TimeSeries::new(start, control_step(), flows, Unit::KgPerMin).expect("binned flows are finite")
}

pub fn generate_draws(spec: &DrawScheduleSpec, days: usize) -> TimeSeries {
    bin_events(&generate_events(spec, days), spec.start, days)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::parse_timestamp;

    fn start() -> DateTime<FixedOffset> {
        parse_timestamp("2024-06-01T00:00:00-04:00").unwrap()
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = generate_draws(&DrawScheduleSpec::new(start(), 3), 10);
        let b = generate_draws(&DrawScheduleSpec::new(start(), 3), 10);
        let c = generate_draws(&DrawScheduleSpec::new(start(), 4), 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn binning_conserves_volume() {
        let events = generate_events(&DrawScheduleSpec::new(start(), 9), 30);
        let ts = bin_events(&events, start(), 30);
        let total: f64 = events.iter().map(|e| e.volume_l).sum();
        assert!((ts.integral_minutes() - total).abs() < 1e-9 * total);
    }

    #[test]
    fn month_totals_in_band() {
        let ts = generate_draws(&DrawScheduleSpec::new(start(), 1), 30);
        let daily: Vec<f64> = ts.values().chunks(288).map(|d| d.iter().sum::<f64>() * 5.0).collect();
        assert!(daily.iter().all(|v| (100.0..=290.0).contains(v)), "{daily:?}");
        let month: f64 = daily.iter().sum();
        assert!((3300.0..4100.0).contains(&month), "monthly volume {month}");
    }

    #[test]
    fn some_day_has_two_large_draws_within_four_hours() {
        let events = generate_events(&DrawScheduleSpec::new(start(), 1), 30);
        let large: Vec<&DrawEvent> = events.iter().filter(|e| e.volume_l > 18.9).collect();
        assert!(large.windows(2).any(|w| w[1].start_minute - w[0].start_minute <= 240.0));
    }

    #[test]
    fn consecutive_shower_preset() {
        let events = generate_events(&DrawScheduleSpec::consecutive_showers(start(), 2), 1);
        let showers: Vec<&DrawEvent> = events.iter().filter(|e| e.volume_l == 50.0).collect();
        assert_eq!(showers.len(), 2);
        assert_eq!(showers[0].start_minute, 420.0);
        assert_eq!(showers[1].start_minute, 510.0);
    }
}
