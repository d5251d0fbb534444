//! Electricity price models: flat, two-tier time-of-use and day-ahead hourly.

use std::io::Read;
use std::str::FromStr;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, TimeZone, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FLAT_RATE: f64 = 0.1241;
pub const TOU_PEAK_RATE: f64 = 0.251;
pub const TOU_OFFPEAK_RATE: f64 = 0.082;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TariffError {
    #[error("no hourly price for {0}")]
    MissingHourlyData(String),
    #[error("invalid tariff: {0}")]
    Invalid(String),
    #[error("cannot read hourly prices: {0}")]
    Parse(String),
}

/// Day-ahead hourly prices. Day `d` covers `start_date + d` in the given
/// offset; prices for a day become visible at `publish_hour` the day before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyPrices {
    pub start_date: NaiveDate,
    pub utc_offset_seconds: i32,
    pub prices: Vec<f64>,
    pub publish_hour: u32,
}

impl HourlyPrices {
    pub fn new(start_date: NaiveDate, offset: FixedOffset, prices: Vec<f64>) -> Result<Self, TariffError> {
        if prices.is_empty() || prices.len() % 24 != 0 {
            return Err(TariffError::Invalid("hourly prices must cover whole days".into()));
        }
        if prices.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(TariffError::Invalid("hourly prices must be finite and nonnegative".into()));
        }
        Ok(Self { start_date, utc_offset_seconds: offset.local_minus_utc(), prices, publish_hour: 15 })
    }

    pub fn days(&self) -> usize {
        self.prices.len() / 24
    }

    fn offset(&self) -> FixedOffset {
        FixedOffset::east_opt(self.utc_offset_seconds).expect("valid offset")
    }

    /// (day index, hour) of `t` in the price calendar.
    fn locate(&self, t: &DateTime<FixedOffset>) -> (i64, usize) {
        let local = t.with_timezone(&self.offset());
        ((local.date_naive() - self.start_date).num_days(), local.hour() as usize)
    }

    fn price(&self, day: i64, hour: usize) -> Option<f64> {
        if day < 0 || day as usize >= self.days() {
            return None;
        }
        Some(self.prices[day as usize * 24 + hour])
    }

    /// Last day whose prices are public at `now`, clipped to the data.
    fn last_published_day(&self, now: &DateTime<FixedOffset>) -> i64 {
        let (day, hour) = self.locate(now);
        let published = if hour as u32 >= self.publish_hour { day + 1 } else { day };
        published.min(self.days() as i64 - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Tariff {
    Flat { rate: f64 },
    Tou { peak_rate: f64, offpeak_rate: f64, peak_start_hour: u32, peak_end_hour: u32 },
    Hourly(HourlyPrices),
}

/// Tariff kinds accepted on the command line and in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TariffKind {
    Flat,
    Tou,
    Hourly,
}

impl FromStr for TariffKind {
    type Err = TariffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flat" => Ok(TariffKind::Flat),
            "tou" | "time_of_use" => Ok(TariffKind::Tou),
            "hourly" => Ok(TariffKind::Hourly),
            other => Err(TariffError::Invalid(format!("unknown tariff kind `{other}`"))),
        }
    }
}

impl Tariff {
    pub fn flat() -> Self {
        Tariff::Flat { rate: FLAT_RATE }
    }

    /// Two-tier tariff with a 14:00–20:00 peak.
    pub fn tou() -> Self {
        Tariff::Tou { peak_rate: TOU_PEAK_RATE, offpeak_rate: TOU_OFFPEAK_RATE, peak_start_hour: 14, peak_end_hour: 20 }
    }

    pub fn kind(&self) -> TariffKind {
        match self {
            Tariff::Flat { .. } => TariffKind::Flat,
            Tariff::Tou { .. } => TariffKind::Tou,
            Tariff::Hourly(_) => TariffKind::Hourly,
        }
    }

    pub fn validate(&self) -> Result<(), TariffError> {
        match self {
            Tariff::Flat { rate } if !(rate.is_finite() && *rate >= 0.0) => {
                Err(TariffError::Invalid("flat rate must be nonnegative".into()))
            }
            Tariff::Tou { peak_rate, offpeak_rate, peak_start_hour, peak_end_hour } => {
                if !(peak_rate.is_finite() && offpeak_rate.is_finite() && *peak_rate >= 0.0 && *offpeak_rate >= 0.0) {
                    return Err(TariffError::Invalid("TOU rates must be nonnegative".into()));
                }
                if !(peak_start_hour < peak_end_hour && *peak_end_hour <= 24) {
                    return Err(TariffError::Invalid("peak window must lie within one day".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Whether `t` falls in the TOU peak window (always false for other kinds).
    pub fn is_peak(&self, t: &DateTime<FixedOffset>) -> bool {
        match self {
            Tariff::Tou { peak_start_hour, peak_end_hour, .. } => (*peak_start_hour..*peak_end_hour).contains(&t.hour()),
            _ => false,
        }
    }

    /// Realized price during the step starting at `t`.
    pub fn price_at(&self, t: &DateTime<FixedOffset>) -> Result<f64, TariffError> {
        match self {
            Tariff::Flat { rate } => Ok(*rate),
            Tariff::Tou { peak_rate, offpeak_rate, .. } => Ok(if self.is_peak(t) { *peak_rate } else { *offpeak_rate }),
            Tariff::Hourly(h) => {
                let (day, hour) = h.locate(t);
                h.price(day, hour).ok_or_else(|| TariffError::MissingHourlyData(t.to_rfc3339()))
            }
        }
    }

    /// Prices for the `horizon` steps starting at `now`, using only what is
    /// known at `now`. For hourly prices, hours past the last published day
    /// repeat that day's price for the same hour.
    pub fn price_window(&self, now: &DateTime<FixedOffset>, step: Duration, horizon: usize) -> Result<Vec<f64>, TariffError> {
        match self {
            Tariff::Hourly(h) => {
                let (today, _) = h.locate(now);
                if h.price(today, 0).is_none() {
                    return Err(TariffError::MissingHourlyData(now.to_rfc3339()));
                }
                let last = h.last_published_day(now);
                (0..horizon)
                    .map(|i| {
                        let t = *now + step * i as i32;
                        let (day, hour) = h.locate(&t);
                        h.price(day.min(last), hour).ok_or_else(|| TariffError::MissingHourlyData(t.to_rfc3339()))
                    })
                    .collect()
            }
            _ => (0..horizon).map(|i| self.price_at(&(*now + step * i as i32))).collect(),
        }
    }
}

/// Shifts `raw` by a constant so its mean equals `target_mean`.
pub fn normalize_hourly(raw: &[f64], target_mean: f64) -> Vec<f64> {
    if raw.is_empty() {
        return Vec::new();
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let offset = target_mean - mean;
    raw.iter().map(|p| p + offset).collect()
}

/// Reads `date,hour,price` rows (ISO date, hour 0–23, $/kWh).
pub fn read_hourly_csv<R: Read>(reader: R, offset: FixedOffset) -> Result<HourlyPrices, TariffError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| TariffError::Parse(e.to_string()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| TariffError::Parse(format!("missing column `{name}`")))
    };
    let (cd, ch, cp) = (col("date")?, col("hour")?, col("price")?);
    let mut entries: Vec<(NaiveDate, usize, f64)> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| TariffError::Parse(e.to_string()))?;
        let bad = |what: &str| TariffError::Parse(format!("row {}: invalid {what}", row + 1));
        let date = NaiveDate::parse_from_str(rec.get(cd).unwrap_or_default(), "%Y-%m-%d").map_err(|_| bad("date"))?;
        let hour: usize = rec.get(ch).unwrap_or_default().parse().map_err(|_| bad("hour"))?;
        let price: f64 = rec.get(cp).unwrap_or_default().parse().map_err(|_| bad("price"))?;
        if hour > 23 {
            return Err(bad("hour"));
        }
        entries.push((date, hour, price));
    }
    let start = entries.iter().map(|e| e.0).min().ok_or_else(|| TariffError::Parse("no rows".into()))?;
    let end = entries.iter().map(|e| e.0).max().unwrap();
    let days = (end - start).num_days() as usize + 1;
    let mut prices = vec![f64::NAN; days * 24];
    for (d, h, p) in entries {
        prices[(d - start).num_days() as usize * 24 + h] = p;
    }
    if let Some(i) = prices.iter().position(|p| p.is_nan()) {
        return Err(TariffError::MissingHourlyData(format!("{} hour {}", start + Duration::days((i / 24) as i64), i % 24)));
    }
    HourlyPrices::new(start, offset, prices)
}

/// Synthetic wholesale-like day-ahead prices with an evening peak and a
/// night trough, normalized day by day to `target_mean`.
pub fn synthetic_hourly_prices(start_date: NaiveDate, offset: FixedOffset, days: usize, target_mean: f64, seed: u64) -> HourlyPrices {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.004).unwrap();
    let bump = |h: f64, center: f64, width: f64| (-0.5 * ((h - center) / width).powi(2)).exp();
    let mut prices = Vec::with_capacity(days * 24);
    for _ in 0..days {
        let scale: f64 = rng.gen_range(0.7..1.3);
        let peak_center: f64 = rng.gen_range(16.5..19.0);
        let raw: Vec<f64> = (0..24)
            .map(|h| {
                let h = h as f64;
                let shape = 0.02 + 0.025 * bump(h, 8.0, 1.5) + 0.11 * scale * bump(h, peak_center, 2.0);
                (shape + noise.sample(&mut rng)).max(0.0)
            })
            .collect();
        prices.extend(normalize_hourly(&raw, target_mean));
    }
    HourlyPrices::new(start_date, offset, prices).expect("synthetic prices are valid")
}

/// Midnight of `date` in `offset`.
pub fn local_midnight(date: NaiveDate, offset: FixedOffset) -> DateTime<FixedOffset> {
    offset.from_local_datetime(&date.and_hms_opt(0, 0, 0).unwrap()).unwrap()
}
