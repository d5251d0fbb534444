//! Uniformly sampled time series, CSV ingestion and resampling.
//!
//! Every signal in the toolkit (flows, node temperatures, power, prices) is a
//! [`TimeSeries`]: a start timestamp, a fixed step and a vector of finite
//! values tagged with a [`Unit`]. The canonical control step is five minutes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical control step in minutes.
pub const CONTROL_STEP_MINUTES: i64 = 5;

/// Canonical control step.
pub fn control_step() -> Duration {
    Duration::minutes(CONTROL_STEP_MINUTES)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    /// Mass flow, kg/min.
    KgPerMin,
    Celsius,
    Kilowatt,
    DollarPerKwh,
    Liter,
}

impl Unit {
    /// Flow-like signals are zero-filled across gaps; everything else is
    /// linearly interpolated.
    pub fn is_flow(self) -> bool {
        matches!(self, Unit::KgPerMin | Unit::Liter)
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Unit::KgPerMin => "kg/min",
            Unit::Celsius => "°C",
            Unit::Kilowatt => "kW",
            Unit::DollarPerKwh => "$/kWh",
            Unit::Liter => "L",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum TimeSeriesError {
    #[error("time series must contain at least one value")]
    Empty,
    #[error("time step must be positive")]
    NonPositiveStep,
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("missing column `{column}`")]
    MissingColumn { column: String },
    #[error("timestamps not strictly increasing at row {row}")]
    NonMonotoneTimestamps { row: usize },
    #[error("gap of {missing} steps before row {row} exceeds the limit of {limit}")]
    GapTooLarge { row: usize, missing: usize, limit: usize },
    #[error("timestamp spacing at row {row} is not a multiple of the base step")]
    IrregularSpacing { row: usize },
    #[error("cannot parse `{text}` in column `{column}` at row {row}")]
    Parse { row: usize, column: String, text: String },
    #[error("new step is not an integer multiple of the current step")]
    NonIntegerRatio,
    #[error("series misaligned: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniformly sampled scalar signal.
///
/// Values are immutable after construction; the invariants (non-empty,
/// finite, positive step) are checked once in [`TimeSeries::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    start: DateTime<FixedOffset>,
    #[serde(with = "duration_minutes")]
    step: Duration,
    values: Vec<f64>,
    unit: Unit,
}

mod duration_minutes {
    use chrono::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(d.num_seconds())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::seconds(i64::deserialize(d)?))
    }
}

impl TimeSeries {
    pub fn new(
        start: DateTime<FixedOffset>,
        step: Duration,
        values: Vec<f64>,
        unit: Unit,
    ) -> Result<Self, TimeSeriesError> {
        if values.is_empty() {
            return Err(TimeSeriesError::Empty);
        }
        if step <= Duration::zero() {
            return Err(TimeSeriesError::NonPositiveStep);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TimeSeriesError::NonFinite { index, value });
        }
        Ok(Self { start, step, values, unit })
    }

    pub fn start(&self) -> DateTime<FixedOffset> {
        self.start
    }

    pub fn step(&self) -> Duration {
        self.step
    }

    /// Step length in hours.
    pub fn step_hours(&self) -> f64 {
        self.step.num_seconds() as f64 / 3600.0
    }

    /// Step length in minutes.
    pub fn step_minutes(&self) -> f64 {
        self.step.num_seconds() as f64 / 60.0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Wall time of sample `k`.
    pub fn time_at(&self, k: usize) -> DateTime<FixedOffset> {
        self.start + self.step * k as i32
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Sum of `value * step` in minutes; for a kg/min series this is the total
    /// drawn mass in kg.
    pub fn integral_minutes(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.step_minutes()
    }

    /// Sub-series `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self, TimeSeriesError> {
        let to = to.min(self.values.len());
        if from >= to {
            return Err(TimeSeriesError::Empty);
        }
        Self::new(self.time_at(from), self.step, self.values[from..to].to_vec(), self.unit)
    }
}

/// Simulation clock: step index `k` on a fixed grid anchored at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    pub k: usize,
    pub step: Duration,
    pub origin: DateTime<FixedOffset>,
}

impl SimClock {
    pub fn new(origin: DateTime<FixedOffset>, step: Duration) -> Self {
        Self { k: 0, step, origin }
    }

    pub fn at(self, k: usize) -> Self {
        Self { k, ..self }
    }

    pub fn wall_time(&self) -> DateTime<FixedOffset> {
        self.origin + self.step * self.k as i32
    }

    pub fn step_hours(&self) -> f64 {
        self.step.num_seconds() as f64 / 3600.0
    }

    pub fn steps_per_day(&self) -> usize {
        (86_400 / self.step.num_seconds()) as usize
    }

    pub fn tick(&mut self) {
        self.k += 1;
    }
}

/// Options for [`ingest_csv`].
#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Largest number of consecutive missing samples that will be filled.
    pub gap_limit_steps: usize,
    /// Base sampling step of the file; inferred from the first two rows when
    /// `None`.
    pub step: Option<Duration>,
    /// Resample to this step after gap filling.
    pub target_step: Option<Duration>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { gap_limit_steps: 2, step: None, target_step: None }
    }
}

pub fn parse_timestamp(text: &str) -> Option<DateTime<FixedOffset>> {
    DateTime::parse_from_rfc3339(text.trim())
        .or_else(|_| DateTime::parse_from_str(text.trim(), "%Y-%m-%dT%H:%M%:z"))
        .ok()
}

pub fn format_timestamp(t: &DateTime<FixedOffset>) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%:z").to_string()
}

/// Reads a `timestamp,<name>...` CSV file into one series per schema column.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    schema: &[(&str, Unit)],
    opts: &IngestOptions,
) -> Result<BTreeMap<String, TimeSeries>, TimeSeriesError> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema, opts)
}

/// Same as [`ingest_csv`] for any reader.
pub fn ingest_reader<R: Read>(
    reader: R,
    schema: &[(&str, Unit)],
    opts: &IngestOptions,
) -> Result<BTreeMap<String, TimeSeries>, TimeSeriesError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("timestamp") {
        return Err(TimeSeriesError::MissingColumn { column: "timestamp".into() });
    }
    let mut columns = Vec::with_capacity(schema.len());
    for (name, _) in schema {
        let idx = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| TimeSeriesError::MissingColumn { column: (*name).to_string() })?;
        columns.push(idx);
    }

    let mut times = Vec::new();
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = row + 1;
        let ts = record.get(0).unwrap_or_default();
        let t = parse_timestamp(ts).ok_or_else(|| TimeSeriesError::Parse {
            row: row_no,
            column: "timestamp".into(),
            text: ts.to_string(),
        })?;
        if let Some(prev) = times.last() {
            if t <= *prev {
                return Err(TimeSeriesError::NonMonotoneTimestamps { row: row_no });
            }
        }
        times.push(t);
        for (c, &idx) in columns.iter().enumerate() {
            let text = record.get(idx).unwrap_or_default();
            let v: f64 = text.parse().map_err(|_| TimeSeriesError::Parse {
                row: row_no,
                column: schema[c].0.to_string(),
                text: text.to_string(),
            })?;
            raw[c].push(v);
        }
    }
    if times.is_empty() {
        return Err(TimeSeriesError::Empty);
    }

    let step = match opts.step {
        Some(s) => s,
        None if times.len() >= 2 => times[1] - times[0],
        None => control_step(),
    };
    if step <= Duration::zero() {
        return Err(TimeSeriesError::NonPositiveStep);
    }

    // Map each row onto the uniform grid and find the gaps.
    let step_s = step.num_seconds();
    let mut grid_index = Vec::with_capacity(times.len());
    for (row, t) in times.iter().enumerate() {
        let offset = (*t - times[0]).num_seconds();
        if offset % step_s != 0 {
            return Err(TimeSeriesError::IrregularSpacing { row: row + 1 });
        }
        let gi = (offset / step_s) as usize;
        if let Some(&prev) = grid_index.last() {
            let missing = gi - prev - 1;
            if missing > opts.gap_limit_steps {
                return Err(TimeSeriesError::GapTooLarge {
                    row: row + 1,
                    missing,
                    limit: opts.gap_limit_steps,
                });
            }
        }
        grid_index.push(gi);
    }
    let n = *grid_index.last().unwrap() + 1;

    let mut out = BTreeMap::new();
    for (c, (name, unit)) in schema.iter().enumerate() {
        let mut values = vec![0.0; n];
        for w in 0..grid_index.len() {
            let gi = grid_index[w];
            values[gi] = raw[c][w];
            if w + 1 < grid_index.len() {
                let next = grid_index[w + 1];
                for g in gi + 1..next {
                    values[g] = if unit.is_flow() {
                        0.0
                    } else {
                        let frac = (g - gi) as f64 / (next - gi) as f64;
                        raw[c][w] + frac * (raw[c][w + 1] - raw[c][w])
                    };
                }
            }
        }
        let mut ts = TimeSeries::new(times[0], step, values, *unit)?;
        if let Some(target) = opts.target_step {
            if target != step {
                ts = resample(&ts, target)?;
            }
        }
        out.insert((*name).to_string(), ts);
    }
    Ok(out)
}

/// Writes aligned series as a `timestamp,<name>...` CSV.
pub fn write_csv<W: Write>(writer: W, columns: &[(&str, &TimeSeries)]) -> Result<(), TimeSeriesError> {
    let Some((_, first)) = columns.first() else {
        return Err(TimeSeriesError::Empty);
    };
    for (name, ts) in columns {
        if ts.len() != first.len() || ts.start() != first.start() || ts.step() != first.step() {
            return Err(TimeSeriesError::Misaligned(format!("column `{name}`")));
        }
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    wtr.write_record(&header)?;
    for k in 0..first.len() {
        let mut rec = vec![format_timestamp(&first.time_at(k))];
        rec.extend(columns.iter().map(|(_, ts)| format!("{}", ts.values()[k])));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Bin-mean resampling to a coarser step.
///
/// Every unit is averaged over the bin, so a kg/min flow keeps its total mass
/// and power keeps its energy. A trailing partial bin is averaged over the
/// samples it has.
pub fn resample(ts: &TimeSeries, new_step: Duration) -> Result<TimeSeries, TimeSeriesError> {
    let old = ts.step().num_seconds();
    let new = new_step.num_seconds();
    if new <= 0 || new % old != 0 {
        return Err(TimeSeriesError::NonIntegerRatio);
    }
    let ratio = (new / old) as usize;
    let values = ts
        .values()
        .chunks(ratio)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    TimeSeries::new(ts.start(), new_step, values, ts.unit())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t0() -> DateTime<FixedOffset> {
        parse_timestamp("2024-05-01T00:00:00-04:00").unwrap()
    }

    #[test]
    fn rejects_invalid_series() {
        assert!(matches!(
            TimeSeries::new(t0(), control_step(), vec![], Unit::Celsius),
            Err(TimeSeriesError::Empty)
        ));
        assert!(matches!(
            TimeSeries::new(t0(), control_step(), vec![1.0, f64::NAN], Unit::Celsius),
            Err(TimeSeriesError::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            TimeSeries::new(t0(), Duration::zero(), vec![1.0], Unit::Celsius),
            Err(TimeSeriesError::NonPositiveStep)
        ));
    }

    #[test]
    fn reads_three_rows() {
        let csv = "timestamp,flow\n\
                   2024-05-01T00:00:00-04:00,0\n\
                   2024-05-01T00:05:00-04:00,1.5\n\
                   2024-05-01T00:10:00-04:00,0\n";
        let out = ingest_reader(csv.as_bytes(), &[("flow", Unit::KgPerMin)], &Default::default())
            .unwrap();
        let flow = &out["flow"];
        assert_eq!(flow.len(), 3);
        assert_eq!(flow.values(), &[0.0, 1.5, 0.0]);
        assert_eq!(flow.step(), Duration::minutes(5));
    }

    #[test]
    fn fills_single_missing_row() {
        let csv = "timestamp,flow,t_u\n\
                   2024-05-01T00:00:00-04:00,2,50\n\
                   2024-05-01T00:05:00-04:00,2,48\n\
                   2024-05-01T00:15:00-04:00,2,44\n";
        let out = ingest_reader(
            csv.as_bytes(),
            &[("flow", Unit::KgPerMin), ("t_u", Unit::Celsius)],
            &IngestOptions { gap_limit_steps: 2, ..Default::default() },
        )
        .unwrap();
        // Hand-filled: flow zero, temperature halfway between 48 and 44.
        assert_eq!(out["flow"].values(), &[2.0, 2.0, 0.0, 2.0]);
        assert_eq!(out["t_u"].values(), &[50.0, 48.0, 46.0, 44.0]);
    }

    #[test]
    fn gap_too_large() {
        let csv = "timestamp,flow\n\
                   2024-05-01T00:00:00-04:00,0\n\
                   2024-05-01T02:00:00-04:00,0\n";
        let err = ingest_reader(
            csv.as_bytes(),
            &[("flow", Unit::KgPerMin)],
            &IngestOptions { gap_limit_steps: 2, step: Some(control_step()), target_step: None },
        )
        .unwrap_err();
        assert!(matches!(err, TimeSeriesError::GapTooLarge { row: 2, missing: 23, limit: 2 }));
    }

    #[test]
    fn missing_column_and_non_monotone() {
        let csv = "timestamp,flow\n2024-05-01T00:00:00-04:00,0\n";
        let err = ingest_reader(csv.as_bytes(), &[("t_u", Unit::Celsius)], &Default::default())
            .unwrap_err();
        assert!(matches!(err, TimeSeriesError::MissingColumn { column } if column == "t_u"));

        let csv = "timestamp,flow\n\
                   2024-05-01T00:05:00-04:00,0\n\
                   2024-05-01T00:00:00-04:00,0\n";
        let err = ingest_reader(csv.as_bytes(), &[("flow", Unit::KgPerMin)], &Default::default())
            .unwrap_err();
        assert!(matches!(err, TimeSeriesError::NonMonotoneTimestamps { row: 2 }));
    }

    #[test]
    fn resample_constant_and_flow() {
        let one_min = Duration::minutes(1);
        let c = TimeSeries::new(t0(), one_min, vec![42.0; 10], Unit::Celsius).unwrap();
        let r = resample(&c, control_step()).unwrap();
        assert_eq!(r.values(), &[42.0, 42.0]);

        let f = TimeSeries::new(t0(), one_min, vec![0.0, 0.0, 0.0, 0.0, 5.0], Unit::KgPerMin)
            .unwrap();
        let r = resample(&f, control_step()).unwrap();
        assert_eq!(r.values(), &[1.0]);
        assert_eq!(r.integral_minutes(), 5.0);
        assert_eq!(f.integral_minutes(), 5.0);

        assert!(matches!(
            resample(&f, Duration::seconds(90)),
            Err(TimeSeriesError::NonIntegerRatio)
        ));
    }

    #[test]
    fn one_minute_file_resampled_on_ingest() {
        let mut csv = String::from("timestamp,flow\n");
        for m in 0..10 {
            csv.push_str(&format!("2024-05-01T00:{m:02}:00-04:00,{}\n", if m == 7 { 5 } else { 0 }));
        }
        let out = ingest_reader(
            csv.as_bytes(),
            &[("flow", Unit::KgPerMin)],
            &IngestOptions { target_step: Some(control_step()), ..Default::default() },
        )
        .unwrap();
        assert_eq!(out["flow"].values(), &[0.0, 1.0]);
    }

    #[test]
    fn clock_wall_time() {
        let clock = SimClock::new(t0(), control_step()).at(12 * 24 + 3);
        assert_eq!(
            clock.wall_time(),
            parse_timestamp("2024-05-02T00:15:00-04:00").unwrap()
        );
        assert_eq!(clock.steps_per_day(), 288);
    }
}
