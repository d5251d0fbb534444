//! Result directory writers. Schemas are listed in the README.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Comparison, ControlMode, ScenarioError, ScenarioResult, SolverStats};
use crate::tariff::TariffKind;
use crate::timeseries::format_timestamp;

/// Outlet temperature below which a shower counts as uncomfortable.
pub const COMFORT_FLOOR: f64 = 37.7;

pub const TRACE_COLUMNS: [&str; 12] = [
    "time",
    "plant_mode",
    "setpoint_c",
    "t_upper_c",
    "t_lower_c",
    "outlet_c",
    "draw_kg",
    "electrical_kw",
    "hp_kwh",
    "element_kwh",
    "price_per_kwh",
    "cost",
];

/// Contents of summary.json. Holds no wall-clock measurements so reruns
/// are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub mode: ControlMode,
    pub tariff: TariffKind,
    pub seed: u64,
    pub start: String,
    pub days: usize,
    pub energy_kwh: f64,
    pub hp_kwh: f64,
    pub element_kwh: f64,
    pub cost: f64,
    pub volume_l: f64,
    pub intensity_wh_per_l: f64,
    pub cost_per_l: f64,
    pub comfort_windows: usize,
    pub comfort_violations: usize,
    pub min_draw_outlet_c: Option<f64>,
    pub solver: SolverStats,
}

impl Summary {
    pub fn of(result: &ScenarioResult) -> Self {
        Self {
            name: result.name.clone(),
            mode: result.mode,
            tariff: result.tariff.kind(),
            seed: result.seed,
            start: format_timestamp(&result.start),
            days: result.days,
            energy_kwh: result.energy_kwh,
            hp_kwh: result.hp_kwh,
            element_kwh: result.element_kwh,
            cost: result.cost,
            volume_l: result.volume_l,
            intensity_wh_per_l: result.intensity_wh_per_l(),
            cost_per_l: result.cost_per_l(),
            comfort_windows: result.comfort_events.len(),
            comfort_violations: result.comfort_violations(COMFORT_FLOOR),
            min_draw_outlet_c: result.comfort_events.iter().map(|e| e.min_outlet).reduce(f64::min),
            solver: result.solver,
        }
    }

    pub fn to_json(&self) -> Result<String, ScenarioError> {
        serde_json::to_string_pretty(self).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> ScenarioError {
    ScenarioError::Serialize(e.to_string())
}

/// Writes traces.csv, summary.json and comfort_events.csv into `dir`.
pub fn write_result(result: &ScenarioResult, dir: &Path) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("traces.csv"))?));
    let n_nodes = result.traces.first().map_or(0, |r| r.nodes.len());
    let mut header: Vec<String> = TRACE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..n_nodes).map(|i| format!("node_{i}_c")));
    w.write_record(&header).map_err(csv_err)?;
    for r in &result.traces {
        let mut rec = vec![format_timestamp(&r.time), serde_json::to_value(r.plant_mode).unwrap().as_str().unwrap().to_string()];
        rec.extend(
            [r.setpoint, r.t_upper, r.t_lower, r.outlet, r.draw_kg, r.electrical_kw, r.hp_kwh, r.element_kwh, r.price, r.cost]
                .iter()
                .chain(&r.nodes)
                .map(|v| v.to_string()),
        );
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("comfort_events.csv"))?));
    w.write_record(["window_start", "window_end", "large_draws", "min_outlet_c", "volume_l"]).map_err(csv_err)?;
    for e in &result.comfort_events {
        w.write_record([
            format_timestamp(&e.window_start),
            format_timestamp(&e.window_end),
            e.large_draws.to_string(),
            e.min_outlet.to_string(),
            e.volume_l.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut f = File::create(dir.join("summary.json"))?;
    f.write_all(Summary::of(result).to_json()?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Writes comparison.csv with one row per pair.
pub fn write_comparison(rows: &[Comparison], dir: &Path) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("comparison.csv"))?));
    w.write_record([
        "candidate",
        "baseline",
        "energy_savings_pct",
        "cost_savings_pct",
        "candidate_wh_per_l",
        "baseline_wh_per_l",
        "candidate_cost_per_l",
        "baseline_cost_per_l",
        "candidate_kwh",
        "baseline_kwh",
        "candidate_cost",
        "baseline_cost",
    ])
    .map_err(csv_err)?;
    for c in rows {
        let nums = [
            c.energy_savings_pct,
            c.cost_savings_pct,
            c.intensity_wh_per_l.0,
            c.intensity_wh_per_l.1,
            c.cost_per_l.0,
            c.cost_per_l.1,
            c.energy_kwh.0,
            c.energy_kwh.1,
            c.cost.0,
            c.cost.1,
        ];
        let mut rec = vec![c.candidate.clone(), c.baseline.clone()];
        rec.extend(nums.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
