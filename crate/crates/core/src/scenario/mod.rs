//! Closed-loop experiments: a controller mode drives the plant over a draw
//! trace and tariff, and the run is summarized into energy, cost and
//! comfort statistics.

mod analysis;
mod output;

pub use analysis::{
    comfort_windows, compare, daily_totals, energy_in_hours, hourly_energy_price_correlation, monthly_savings,
    payback_months, regress_daily, regress_energy_on_volume, ComfortEvent, Comparison, DailyTotals, MonthlySavings,
    Regression, SavingsRow, LARGE_DRAW_L, WINDOW_HOURS,
};
pub use output::{write_comparison, write_result, Summary, COMFORT_FLOOR, TRACE_COLUMNS};

use chrono::{DateTime, FixedOffset, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::{DrawForecast, DrawForecaster, Ensemble, EnsembleConfig, ForecastError, HistoryView, ModelOptions};
use crate::mpc::{Controller, Measurements, MpcConfig};
use crate::plant::{generate_draws, simulate_step, DrawScheduleSpec, Mode, PlantConfig, PlantError, PlantState, StepInputs};
use crate::tank::{TankParams, TankState};
use crate::tariff::{Tariff, TariffError};
use crate::timeseries::{control_step, format_timestamp, SimClock, TimeSeries, Unit};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Tariff(#[from] TariffError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error("results cover different spans or draw traces")]
    MismatchedSpan,
    #[error("need at least {needed} days, got {got}")]
    TooFewDays { needed: usize, got: usize },
    #[error("all daily draw volumes are equal")]
    DegenerateData,
    #[error("monthly savings must be positive")]
    NonpositiveSavings,
    /// A module error stopped the run; `partial` holds the evaluated steps
    /// completed before it.
    #[error("aborted at {at}: {source}")]
    Aborted { at: String, source: Box<ScenarioError>, partial: Box<ScenarioResult> },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    HpowhDefault,
    HybridDefault,
    Constant60,
    Mpc,
}

impl ControlMode {
    pub const ALL: [ControlMode; 4] = [Self::HpowhDefault, Self::HybridDefault, Self::Constant60, Self::Mpc];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::HpowhDefault => "hpowh_default",
            Self::HybridDefault => "hybrid_default",
            Self::Constant60 => "constant60",
            Self::Mpc => "mpc",
        }
    }
}

impl std::str::FromStr for ControlMode {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown mode '{s}'")))
    }
}

impl std::fmt::Display for ControlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DrawSource {
    Schedule(DrawScheduleSpec),
    /// Flow in kg/min on the control grid, covering warm-up and evaluation.
    Trace(TimeSeries),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub mode: ControlMode,
    pub tariff: Tariff,
    pub draws: DrawSource,
    /// Evaluated days, after the warm-up.
    pub days: usize,
    /// Days simulated before evaluation starts. In mpc mode these run under
    /// the hybrid controller to build the draw history for forecasting.
    pub warmup_days: usize,
    pub seed: u64,
    /// Air temperature around the tank, °C.
    pub t_ambient: f64,
    /// Mains inlet temperature, °C.
    pub t_inlet: f64,
    pub initial_temp: f64,
    pub plant: PlantConfig,
    pub params: TankParams,
    pub mpc: MpcConfig,
    pub ensemble: EnsembleConfig,
    pub model_options: ModelOptions,
    /// Refit the forecasters at every local midnight.
    pub retrain_daily: bool,
}

impl ScenarioSpec {
    /// A scenario over generated draws starting at `start`.
    pub fn new(name: &str, mode: ControlMode, tariff: Tariff, start: DateTime<FixedOffset>, days: usize, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            mode,
            tariff,
            draws: DrawSource::Schedule(DrawScheduleSpec::new(start, seed)),
            days,
            warmup_days: 30,
            seed,
            t_ambient: 18.3,
            t_inlet: 18.0,
            initial_temp: 48.9,
            plant: PlantConfig::default(),
            params: TankParams::default(),
            mpc: MpcConfig::default(),
            ensemble: EnsembleConfig::default(),
            model_options: ModelOptions { seed, ..ModelOptions::default() },
            retrain_daily: true,
        }
    }

    /// Same scenario under another mode; the draws are unchanged.
    pub fn with_mode(&self, mode: ControlMode) -> Self {
        Self { mode, name: format!("{}-{}", self.name.rsplit_once('-').map_or(&*self.name, |p| p.0), mode), ..self.clone() }
    }

    pub fn total_days(&self) -> usize {
        self.warmup_days + self.days
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.days == 0 {
            return Err(ScenarioError::Invalid("at least one evaluated day is required".into()));
        }
        self.plant.validate()?;
        self.params.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.mpc.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.ensemble.validate()?;
        self.tariff.validate()?;
        if self.mode == ControlMode::Mpc && self.warmup_days < 2 {
            return Err(ScenarioError::Invalid("mpc mode needs at least two warm-up days of history".into()));
        }
        if let DrawSource::Trace(ts) = &self.draws {
            if ts.unit() != Unit::KgPerMin || ts.step() != control_step() {
                return Err(ScenarioError::Invalid("draw trace must be kg/min on the 5-minute grid".into()));
            }
            if ts.len() < self.total_days() * 288 {
                return Err(ScenarioError::Invalid(format!(
                    "draw trace covers {} steps, {} needed",
                    ts.len(),
                    self.total_days() * 288
                )));
            }
        }
        for t in [self.t_ambient, self.t_inlet, self.initial_temp] {
            if !t.is_finite() {
                return Err(ScenarioError::Invalid("temperatures must be finite".into()));
            }
        }
        Ok(())
    }

    /// The draw trace for warm-up plus evaluation.
    pub fn draw_trace(&self) -> Result<TimeSeries, ScenarioError> {
        let n = self.total_days() * 288;
        match &self.draws {
            DrawSource::Schedule(s) => Ok(generate_draws(s, self.total_days())),
            DrawSource::Trace(ts) => ts.slice(0, n).map_err(|e| ScenarioError::Invalid(e.to_string())),
        }
    }
}

/// One evaluated control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: DateTime<FixedOffset>,
    pub plant_mode: Mode,
    pub setpoint: f64,
    pub t_upper: f64,
    pub t_lower: f64,
    pub outlet: f64,
    pub draw_kg: f64,
    pub electrical_kw: f64,
    pub hp_kwh: f64,
    pub element_kwh: f64,
    pub price: f64,
    pub cost: f64,
    pub nodes: Vec<f64>,
}

impl TraceRow {
    pub fn energy_kwh(&self) -> f64 {
        self.hp_kwh + self.element_kwh
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub solves: usize,
    pub faults: usize,
    pub iterations: usize,
    pub retrains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub mode: ControlMode,
    pub tariff: Tariff,
    pub seed: u64,
    pub start: DateTime<FixedOffset>,
    pub days: usize,
    pub traces: Vec<TraceRow>,
    pub energy_kwh: f64,
    pub hp_kwh: f64,
    pub element_kwh: f64,
    pub cost: f64,
    pub volume_l: f64,
    pub comfort_events: Vec<ComfortEvent>,
    pub solver: SolverStats,
}

impl ScenarioResult {
    pub fn intensity_wh_per_l(&self) -> f64 {
        if self.volume_l > 0.0 {
            1000.0 * self.energy_kwh / self.volume_l
        } else {
            0.0
        }
    }

    pub fn cost_per_l(&self) -> f64 {
        if self.volume_l > 0.0 {
            self.cost / self.volume_l
        } else {
            0.0
        }
    }

    /// Comfort windows whose lowest draw-time outlet fell below `t_min`.
    pub fn comfort_violations(&self, t_min: f64) -> usize {
        self.comfort_events.iter().filter(|e| e.min_outlet < t_min).count()
    }
}

/// Forecaster stand-in used before the first successful fit.
struct Unfitted;

impl DrawForecaster for Unfitted {
    fn forecast(&self, _: &HistoryView<'_>, _: usize) -> Result<DrawForecast, ForecastError> {
        Err(ForecastError::Numerical("forecasters not yet fitted".into()))
    }
}

fn plant_mode(mode: ControlMode) -> Mode {
    match mode {
        ControlMode::HpowhDefault => Mode::Hpowh,
        ControlMode::HybridDefault => Mode::Hybrid,
        ControlMode::Constant60 => Mode::Constant60,
        ControlMode::Mpc => Mode::External,
    }
}

/// Runs the scenario. Deterministic for a given spec.
pub fn run(spec: &ScenarioSpec) -> Result<ScenarioResult, ScenarioError> {
    spec.validate()?;
    let draws = spec.draw_trace()?;
    let spd = 288;
    let n_total = spec.total_days() * spd;
    let warmup = spec.warmup_days * spd;
    let dt = control_step();
    let clock = SimClock::new(draws.start(), dt);

    let mut state = PlantState::uniform(&spec.plant, spec.initial_temp);
    let mut hist_mdot = Vec::with_capacity(n_total);
    let mut hist_tu = Vec::with_capacity(n_total);
    let mut hist_tl = Vec::with_capacity(n_total);
    let mut controller = Controller::new(spec.params, spec.mpc);
    let mut ensemble: Option<Ensemble> = None;
    let mut stats = SolverStats::default();
    let mut traces = Vec::with_capacity(n_total - warmup);

    for n in 0..n_total {
        let now = clock.at(n);
        let time = now.wall_time();
        let (t_u, t_l) = state.measured_temps(&spec.plant);
        let evaluating = n >= warmup;
        let mut mode = plant_mode(spec.mode);
        let mut setpoint = spec.plant.default_setpoint;
        if spec.mode == ControlMode::Mpc {
            if evaluating {
                let history = HistoryView { start: draws.start(), step: dt, mdot: &hist_mdot, t_u: &hist_tu, t_l: &hist_tl };
                let midnight = time.hour() == 0 && time.minute() == 0;
                if ensemble.is_none() || (spec.retrain_daily && midnight) {
                    match Ensemble::fit(spec.ensemble, spec.model_options, &history) {
                        Ok(e) => {
                            ensemble = Some(e);
                            stats.retrains += 1;
                        }
                        Err(e) => log::warn!("{}: forecaster refit failed, keeping previous: {e}", spec.name),
                    }
                }
                let meas = Measurements { history, state: TankState::new(t_u, t_l), t_c: spec.t_inlet };
                let forecaster: &dyn DrawForecaster = match &ensemble {
                    Some(e) => e,
                    None => &Unfitted,
                };
                let faults_before = controller.fault_count();
                setpoint = controller.control_step(&now, &meas, forecaster, &spec.tariff);
                if controller.fault_count() == faults_before {
                    stats.solves += 1;
                    stats.iterations += controller.last_solution().map_or(0, |s| s.iterations);
                } else {
                    stats.faults += 1;
                }
            } else {
                mode = Mode::Hybrid;
            }
        }
        let draw_kg = draws.values()[n] * dt.num_minutes() as f64;
        let out = simulate_step(
            &spec.plant,
            &mut state,
            &StepInputs { mode, setpoint, draw_kg, t_a: spec.t_ambient, t_c: spec.t_inlet, dt },
        );
        hist_mdot.push(draws.values()[n]);
        hist_tu.push(t_u);
        hist_tl.push(t_l);
        if evaluating {
            let price = match spec.tariff.price_at(&time) {
                Ok(p) => p,
                Err(e) => {
                    return Err(ScenarioError::Aborted {
                        at: format_timestamp(&time),
                        source: Box::new(e.into()),
                        partial: Box::new(finish(spec, clock.at(warmup).wall_time(), traces, stats)),
                    })
                }
            };
            let energy = out.hp_electrical_kwh + out.element_kwh;
            traces.push(TraceRow {
                time,
                plant_mode: mode,
                setpoint: out.effective_setpoint,
                t_upper: t_u,
                t_lower: t_l,
                outlet: out.outlet,
                draw_kg,
                electrical_kw: out.electrical_kw,
                hp_kwh: out.hp_electrical_kwh,
                element_kwh: out.element_kwh,
                price,
                cost: price * energy,
                nodes: state.nodes.clone(),
            });
        }
    }

    Ok(finish(spec, clock.at(warmup).wall_time(), traces, stats))
}

fn finish(spec: &ScenarioSpec, start: DateTime<FixedOffset>, traces: Vec<TraceRow>, stats: SolverStats) -> ScenarioResult {
    let sum = |f: fn(&TraceRow) -> f64| traces.iter().map(f).sum::<f64>();
    let comfort_events = comfort_windows(&traces, WINDOW_HOURS, LARGE_DRAW_L);
    ScenarioResult {
        name: spec.name.clone(),
        mode: spec.mode,
        tariff: spec.tariff.clone(),
        seed: spec.seed,
        start,
        days: spec.days,
        energy_kwh: sum(TraceRow::energy_kwh),
        hp_kwh: sum(|r| r.hp_kwh),
        element_kwh: sum(|r| r.element_kwh),
        cost: sum(|r| r.cost),
        volume_l: sum(|r| r.draw_kg),
        comfort_events,
        solver: stats,
        traces,
    }
}
