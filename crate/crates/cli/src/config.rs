//! Flat `key = value` run configuration. Every key is optional; missing
//! keys keep the defaults shown by `Config::default()`.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, FixedOffset};
use serde::{Deserialize, Serialize};

use hpwh_core::forecast::{EnsembleConfig, ModelId, ModelOptions};
use hpwh_core::mpc::MpcConfig;
use hpwh_core::plant::{DrawScheduleSpec, PlantConfig};
use hpwh_core::scenario::{ControlMode, DrawSource, ScenarioSpec};
use hpwh_core::tank::TankParams;
use hpwh_core::tariff::{read_hourly_csv, synthetic_hourly_prices, Tariff, TariffKind};
use hpwh_core::timeseries::{ingest_csv, parse_timestamp, IngestOptions, Unit};

use crate::CliError;

/// Column holding draw flow in kg/min in draw CSV files.
pub const DRAW_COLUMN: &str = "draw_kg_per_min";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // Scenario
    pub name: String,
    pub mode: String,
    pub tariff: String,
    pub start: String,
    pub days: usize,
    pub warmup_days: usize,
    pub seed: u64,
    /// Draw CSV; empty means generated draws.
    pub draws: String,
    /// `typical` or `consecutive_showers`, for generated draws.
    pub preset: String,
    /// Hourly price CSV (`date,hour,price`); empty means synthetic prices.
    pub prices: String,
    pub t_ambient: f64,
    pub t_inlet: f64,
    pub initial_temp: f64,
    pub retrain_daily: bool,

    // Tariffs, $/kWh
    pub flat_rate: f64,
    pub tou_peak_rate: f64,
    pub tou_offpeak_rate: f64,
    pub tou_peak_start_hour: u32,
    pub tou_peak_end_hour: u32,
    pub hourly_mean: f64,

    // Control model
    pub c: f64,
    pub r_a: f64,
    pub z: f64,
    pub lambda: f64,
    pub eta: f64,
    pub p_max: f64,
    pub h_s: f64,
    pub tank_height: f64,
    pub cross_section: f64,
    pub k_w: f64,

    // Controller
    pub horizon: usize,
    pub t_min: f64,
    pub t_bact: f64,
    pub t_s_max: f64,
    pub t_s_min_apply: f64,
    pub a: f64,
    pub gamma_multiplier: f64,
    pub phi: f64,
    pub big_phi: f64,
    pub bact_window: usize,
    pub bact_lookback: usize,
    pub thermostat_setpoint: f64,
    pub ambient_offset: f64,
    pub inlet_fallback: f64,

    // Forecast
    pub j1: usize,
    pub j2: usize,
    pub tau: f64,
    pub short_model: String,
    pub medium_model: String,
    pub long_model: String,

    // Plant
    pub plant_nodes: usize,
    pub plant_volume_l: f64,
    pub plant_deadband: f64,
    pub plant_setpoint: f64,
}

impl Default for Config {
    fn default() -> Self {
        let p = TankParams::default();
        let m = MpcConfig::default();
        let e = EnsembleConfig::default();
        let o = ModelOptions::default();
        let plant = PlantConfig::default();
        let (flat_rate, tou) = match (Tariff::flat(), Tariff::tou()) {
            (Tariff::Flat { rate }, Tariff::Tou { peak_rate, offpeak_rate, peak_start_hour, peak_end_hour }) => {
                (rate, (peak_rate, offpeak_rate, peak_start_hour, peak_end_hour))
            }
            _ => unreachable!(),
        };
        Self {
            name: "scenario".into(),
            mode: ControlMode::Mpc.as_str().into(),
            tariff: "flat".into(),
            start: "2024-06-01T00:00:00-04:00".into(),
            days: 30,
            warmup_days: 30,
            seed: 0,
            draws: String::new(),
            preset: "typical".into(),
            prices: String::new(),
            t_ambient: 18.3,
            t_inlet: 18.0,
            initial_temp: 48.9,
            retrain_daily: true,
            flat_rate,
            tou_peak_rate: tou.0,
            tou_offpeak_rate: tou.1,
            tou_peak_start_hour: tou.2,
            tou_peak_end_hour: tou.3,
            hourly_mean: flat_rate,
            c: p.c,
            r_a: p.r_a,
            z: p.z,
            lambda: p.lambda,
            eta: p.eta,
            p_max: p.p_max,
            h_s: p.h_s,
            tank_height: p.tank_height,
            cross_section: p.cross_section,
            k_w: p.k_w,
            horizon: m.horizon,
            t_min: m.t_min,
            t_bact: m.t_bact,
            t_s_max: m.t_s_max,
            t_s_min_apply: m.t_s_min_apply,
            a: m.a,
            gamma_multiplier: m.gamma_multiplier,
            phi: m.phi,
            big_phi: m.big_phi,
            bact_window: m.bact_window,
            bact_lookback: m.bact_lookback,
            thermostat_setpoint: m.thermostat_setpoint,
            ambient_offset: m.ambient_offset,
            inlet_fallback: m.inlet_fallback,
            j1: e.j1,
            j2: e.j2,
            tau: o.tau,
            short_model: e.short_model.as_str().into(),
            medium_model: e.medium_model.as_str().into(),
            long_model: e.long_model.as_str().into(),
            plant_nodes: plant.n_nodes,
            plant_volume_l: plant.volume_l,
            plant_deadband: plant.deadband,
            plant_setpoint: plant.default_setpoint,
        }
    }
}

fn input<E: std::fmt::Display>(what: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Input(format!("{what}: {e}"))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(input(&path.display().to_string()))?;
        toml::from_str(&text).map_err(input(&path.display().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn start_time(&self) -> Result<DateTime<FixedOffset>, CliError> {
        parse_timestamp(&self.start).ok_or_else(|| CliError::Input(format!("invalid start timestamp `{}`", self.start)))
    }

    pub fn control_mode(&self) -> Result<ControlMode, CliError> {
        self.mode.parse().map_err(input("mode"))
    }

    pub fn tank_params(&self) -> TankParams {
        TankParams {
            c: self.c,
            r_a: self.r_a,
            z: self.z,
            lambda: self.lambda,
            eta: self.eta,
            p_max: self.p_max,
            tank_height: self.tank_height,
            cross_section: self.cross_section,
            k_w: self.k_w,
            ..TankParams::default()
        }
        .with_h_s(self.h_s)
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            horizon: self.horizon,
            t_min: self.t_min,
            t_bact: self.t_bact,
            t_s_max: self.t_s_max,
            t_s_min_apply: self.t_s_min_apply,
            a: self.a,
            gamma_multiplier: self.gamma_multiplier,
            phi: self.phi,
            big_phi: self.big_phi,
            bact_window: self.bact_window,
            bact_lookback: self.bact_lookback,
            thermostat_setpoint: self.thermostat_setpoint,
            ambient_offset: self.ambient_offset,
            inlet_fallback: self.inlet_fallback,
            ..MpcConfig::default()
        }
    }

    pub fn ensemble_config(&self) -> Result<EnsembleConfig, CliError> {
        let id = |s: &str| s.parse::<ModelId>().map_err(input("model"));
        Ok(EnsembleConfig {
            j1: self.j1,
            j2: self.j2,
            horizon: self.horizon,
            short_model: id(&self.short_model)?,
            medium_model: id(&self.medium_model)?,
            long_model: id(&self.long_model)?,
        })
    }

    pub fn plant_config(&self) -> PlantConfig {
        PlantConfig {
            n_nodes: self.plant_nodes,
            volume_l: self.plant_volume_l,
            deadband: self.plant_deadband,
            default_setpoint: self.plant_setpoint,
            ..PlantConfig::default()
        }
    }

    /// Builds the tariff, covering `days` from the start date when prices
    /// are synthesized.
    pub fn tariff(&self, days: usize) -> Result<Tariff, CliError> {
        let start = self.start_time()?;
        let kind: TariffKind = self.tariff.parse().map_err(input("tariff"))?;
        let t = match kind {
            TariffKind::Flat => Tariff::Flat { rate: self.flat_rate },
            TariffKind::Tou => Tariff::Tou {
                peak_rate: self.tou_peak_rate,
                offpeak_rate: self.tou_offpeak_rate,
                peak_start_hour: self.tou_peak_start_hour,
                peak_end_hour: self.tou_peak_end_hour,
            },
            TariffKind::Hourly if self.prices.is_empty() => Tariff::Hourly(synthetic_hourly_prices(
                start.date_naive(),
                *start.offset(),
                days + 2,
                self.hourly_mean,
                self.seed,
            )),
            TariffKind::Hourly => {
                let f = std::fs::File::open(&self.prices).map_err(input(&self.prices))?;
                Tariff::Hourly(read_hourly_csv(f, *start.offset()).map_err(input(&self.prices))?)
            }
        };
        t.validate().map_err(input("tariff"))?;
        Ok(t)
    }

    fn draw_source(&self, start: DateTime<FixedOffset>) -> Result<DrawSource, CliError> {
        if !self.draws.is_empty() {
            let opts = IngestOptions { target_step: Some(Duration::minutes(5)), ..IngestOptions::default() };
            let mut cols = ingest_csv(PathBuf::from(&self.draws), &[(DRAW_COLUMN, Unit::KgPerMin)], &opts)
                .map_err(input(&self.draws))?;
            return Ok(DrawSource::Trace(cols.remove(DRAW_COLUMN).expect("ingested column")));
        }
        schedule(&self.preset, start, self.seed).map(DrawSource::Schedule)
    }

    /// The full scenario described by this configuration.
    pub fn scenario(&self) -> Result<ScenarioSpec, CliError> {
        let start = self.start_time()?;
        let mode = self.control_mode()?;
        let tariff = self.tariff(self.warmup_days + self.days)?;
        let mut spec = ScenarioSpec::new(&self.name, mode, tariff, start, self.days, self.seed);
        spec.draws = self.draw_source(start)?;
        spec.warmup_days = self.warmup_days;
        spec.t_ambient = self.t_ambient;
        spec.t_inlet = self.t_inlet;
        spec.initial_temp = self.initial_temp;
        spec.retrain_daily = self.retrain_daily;
        spec.params = self.tank_params();
        spec.mpc = self.mpc_config();
        spec.ensemble = self.ensemble_config()?;
        spec.model_options.tau = self.tau;
        spec.plant = self.plant_config();
        spec.validate().map_err(|e| CliError::Input(e.to_string()))?;
        Ok(spec)
    }
}

pub fn schedule(preset: &str, start: DateTime<FixedOffset>, seed: u64) -> Result<DrawScheduleSpec, CliError> {
    match preset {
        "typical" => Ok(DrawScheduleSpec::new(start, seed)),
        "consecutive_showers" => Ok(DrawScheduleSpec::consecutive_showers(start, seed)),
        other => Err(CliError::Input(format!("unknown draw preset `{other}`"))),
    }
}
