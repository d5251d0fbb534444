use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;

use hpwh_core::forecast::{backtest as run_backtest, BacktestOptions, HistoryBundle, ModelId, ModelOptions};
use hpwh_core::plant::generate_draws;
use hpwh_core::scenario::{
    compare as compare_results, monthly_savings, payback_months, run as run_scenario, write_comparison, write_result,
    ControlMode, ScenarioError, ScenarioResult, ScenarioSpec, Summary,
};
use hpwh_core::timeseries::{ingest_csv, parse_timestamp, write_csv, IngestOptions, TimeSeries, TimeSeriesError, Unit};
use hpwh_core::tuning::{tune_parameters, TuningData, TuningError, TuningGrid};

use crate::config::{schedule, Config, DRAW_COLUMN};
use crate::{CliError, Global};

fn output_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Output(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(output_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(output_err(path))
}

fn ingest_err(path: &Path) -> impl Fn(TimeSeriesError) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

fn scenario_err(e: ScenarioError) -> CliError {
    match e {
        ScenarioError::Invalid(_) | ScenarioError::Tariff(_) => CliError::Input(e.to_string()),
        ScenarioError::Io(_) | ScenarioError::Serialize(_) => CliError::Output(e.to_string()),
        other => CliError::Compute(other.to_string()),
    }
}

/// Runs a scenario; on an abort the completed steps are written to
/// `<dir>/partial` before the error is returned.
fn run_or_dump(spec: &ScenarioSpec, dir: &Path) -> Result<ScenarioResult, CliError> {
    info!("running {} ({} + {} days, mode {})", spec.name, spec.warmup_days, spec.days, spec.mode);
    match run_scenario(spec) {
        Ok(r) => Ok(r),
        Err(ScenarioError::Aborted { at, source, partial }) => {
            let dump = dir.join("partial");
            write_result(&partial, &dump).map_err(scenario_err)?;
            Err(CliError::Compute(format!("run aborted at {at}: {source}; partial trace in {}", dump.display())))
        }
        Err(e) => Err(scenario_err(e)),
    }
}

// ---------------------------------------------------------------- tune

pub const TUNING_COLUMNS: [(&str, Unit); 6] = [
    ("power_kw", Unit::Kilowatt),
    ("t_upper_c", Unit::Celsius),
    ("t_lower_c", Unit::Celsius),
    (DRAW_COLUMN, Unit::KgPerMin),
    ("t_ambient_c", Unit::Celsius),
    ("t_inlet_c", Unit::Celsius),
];

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Measurement CSV with power_kw, t_upper_c, t_lower_c, draw_kg_per_min,
    /// t_ambient_c and t_inlet_c columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Grid file with eta, h_s, lambda and z arrays; omitted axes use the
    /// default grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

pub fn tune(cfg: &Config, global: &Global, args: &TuneArgs) -> Result<(), CliError> {
    let grid = match &args.grid {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            toml::from_str::<TuningGrid>(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => TuningGrid::default(),
    };
    let opts = IngestOptions { target_step: Some(chrono::Duration::minutes(5)), ..IngestOptions::default() };
    let mut cols = ingest_csv(&args.data, &TUNING_COLUMNS, &opts).map_err(ingest_err(&args.data))?;
    let mut take = |name: &str| cols.remove(name).expect("ingested column");
    let data = TuningData::new(
        take("power_kw"),
        take("t_upper_c"),
        take("t_lower_c"),
        take(DRAW_COLUMN),
        take("t_ambient_c"),
        take("t_inlet_c"),
    )
    .map_err(|e| CliError::Input(e.to_string()))?;
    info!("tuning over {} candidates on {:.1} days", grid.len(), data.span_days());
    let outcome = tune_parameters(&data, &grid, &cfg.tank_params()).map_err(|e| match e {
        TuningError::InsufficientData(_) | TuningError::EmptyGrid | TuningError::Shape(_) => CliError::Input(e.to_string()),
        TuningError::Tank(_) => CliError::Compute(e.to_string()),
    })?;

    let path = global.out.join("params.toml");
    let mut w = create(&path)?;
    w.write_all(toml::to_string(&outcome.params).expect("params serialize").as_bytes()).map_err(output_err(&path))?;
    w.flush().map_err(output_err(&path))?;
    let path = global.out.join("tuning.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &outcome).map_err(output_err(&path))?;
    w.flush().map_err(output_err(&path))?;
    println!(
        "eta {} h_s {} lambda {} z {} (objective {:.6}, {} candidates)",
        outcome.params.eta, outcome.params.h_s, outcome.params.lambda, outcome.params.z, outcome.objective, outcome.candidates
    );
    Ok(())
}

// ------------------------------------------------------------ backtest

#[derive(Debug, Args)]
pub struct BacktestArgs {
    /// Draw CSV with a draw_kg_per_min column; t_upper_c and t_lower_c are
    /// used when present.
    #[arg(long)]
    pub draws: PathBuf,
    /// Comma-separated model list.
    #[arg(long, value_delimiter = ',', default_value = "persistence,linear,random_forest,gradient_boosting,seasonal_fourier")]
    pub models: Vec<String>,
    /// First timestamp of the test span; earlier samples train the models.
    #[arg(long)]
    pub split: String,
    /// Steps between forecast origins.
    #[arg(long, default_value_t = 12)]
    pub stride: usize,
}

fn has_columns(path: &Path, names: &[&str]) -> Result<bool, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(names.iter().all(|n| headers.iter().any(|h| h == *n)))
}

pub fn backtest(cfg: &Config, global: &Global, args: &BacktestArgs) -> Result<(), CliError> {
    let models = args
        .models
        .iter()
        .map(|m| m.parse::<ModelId>().map_err(|e| CliError::Input(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let split = parse_timestamp(&args.split).ok_or_else(|| CliError::Input(format!("invalid split timestamp `{}`", args.split)))?;
    let opts = IngestOptions { target_step: Some(chrono::Duration::minutes(5)), ..IngestOptions::default() };
    let with_temps = has_columns(&args.draws, &["t_upper_c", "t_lower_c"])?;
    let mut schema = vec![(DRAW_COLUMN, Unit::KgPerMin)];
    if with_temps {
        schema.extend([("t_upper_c", Unit::Celsius), ("t_lower_c", Unit::Celsius)]);
    }
    let mut cols = ingest_csv(&args.draws, &schema, &opts).map_err(ingest_err(&args.draws))?;
    let mdot = cols.remove(DRAW_COLUMN).expect("ingested column");
    let constant = |v: f64| TimeSeries::new(mdot.start(), mdot.step(), vec![v; mdot.len()], Unit::Celsius).expect("valid series");
    let (t_u, t_l) = match (cols.remove("t_upper_c"), cols.remove("t_lower_c")) {
        (Some(u), Some(l)) => (u, l),
        _ => (constant(cfg.initial_temp), constant(cfg.initial_temp)),
    };
    let bundle = HistoryBundle::new(mdot, t_u, t_l).map_err(|e| CliError::Input(e.to_string()))?;
    let view = bundle.view();
    let offset = (split - view.start).num_minutes();
    let step = view.step.num_minutes();
    if offset <= 0 || offset % step != 0 {
        return Err(CliError::Input("split must fall on a sample after the first".into()));
    }
    let bt = BacktestOptions {
        horizon: cfg.horizon,
        stride: args.stride,
        models: ModelOptions { tau: cfg.tau, seed: cfg.seed, ..ModelOptions::default() },
    };
    let rows = run_backtest(&view, (offset / step) as usize, &models, &bt).map_err(|e| CliError::Compute(e.to_string()))?;

    let path = global.out.join("metrics.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["model", "mae", "rmse", "wmae", "origins"]).map_err(output_err(&path))?;
    for r in &rows {
        let m = r.evaluation.overall;
        w.write_record([r.model.to_string(), m.mae.to_string(), m.rmse.to_string(), m.wmae.to_string(), r.origins.to_string()])
            .map_err(output_err(&path))?;
        println!("{:<18} mae {:.4} rmse {:.4} wmae {:.4}", r.model.as_str(), m.mae, m.rmse, m.wmae);
    }
    w.flush().map_err(output_err(&path))?;

    let path = global.out.join("horizon_wmae.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["horizon".to_string()];
    header.extend(rows.iter().map(|r| r.model.to_string()));
    w.write_record(&header).map_err(output_err(&path))?;
    for j in 0..bt.horizon {
        let mut rec = vec![(j + 1).to_string()];
        rec.extend(rows.iter().map(|r| r.evaluation.wmae_by_horizon[j].to_string()));
        w.write_record(&rec).map_err(output_err(&path))?;
    }
    w.flush().map_err(output_err(&path))?;
    Ok(())
}

// ----------------------------------------------------------- scenarios

/// Scenario settings that may override the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct ScenarioArgs {
    /// hpowh_default, hybrid_default, constant60 or mpc.
    #[arg(long)]
    pub mode: Option<String>,
    /// flat, tou or hourly.
    #[arg(long)]
    pub tariff: Option<String>,
    /// Evaluated days.
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub warmup_days: Option<usize>,
    /// Scenario start, RFC 3339 with offset.
    #[arg(long)]
    pub start: Option<String>,
    /// Draw CSV (draw_kg_per_min); generated draws when omitted.
    #[arg(long)]
    pub draws: Option<String>,
    /// Hourly price CSV (date,hour,price).
    #[arg(long)]
    pub prices: Option<String>,
    /// typical or consecutive_showers.
    #[arg(long)]
    pub preset: Option<String>,
    /// Mains inlet temperature, °C.
    #[arg(long)]
    pub t_inlet: Option<f64>,
    #[arg(long)]
    pub name: Option<String>,
}

impl ScenarioArgs {
    fn apply(&self, cfg: &mut Config) {
        let set = |dst: &mut String, v: &Option<String>| {
            if let Some(v) = v {
                dst.clone_from(v);
            }
        };
        set(&mut cfg.mode, &self.mode);
        set(&mut cfg.tariff, &self.tariff);
        set(&mut cfg.start, &self.start);
        set(&mut cfg.draws, &self.draws);
        set(&mut cfg.prices, &self.prices);
        set(&mut cfg.preset, &self.preset);
        set(&mut cfg.name, &self.name);
        cfg.days = self.days.unwrap_or(cfg.days);
        cfg.warmup_days = self.warmup_days.unwrap_or(cfg.warmup_days);
        cfg.t_inlet = self.t_inlet.unwrap_or(cfg.t_inlet);
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

pub fn run(mut cfg: Config, global: &Global, args: &RunArgs) -> Result<(), CliError> {
    args.scenario.apply(&mut cfg);
    let spec = cfg.scenario()?;
    let result = run_or_dump(&spec, &global.out)?;
    write_result(&result, &global.out).map_err(scenario_err)?;
    let s = Summary::of(&result);
    println!(
        "{}: {:.2} kWh, {:.2} Wh/L, {:.5} $/L, {} of {} comfort windows below {} °C",
        s.name,
        s.energy_kwh,
        s.intensity_wh_per_l,
        s.cost_per_l,
        s.comfort_violations,
        s.comfort_windows,
        hpwh_core::scenario::COMFORT_FLOOR
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Modes to run; the first is the candidate, the rest are baselines.
    #[arg(long, value_delimiter = ',', default_value = "mpc,hybrid_default")]
    pub modes: Vec<String>,
    /// Extra upfront cost of the candidate for the payback table, $.
    #[arg(long, default_value_t = 200.0)]
    pub upfront: f64,
    /// Flat electricity rates for the monthly savings table, $/kWh.
    #[arg(long, value_delimiter = ',', default_value = "0.13,0.20,0.30")]
    pub rates: Vec<f64>,
}

pub fn compare(mut cfg: Config, global: &Global, args: &CompareArgs) -> Result<(), CliError> {
    args.scenario.apply(&mut cfg);
    let modes = args
        .modes
        .iter()
        .map(|m| m.parse::<ControlMode>().map_err(|e| CliError::Input(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if modes.len() < 2 {
        return Err(CliError::Input("compare needs a candidate and at least one baseline".into()));
    }
    let base = cfg.scenario()?;
    let mut results = Vec::with_capacity(modes.len());
    for &mode in &modes {
        let spec = ScenarioSpec { name: mode.to_string(), ..base.with_mode(mode) };
        let dir = global.out.join(mode.as_str());
        let r = run_or_dump(&spec, &dir)?;
        write_result(&r, &dir).map_err(scenario_err)?;
        results.push(r);
    }
    let (candidate, baselines) = results.split_first().expect("two or more results");
    let rows = baselines.iter().map(|b| compare_results(candidate, b)).collect::<Result<Vec<_>, _>>().map_err(scenario_err)?;
    write_comparison(&rows, &global.out).map_err(scenario_err)?;
    for c in &rows {
        println!(
            "{} vs {}: energy savings {:.1}%, cost savings {:.1}%, {:.2} vs {:.2} Wh/L",
            c.candidate, c.baseline, c.energy_savings_pct, c.cost_savings_pct, c.intensity_wh_per_l.0, c.intensity_wh_per_l.1
        );
    }

    // The savings table needs at least three days for the daily fits.
    if candidate.days >= 3 {
        let path = global.out.join("savings.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["baseline", "price_per_kwh", "monthly_savings_mean", "monthly_savings_low", "monthly_savings_high", "payback_months"])
            .map_err(output_err(&path))?;
        for b in baselines {
            let table = match monthly_savings(candidate, b, &args.rates) {
                Ok(t) => t,
                Err(e) => {
                    log::warn!("no savings table against {}: {e}", b.name);
                    continue;
                }
            };
            for row in &table.rows {
                let payback = payback_months(args.upfront, row.mean).map_or(String::new(), |m| format!("{m:.1}"));
                w.write_record([b.name.clone(), row.price.to_string(), row.mean.to_string(), row.low.to_string(), row.high.to_string(), payback])
                    .map_err(output_err(&path))?;
            }
        }
        w.flush().map_err(output_err(&path))?;
    }
    Ok(())
}

// ----------------------------------------------------------- gen-draws

#[derive(Debug, Args)]
pub struct GenDrawsArgs {
    #[arg(long, default_value_t = 30)]
    pub days: usize,
    /// typical or consecutive_showers.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub start: Option<String>,
}

pub fn gen_draws(cfg: &Config, global: &Global, args: &GenDrawsArgs) -> Result<(), CliError> {
    if args.days == 0 {
        return Err(CliError::Input("--days must be positive".into()));
    }
    let start_text = args.start.as_deref().unwrap_or(&cfg.start);
    let start = parse_timestamp(start_text).ok_or_else(|| CliError::Input(format!("invalid start timestamp `{start_text}`")))?;
    let spec = schedule(args.preset.as_deref().unwrap_or(&cfg.preset), start, cfg.seed)?;
    let draws = generate_draws(&spec, args.days);
    let path = global.out.join("draws.csv");
    write_csv(create(&path)?, &[(DRAW_COLUMN, &draws)]).map_err(output_err(&path))?;
    println!("{} days, {:.0} L written to {}", args.days, draws.integral_minutes(), path.display());
    Ok(())
}
