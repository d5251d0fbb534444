//! Browser bindings for the demo page in `www/`. Every export takes plain
//! numbers and strings and returns a JSON document.

use chrono::{DateTime, FixedOffset};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use hpwh_core::forecast::DrawForecast;
use hpwh_core::mpc::{build_problem, solve, MpcConfig, SolverChoice};
use hpwh_core::plant::{generate_draws, simulate_step, DrawScheduleSpec, Mode, PlantConfig, PlantState, StepInputs};
use hpwh_core::tank::{discrete_system, step_state, TankParams, TankState};
use hpwh_core::tariff::{synthetic_hourly_prices, Tariff, FLAT_RATE};
use hpwh_core::timeseries::{control_step, parse_timestamp};

const T_AMBIENT: f64 = 18.3;

fn day_start() -> DateTime<FixedOffset> {
    parse_timestamp("2024-06-03T00:00:00-04:00").expect("valid literal")
}

fn schedule(seed: u64, showers: bool) -> DrawScheduleSpec {
    if showers {
        DrawScheduleSpec::consecutive_showers(day_start(), seed)
    } else {
        DrawScheduleSpec::new(day_start(), seed)
    }
}

fn hours() -> Vec<f64> {
    (0..288).map(|k| k as f64 / 12.0).collect()
}

#[derive(Debug, Serialize)]
pub struct PlantDay {
    pub hours: Vec<f64>,
    pub draw_kg_per_min: Vec<f64>,
    pub top_c: Vec<f64>,
    pub bottom_c: Vec<f64>,
    pub outlet_c: Vec<f64>,
    pub electrical_kw: Vec<f64>,
    pub energy_kwh: f64,
    pub min_outlet_during_draws_c: Option<f64>,
}

/// One day of the stratified plant under a built-in controller.
pub fn plant_day(mode: &str, seed: u64, showers: bool, t_inlet: f64) -> Result<PlantDay, String> {
    let mode = match mode {
        "hpowh_default" => Mode::Hpowh,
        "hybrid_default" => Mode::Hybrid,
        "constant60" => Mode::Constant60,
        other => return Err(format!("unknown mode '{other}'")),
    };
    let cfg = PlantConfig::default();
    let draws = generate_draws(&schedule(seed, showers), 1);
    let mut state = PlantState::uniform(&cfg, cfg.default_setpoint);
    let mut day = PlantDay {
        hours: hours(),
        draw_kg_per_min: draws.values().to_vec(),
        top_c: Vec::new(),
        bottom_c: Vec::new(),
        outlet_c: Vec::new(),
        electrical_kw: Vec::new(),
        energy_kwh: 0.0,
        min_outlet_during_draws_c: None,
    };
    for &flow in draws.values() {
        let out = simulate_step(
            &cfg,
            &mut state,
            &StepInputs { mode, setpoint: cfg.default_setpoint, draw_kg: flow * 5.0, t_a: T_AMBIENT, t_c: t_inlet, dt: control_step() },
        );
        day.top_c.push(state.top());
        day.bottom_c.push(state.nodes[0]);
        day.outlet_c.push(out.outlet);
        day.electrical_kw.push(out.electrical_kw);
        day.energy_kwh += out.hp_electrical_kwh + out.element_kwh;
        if flow > 0.0 {
            let lowest = day.min_outlet_during_draws_c.map_or(out.outlet, |m| m.min(out.outlet));
            day.min_outlet_during_draws_c = Some(lowest);
        }
    }
    Ok(day)
}

#[derive(Debug, Serialize)]
pub struct DayPlan {
    pub hours: Vec<f64>,
    pub draw_kg_per_min: Vec<f64>,
    pub price: Vec<f64>,
    pub bacteria_penalty_on: Vec<bool>,
    pub t_u_c: Vec<f64>,
    pub t_l_c: Vec<f64>,
    pub heat_kw: Vec<f64>,
    pub setpoint_c: Vec<f64>,
    pub applied_setpoint_c: f64,
    pub energy_cost: f64,
    pub comfort_penalty: f64,
    pub bacteria_penalty: f64,
    pub iterations: usize,
}

/// A full-day MPC plan with the day's draws as a perfect forecast.
pub fn mpc_plan(t_u: f64, t_l: f64, tariff: &str, seed: u64, showers: bool) -> Result<DayPlan, String> {
    let start = day_start();
    let tariff = match tariff {
        "flat" => Tariff::flat(),
        "tou" => Tariff::tou(),
        "hourly" => Tariff::Hourly(synthetic_hourly_prices(start.date_naive(), *start.offset(), 2, FLAT_RATE, seed)),
        other => return Err(format!("unknown tariff kind '{other}'")),
    };
    let config = MpcConfig::default();
    let prices = tariff.price_window(&start, control_step(), config.horizon).map_err(|e| e.to_string())?;
    let draws = generate_draws(&schedule(seed, showers), 1);
    let forecast = DrawForecast { origin_k: 0, values: draws.values().to_vec() };
    let params = TankParams::default();
    let problem = build_problem(
        TankState::new(t_u, t_l),
        &params,
        &config,
        &forecast,
        &[],
        &prices,
        config.ambient_estimate(),
        config.inlet_fallback,
    )
    .map_err(|e| e.to_string())?;
    let sol = solve(&problem, SolverChoice::InteriorPoint.build().as_ref()).map_err(|e| e.to_string())?;
    Ok(DayPlan {
        hours: hours(),
        draw_kg_per_min: forecast.values,
        price: prices,
        bacteria_penalty_on: problem.pi,
        t_u_c: sol.t_u_plan,
        t_l_c: sol.t_l_plan,
        heat_kw: sol.q_plan,
        setpoint_c: sol.t_s_plan,
        applied_setpoint_c: sol.applied_setpoint,
        energy_cost: sol.cost.energy,
        comfort_penalty: sol.cost.comfort,
        bacteria_penalty: sol.cost.bacteria,
        iterations: sol.iterations,
    })
}

#[derive(Debug, Serialize)]
pub struct Response {
    pub hours: Vec<f64>,
    pub t_u_c: Vec<f64>,
    pub t_l_c: Vec<f64>,
}

/// Two-node model under constant heating and draw for `hours_total` hours.
pub fn two_node_response(t_u: f64, t_l: f64, heat_kw: f64, draw_kg_per_min: f64, lambda: f64, hours_total: f64) -> Result<Response, String> {
    let params = TankParams { lambda, ..TankParams::default() };
    params.validate().map_err(|e| e.to_string())?;
    if !(0.0..=params.q_max()).contains(&heat_kw) || draw_kg_per_min < 0.0 {
        return Err(format!("heat must lie in [0, {}] kW and draw must be nonnegative", params.q_max()));
    }
    let sys = discrete_system(&params, draw_kg_per_min * 60.0, T_AMBIENT, 18.0, control_step()).map_err(|e| e.to_string())?;
    let steps = (hours_total.clamp(0.0, 72.0) * 12.0).round() as usize;
    let mut s = TankState::new(t_u, t_l);
    let mut out = Response { hours: vec![0.0], t_u_c: vec![t_u], t_l_c: vec![t_l] };
    for k in 1..=steps {
        s = step_state(&sys, s, heat_kw);
        out.hours.push(k as f64 / 12.0);
        out.t_u_c.push(s.t_u);
        out.t_l_c.push(s.t_l);
    }
    Ok(out)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = plantDay)]
pub fn plant_day_js(mode: &str, seed: u32, showers: bool, t_inlet: f64) -> Result<String, JsError> {
    to_js(plant_day(mode, seed.into(), showers, t_inlet))
}

#[wasm_bindgen(js_name = mpcPlan)]
pub fn mpc_plan_js(t_u: f64, t_l: f64, tariff: &str, seed: u32, showers: bool) -> Result<String, JsError> {
    to_js(mpc_plan(t_u, t_l, tariff, seed.into(), showers))
}

#[wasm_bindgen(js_name = twoNodeResponse)]
pub fn two_node_response_js(t_u: f64, t_l: f64, heat_kw: f64, draw_kg_per_min: f64, lambda: f64, hours: f64) -> Result<String, JsError> {
    to_js(two_node_response(t_u, t_l, heat_kw, draw_kg_per_min, lambda, hours))
}
