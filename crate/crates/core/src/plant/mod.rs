//! Multi-node stratified tank used as the simulated plant, with the
//! built-in thermostat modes of a hybrid heat-pump water heater.
//!
//! Node 0 is the bottom of the tank. Each control step is split into
//! explicit substeps; within a substep cold inflow advects upward by one
//! upwind update, adjacent nodes exchange heat, and any density inversion
//! is removed by pooling the inverted nodes.

pub mod draws;

use std::collections::VecDeque;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tank::CP_WATER;

pub use draws::{bin_events, generate_draws, generate_events, DrawEvent, DrawScheduleSpec, Preset};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid plant configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Heat pump only, on a fixed hysteresis set-point.
    Hpowh,
    /// Heat pump with a fallback to the lower resistance element.
    Hybrid,
    /// Heat pump only, holding a constant 60 °C.
    Constant60,
    /// Heat pump only, following a set-point supplied each step.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub n_nodes: usize,
    pub volume_l: f64,
    pub element_upper_kw: f64,
    pub element_lower_kw: f64,
    /// Node heated by the lower element.
    pub element_lower_node: usize,
    pub hp_max_electrical_kw: f64,
    /// COP = cop_intercept + cop_slope · T_cond.
    pub cop_intercept: f64,
    pub cop_slope: f64,
    /// Share of heat-pump output delivered to each node, bottom first.
    pub hp_profile: Vec<f64>,
    /// Node read by the heat-pump thermostat.
    pub sensor_node: usize,
    /// Node read by the hybrid element trigger.
    pub upper_sensor_node: usize,
    /// Node of the lower thermistor reported to controllers.
    pub lower_sensor_node: usize,
    pub deadband: f64,
    pub default_setpoint: f64,
    pub hybrid_element_trigger: f64,
    /// Deadband used when following an external or constant set-point.
    pub external_deadband: f64,
    pub constant_setpoint: f64,
    /// Steps between a set-point command and its effect.
    pub setpoint_delay_steps: usize,
    /// Conductance between adjacent nodes from conduction and mixing, kW/°C.
    pub mixing_kw_per_c: f64,
    /// Extra exchange between adjacent nodes during draws, as a fraction of
    /// the through-flow heat capacity rate.
    pub draw_mixing: f64,
    /// Number of bottom nodes the cold inflow is spread over.
    pub inlet_nodes: usize,
    /// Remove density inversions by pooling nodes.
    pub buoyancy: bool,
    /// Tank-to-ambient resistance, °C/kW.
    pub r_a: f64,
    pub substeps: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            n_nodes: 10,
            volume_l: 189.3,
            element_upper_kw: 2.25,
            element_lower_kw: 4.5,
            element_lower_node: 2,
            hp_max_electrical_kw: 0.5,
            cop_intercept: 4.9,
            cop_slope: -0.04,
            hp_profile: vec![0.3, 0.25, 0.2, 0.15, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
            sensor_node: 9,
            upper_sensor_node: 6,
            lower_sensor_node: 2,
            deadband: 2.8,
            default_setpoint: 48.9,
            hybrid_element_trigger: 37.7,
            external_deadband: 0.5,
            constant_setpoint: 60.0,
            setpoint_delay_steps: 0,
            mixing_kw_per_c: 0.002,
            draw_mixing: 0.5,
            inlet_nodes: 1,
            buoyancy: true,
            r_a: 1476.0,
            substeps: 30,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: &str| Err(PlantError::Config(m.to_string()));
        if self.n_nodes < 2 {
            return bad("at least two nodes are required");
        }
        if self.hp_profile.len() != self.n_nodes {
            return bad("heat-pump profile must have one entry per node");
        }
        if self.hp_profile.iter().any(|w| *w < 0.0) || (self.hp_profile.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("heat-pump profile must be nonnegative and sum to 1");
        }
        if [self.sensor_node, self.upper_sensor_node, self.lower_sensor_node, self.element_lower_node].iter().any(|&i| i >= self.n_nodes) {
            return bad("sensor and element nodes must exist");
        }
        if !(self.element_upper_kw > 0.0 && self.element_lower_kw > 0.0 && self.hp_max_electrical_kw > 0.0) {
            return bad("heater powers must be positive");
        }
        if !(self.volume_l > 0.0 && self.r_a > 0.0 && self.substeps > 0) {
            return bad("volume, insulation and substeps must be positive");
        }
        if self.inlet_nodes == 0 || self.inlet_nodes > self.n_nodes {
            return bad("inlet must spread over 1..=n_nodes nodes");
        }
        if self.mixing_kw_per_c < 0.0 || self.draw_mixing < 0.0 {
            return bad("mixing must be nonnegative");
        }
        if self.cop(55.0) <= 1.0 {
            return bad("COP at 55 °C must exceed 1");
        }
        Ok(())
    }

    pub fn node_mass(&self) -> f64 {
        self.volume_l / self.n_nodes as f64
    }

    /// Heat capacity of one node, kWh/°C.
    pub fn node_capacity(&self) -> f64 {
        self.node_mass() * CP_WATER
    }

    pub fn cop(&self, t_cond: f64) -> f64 {
        (self.cop_intercept + self.cop_slope * t_cond).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Node temperatures, bottom first, °C.
    pub nodes: Vec<f64>,
    pub hp_on: bool,
    pub element_on: bool,
    pending: VecDeque<f64>,
}

impl PlantState {
    pub fn uniform(cfg: &PlantConfig, t: f64) -> Self {
        Self { nodes: vec![t; cfg.n_nodes], hp_on: false, element_on: false, pending: VecDeque::new() }
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Self {
        Self { nodes, hp_on: false, element_on: false, pending: VecDeque::new() }
    }

    /// Internal energy above 0 °C, kWh.
    pub fn energy(&self, cfg: &PlantConfig) -> f64 {
        cfg.node_capacity() * self.nodes.iter().sum::<f64>()
    }

    pub fn top(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn sensor(&self, cfg: &PlantConfig) -> f64 {
        self.nodes[cfg.sensor_node]
    }

    pub fn upper_sensor(&self, cfg: &PlantConfig) -> f64 {
        self.nodes[cfg.upper_sensor_node]
    }

    /// Upper and lower thermistor readings, as a controller sees them.
    pub fn measured_temps(&self, cfg: &PlantConfig) -> (f64, f64) {
        (self.sensor(cfg), self.nodes[cfg.lower_sensor_node])
    }

    /// Mean temperatures of the upper `z` fraction of the tank and of the
    /// rest, weighting a node split by the boundary proportionally.
    pub fn two_node_temps(&self, z: f64) -> (f64, f64) {
        let n = self.nodes.len() as f64;
        let boundary = (1.0 - z) * n;
        let (mut lower, mut upper) = (0.0, 0.0);
        for (i, t) in self.nodes.iter().enumerate() {
            let below = (boundary - i as f64).clamp(0.0, 1.0);
            lower += below * t;
            upper += (1.0 - below) * t;
        }
        (upper / (z * n), lower / ((1.0 - z) * n))
    }
}

/// Boundary inputs for one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInputs {
    pub mode: Mode,
    /// Commanded set-point (used by [`Mode::External`]), °C.
    pub setpoint: f64,
    /// Mass drawn over the step, kg.
    pub draw_kg: f64,
    pub t_a: f64,
    pub t_c: f64,
    pub dt: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepOutput {
    /// Mean electrical power over the step, kW.
    pub electrical_kw: f64,
    pub hp_electrical_kwh: f64,
    pub element_kwh: f64,
    /// Heat delivered to the water, kWh.
    pub heat_kwh: f64,
    pub loss_kwh: f64,
    /// Enthalpy carried out by the draw relative to the inlet, kWh.
    pub draw_kwh: f64,
    /// Lowest outlet temperature while water was flowing; the end-of-step
    /// top temperature when nothing was drawn.
    pub outlet: f64,
    /// Set-point in effect at the end of the step.
    pub effective_setpoint: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

impl StepOutput {
    /// Energy-balance residual, kWh.
    pub fn balance_residual(&self) -> f64 {
        self.energy_after - self.energy_before - (self.heat_kwh - self.loss_kwh - self.draw_kwh)
    }
}

fn hysteresis(on: bool, sensor: f64, setpoint: f64, deadband: f64) -> bool {
    if on {
        sensor < setpoint
    } else {
        sensor < setpoint - deadband
    }
}

/// Pools adjacent nodes until temperature is nondecreasing with height.
fn remove_inversions(nodes: &mut [f64]) {
    // Stack of (sum, count) blocks with nondecreasing means.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(nodes.len());
    for &t in nodes.iter() {
        let mut cur = (t, 1usize);
        while let Some(&(s, c)) = blocks.last() {
            if s / c as f64 > cur.0 / cur.1 as f64 {
                blocks.pop();
                cur = (cur.0 + s, cur.1 + c);
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    let mut i = 0;
    for (s, c) in blocks {
        let mean = s / c as f64;
        for t in &mut nodes[i..i + c] {
            *t = mean;
        }
        i += c;
    }
}

/// Advances the plant by one control step.
pub fn simulate_step(cfg: &PlantConfig, state: &mut PlantState, inputs: &StepInputs) -> StepOutput {
    let n = cfg.n_nodes;
    let dt_h = inputs.dt.num_milliseconds() as f64 / 3_600_000.0;
    let m = cfg.node_mass();
    let cap = cfg.node_capacity();
    let ua = 1.0 / cfg.r_a / n as f64;
    // Keep each advective substep below a tenth of a node volume.
    let substeps = cfg.substeps.max((inputs.draw_kg / (0.1 * m)).ceil() as usize);
    let h = dt_h / substeps as f64;
    let dm = inputs.draw_kg.max(0.0) / substeps as f64;
    let mdot_h = if dt_h > 0.0 { inputs.draw_kg.max(0.0) / dt_h } else { 0.0 };
    let g = cfg.mixing_kw_per_c + cfg.draw_mixing * mdot_h * CP_WATER;

    state.pending.push_back(inputs.setpoint);
    while state.pending.len() > cfg.setpoint_delay_steps + 1 {
        state.pending.pop_front();
    }
    let commanded = *state.pending.front().unwrap();
    let setpoint = match inputs.mode {
        Mode::Hpowh | Mode::Hybrid => cfg.default_setpoint,
        Mode::Constant60 => cfg.constant_setpoint,
        Mode::External => commanded,
    };

    let mut out = StepOutput { energy_before: state.energy(cfg), outlet: f64::INFINITY, effective_setpoint: setpoint, ..Default::default() };
    let mut heat = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..substeps {
        let sensor = state.sensor(cfg);
        match inputs.mode {
            Mode::Hybrid => {
                let (trigger, upper) = (cfg.hybrid_element_trigger, state.upper_sensor(cfg));
                state.element_on = if state.element_on { upper <= trigger + cfg.deadband } else { upper < trigger };
                state.hp_on = !state.element_on && hysteresis(state.hp_on, sensor, setpoint, cfg.deadband);
            }
            Mode::Hpowh => {
                state.element_on = false;
                state.hp_on = hysteresis(state.hp_on, sensor, setpoint, cfg.deadband);
            }
            Mode::Constant60 | Mode::External => {
                state.element_on = false;
                state.hp_on = hysteresis(state.hp_on, sensor, setpoint, cfg.external_deadband);
            }
        }
        heat.iter_mut().for_each(|q| *q = 0.0);
        if state.hp_on {
            let t_cond: f64 = cfg.hp_profile.iter().zip(&state.nodes).map(|(w, t)| w * t).sum();
            let q = cfg.hp_max_electrical_kw * cfg.cop(t_cond);
            for (hq, w) in heat.iter_mut().zip(&cfg.hp_profile) {
                *hq += q * w;
            }
            out.hp_electrical_kwh += cfg.hp_max_electrical_kw * h;
        }
        if state.element_on {
            heat[cfg.element_lower_node] += cfg.element_lower_kw;
            out.element_kwh += cfg.element_lower_kw * h;
        }
        if dm > 0.0 {
            out.outlet = out.outlet.min(state.top());
        }
        let t = &state.nodes;
        for i in 0..n {
            let loss = ua * (t[i] - inputs.t_a);
            let mut flux = 0.0;
            if i > 0 {
                flux += g * (t[i - 1] - t[i]);
            }
            if i + 1 < n {
                flux += g * (t[i + 1] - t[i]);
            }
            // Upward through-flow below node i, plus any direct inflow.
            let k = cfg.inlet_nodes;
            let mut adv = 0.0;
            if i > 0 {
                adv += dm * (i.min(k) as f64 / k as f64) * (t[i - 1] - t[i]);
            }
            if i < k {
                adv += dm / k as f64 * (inputs.t_c - t[i]);
            }
            next[i] = t[i] + h * (heat[i] - loss + flux) / cap + adv / m;
            out.heat_kwh += heat[i] * h;
            out.loss_kwh += loss * h;
        }
        out.draw_kwh += dm * CP_WATER * (t[n - 1] - inputs.t_c);
        state.nodes.copy_from_slice(&next);
        if cfg.buoyancy {
            remove_inversions(&mut state.nodes);
        }
    }
    if !out.outlet.is_finite() {
        out.outlet = state.top();
    }
    out.energy_after = state.energy(cfg);
    out.electrical_kw = if dt_h > 0.0 { (out.hp_electrical_kwh + out.element_kwh) / dt_h } else { 0.0 };
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tank::{discrete_system, step_state, TankParams, TankState, K_WATER};
    use crate::timeseries::control_step;

    fn inputs(mode: Mode, setpoint: f64, draw_kg: f64) -> StepInputs {
        StepInputs { mode, setpoint, draw_kg, t_a: 20.0, t_c: 18.0, dt: control_step() }
    }

    #[test]
    fn pooling_removes_inversions_and_conserves_heat() {
        let mut t = vec![40.0, 50.0, 45.0, 44.0, 60.0];
        let before: f64 = t.iter().sum();
        remove_inversions(&mut t);
        assert!(t.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        assert!((t.iter().sum::<f64>() - before).abs() < 1e-12);
        assert_eq!(t[0], 40.0);
        assert!((t[1] - 139.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn energy_balance_closes_every_step() {
        let cfg = PlantConfig::default();
        let mut s = PlantState::uniform(&cfg, 40.0);
        for k in 0..600 {
            let draw = if k % 37 < 3 { 30.0 } else { 0.0 };
            let mode = [Mode::Hpowh, Mode::Hybrid, Mode::Constant60, Mode::External][k % 4];
            let out = simulate_step(&cfg, &mut s, &inputs(mode, 55.0, draw));
            assert!(out.balance_residual().abs() < 1e-6, "step {k}: {}", out.balance_residual());
        }
    }

    #[test]
    fn standby_energy_is_nonincreasing() {
        let cfg = PlantConfig::default();
        let mut s = PlantState::from_nodes((0..10).map(|i| 40.0 + i as f64).collect());
        let mut e = s.energy(&cfg);
        for _ in 0..288 {
            // A set-point far below the tank keeps the heat pump off.
            simulate_step(&cfg, &mut s, &inputs(Mode::External, 20.0, 0.0));
            let now = s.energy(&cfg);
            assert!(now <= e + 1e-12);
            e = now;
        }
    }

    #[test]
    fn long_draw_flushes_to_inlet_temperature() {
        let cfg = PlantConfig::default();
        let mut s = PlantState::uniform(&cfg, 55.0);
        for _ in 0..60 {
            simulate_step(&cfg, &mut s, &StepInputs { t_a: 18.0, ..inputs(Mode::External, 0.0, 40.0) });
        }
        assert!(s.nodes.iter().all(|t| (t - 18.0).abs() < 1e-3), "{:?}", s.nodes);
    }

    #[test]
    fn hysteresis_switches_at_band_edges() {
        let cfg = PlantConfig::default();
        let mut s = PlantState::uniform(&cfg, 46.5);
        simulate_step(&cfg, &mut s, &inputs(Mode::Hpowh, 0.0, 0.0));
        assert!(!s.hp_on);
        let mut s = PlantState::uniform(&cfg, 45.0);
        let out = simulate_step(&cfg, &mut s, &inputs(Mode::Hpowh, 0.0, 0.0));
        assert!(out.hp_electrical_kwh > 0.0);
        assert_eq!(out.element_kwh, 0.0);
    }

    #[test]
    fn hybrid_uses_element_when_cold() {
        let cfg = PlantConfig::default();
        let mut s = PlantState::uniform(&cfg, 30.0);
        let out = simulate_step(&cfg, &mut s, &inputs(Mode::Hybrid, 0.0, 0.0));
        assert!(out.element_kwh > 0.0);
        assert_eq!(out.hp_electrical_kwh, 0.0);
    }

    #[test]
    fn setpoint_delay_is_applied() {
        let cfg = PlantConfig { setpoint_delay_steps: 1, ..PlantConfig::default() };
        let mut s = PlantState::uniform(&cfg, 45.0);
        let a = simulate_step(&cfg, &mut s, &inputs(Mode::External, 44.0, 0.0));
        assert_eq!(a.effective_setpoint, 44.0);
        let b = simulate_step(&cfg, &mut s, &inputs(Mode::External, 60.0, 0.0));
        assert_eq!(b.effective_setpoint, 44.0);
        assert_eq!(b.hp_electrical_kwh, 0.0);
        let c = simulate_step(&cfg, &mut s, &inputs(Mode::External, 60.0, 0.0));
        assert_eq!(c.effective_setpoint, 60.0);
        assert!(c.hp_electrical_kwh > 0.0);
    }

    #[test]
    fn heat_up_cop_averages_near_rated() {
        let cfg = PlantConfig::default();
        let mut s = PlantState::uniform(&cfg, 14.4);
        let (mut heat, mut elec) = (0.0, 0.0);
        for _ in 0..2000 {
            let out = simulate_step(&cfg, &mut s, &StepInputs { t_a: 20.0, ..inputs(Mode::Constant60, 0.0, 0.0) });
            if out.hp_electrical_kwh == 0.0 || s.sensor(&cfg) >= 51.7 {
                break;
            }
            heat += out.heat_kwh;
            elec += out.hp_electrical_kwh;
        }
        let cop = heat / elec;
        assert!((cop - 3.5).abs() < 0.15, "average COP {cop}");
    }

    #[test]
    fn two_node_plant_matches_control_model() {
        let cfg = PlantConfig {
            n_nodes: 2,
            hp_profile: vec![0.7, 0.3],
            sensor_node: 1,
            upper_sensor_node: 1,
            lower_sensor_node: 0,
            element_lower_node: 0,
            cop_intercept: 3.5,
            cop_slope: 0.0,
            mixing_kw_per_c: 1.0 / 251.553,
            draw_mixing: 0.0,
            buoyancy: false,
            substeps: 300,
            ..PlantConfig::default()
        };
        let p = TankParams {
            c: cfg.volume_l * CP_WATER,
            r_a: cfg.r_a,
            z: 0.5,
            lambda: 0.3,
            eta: 3.5,
            ..TankParams::default()
        };
        let p = p.with_h_s(251.553 * K_WATER * p.cross_section / 1000.0);
        let mut s = PlantState::from_nodes(vec![35.0, 45.0]);
        let mut model = TankState::new(45.0, 35.0);
        let mut worst: f64 = 0.0;
        for k in 0..288 {
            let draw = if (84..86).contains(&k) || (240..242).contains(&k) { 40.0 } else if k % 20 == 0 { 3.0 } else { 0.0 };
            let sp = if (100..160).contains(&k) { 58.0 } else { 30.0 };
            let out = simulate_step(&cfg, &mut s, &inputs(Mode::External, sp, draw));
            let dt = control_step();
            let q = out.heat_kwh / (dt.num_seconds() as f64 / 3600.0);
            let sys = discrete_system(&p, draw / 5.0 * 60.0, 20.0, 18.0, dt).unwrap();
            model = step_state(&sys, model, q);
            worst = worst.max((model.t_u - s.nodes[1]).abs()).max((model.t_l - s.nodes[0]).abs());
        }
        assert!(worst < 0.5, "max deviation {worst}");
    }

    #[test]
    fn two_node_split_of_ten_nodes() {
        let s = PlantState::from_nodes((0..10).map(|i| i as f64).collect());
        let (u, l) = s.two_node_temps(0.5);
        assert!((u - 7.0).abs() < 1e-12 && (l - 2.0).abs() < 1e-12);
        let (u, l) = s.two_node_temps(0.25);
        assert!((u - 8.2).abs() < 1e-12, "{u}");
        assert!((l - (0.0 + 1.0 + 2.0 + 3.0 + 4.0 + 5.0 + 6.0 + 0.5 * 7.0) / 7.5).abs() < 1e-12);
    }
}
