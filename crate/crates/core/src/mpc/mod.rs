//! Receding-horizon set-point controller.
//!
//! Each control step plans heat-pump output `q`, set-points `T_s` and node
//! temperatures over the horizon by solving one linear program, then applies
//! the first planned set-point after rounding it to whole degrees Fahrenheit.


use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::{DrawForecast, DrawForecaster, ForecastError, HistoryView, HORIZON};
use crate::lp::{DenseSimplex, InteriorPoint, LinearProgram, LpError, LpSolver, LpStatus, RowSense};
use crate::tank::{DiscreteParts, DiscreteSystem, TankError, TankParams, TankState};
use crate::tariff::{Tariff, TariffError};
use crate::timeseries::SimClock;

/// Decision-variable count quoted alongside the audit. Our own count of the
/// temperature, output and set-point variables is 2(J+1) + 2J.
pub const REFERENCE_VARIABLE_COUNT: usize = 1174;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverChoice {
    InteriorPoint,
    DenseSimplex,
}

impl SolverChoice {
    pub fn build(self) -> Box<dyn LpSolver + Send + Sync> {
        match self {
            SolverChoice::InteriorPoint => Box::new(InteriorPoint::default()),
            SolverChoice::DenseSimplex => Box::new(DenseSimplex::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub step_minutes: i64,
    pub t_min: f64,
    pub t_bact: f64,
    pub t_s_max: f64,
    /// Floor applied after rounding; not a constraint of the program.
    pub t_s_min_apply: f64,
    pub a: f64,
    pub gamma_multiplier: f64,
    pub phi: f64,
    pub big_phi: f64,
    pub bact_window: usize,
    pub bact_lookback: usize,
    /// Ambient estimate: thermostat set-point minus an offset.
    pub thermostat_setpoint: f64,
    pub ambient_offset: f64,
    /// Inlet estimate used until a large draw has been observed.
    pub inlet_fallback: f64,
    pub initial_setpoint: f64,
    pub solver: SolverChoice,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: HORIZON,
            step_minutes: 5,
            t_min: 37.7,
            t_bact: 48.8,
            t_s_max: 60.0,
            t_s_min_apply: 43.3,
            a: 0.8,
            gamma_multiplier: 10.0,
            phi: 0.75,
            big_phi: 18.0,
            bact_window: 24,
            bact_lookback: 4,
            thermostat_setpoint: 20.0,
            ambient_offset: 1.7,
            inlet_fallback: 18.0,
            initial_setpoint: 48.9,
            solver: SolverChoice::InteriorPoint,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: &str| Err(MpcError::Config(m.to_string()));
        if self.horizon == 0 || self.step_minutes <= 0 {
            return bad("horizon and step must be positive");
        }
        let positive = [self.t_min, self.t_bact, self.t_s_max, self.t_s_min_apply, self.gamma_multiplier, self.phi, self.big_phi];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("thresholds must be positive");
        }
        if !(self.t_min < self.t_bact && self.t_bact < self.t_s_max) {
            return bad("require T_min < T_bact < T_s,max");
        }
        if self.t_s_min_apply > self.t_s_max {
            return bad("set-point floor exceeds T_s,max");
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return bad("tracking parameter must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn step(&self) -> Duration {
        Duration::minutes(self.step_minutes)
    }

    pub fn step_hours(&self) -> f64 {
        self.step_minutes as f64 / 60.0
    }

    pub fn ambient_estimate(&self) -> f64 {
        self.thermostat_setpoint - self.ambient_offset
    }

    /// Penalty weight, $/(°C·h).
    pub fn gamma(&self, prices: &[f64]) -> f64 {
        self.gamma_multiplier * prices.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error("input has wrong shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Tariff(#[from] TariffError),
    #[error(transparent)]
    Tank(#[from] TankError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Bacteria-penalty indicator for lookaheads `1..=J`; entry `j − 1` is π(j).
///
/// `recorded` holds measured flows up to and including the current sample,
/// which stand in for lookaheads `j ≤ 0`.
pub fn compute_pi(forecast: &[f64], recorded: &[f64], config: &MpcConfig) -> Vec<bool> {
    let horizon = forecast.len();
    let mhat = |i: isize| -> f64 {
        if i >= 1 {
            forecast[i as usize - 1]
        } else {
            let idx = recorded.len() as isize - 1 + i;
            if idx >= 0 {
                recorded[idx as usize]
            } else {
                0.0
            }
        }
    };
    let dt_min = config.step_minutes as f64;
    (1..=horizon as isize)
        .map(|j| {
            let spike = (0..=config.bact_lookback as isize).any(|i| mhat(j - i) > config.phi);
            let mass: f64 = dt_min * (j - config.bact_window as isize..=j).map(mhat).sum::<f64>();
            !(spike || mass > config.big_phi)
        })
        .collect()
}

/// One horizon's worth of planning data.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub initial_state: TankState,
    /// `systems[j]` carries the state from plan step `j` to `j + 1`.
    pub systems: Vec<DiscreteSystem>,
    /// `prices[j]` applies to plan step `j`, $/kWh.
    pub prices: Vec<f64>,
    /// `pi[j − 1]` switches the bacteria penalty on at plan state `j`.
    pub pi: Vec<bool>,
    pub gamma: f64,
    pub params: TankParams,
    pub config: MpcConfig,
}

/// Column indices of the program built by [`MpcProblem::to_lp`].
#[derive(Debug, Clone)]
pub struct VariableLayout {
    pub t_u: Vec<usize>,
    pub t_l: Vec<usize>,
    pub q: Vec<usize>,
    pub t_s: Vec<usize>,
    /// Comfort slack for plan states `1..=J`.
    pub comfort: Vec<usize>,
    /// Bacteria slack for plan states `1..=J`, where π is 1.
    pub bacteria: Vec<Option<usize>>,
}

/// Constraint counts before and after the positive-part reformulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemAudit {
    /// Initial-state and dynamics equalities.
    pub equalities: usize,
    /// Set-point limits plus both sides of the capacity bound.
    pub inequalities: usize,
    /// Set-point tracking equalities, counted separately.
    pub tracking_equalities: usize,
    /// T_u, T_l, q and T_s columns.
    pub decision_variables: usize,
    pub epigraph_variables: usize,
    /// Epigraph rows plus slack sign bounds.
    pub epigraph_inequalities: usize,
}

impl MpcProblem {
    pub fn horizon(&self) -> usize {
        self.systems.len()
    }

    pub fn to_lp(&self) -> (LinearProgram, VariableLayout) {
        let n = self.horizon();
        let cfg = &self.config;
        let dt = cfg.step_hours();
        let penalty = self.gamma * dt;
        let mut lp = LinearProgram::new();
        let mut layout = VariableLayout {
            t_u: Vec::with_capacity(n + 1),
            t_l: Vec::with_capacity(n + 1),
            q: Vec::with_capacity(n),
            t_s: Vec::with_capacity(n),
            comfort: Vec::with_capacity(n),
            bacteria: Vec::with_capacity(n),
        };
        for j in 0..=n {
            layout.t_u.push(lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY));
            layout.t_l.push(lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY));
            if j >= 1 {
                layout.comfort.push(lp.add_var(penalty, 0.0, f64::INFINITY));
                layout.bacteria.push(self.pi[j - 1].then(|| lp.add_var(penalty, 0.0, f64::INFINITY)));
            }
            if j < n {
                let energy = dt / self.params.eta * self.prices[j];
                layout.q.push(lp.add_var(energy, 0.0, self.params.q_max()));
                layout.t_s.push(lp.add_var(0.0, f64::NEG_INFINITY, cfg.t_s_max));
            }
        }
        let (tu, tl) = (&layout.t_u, &layout.t_l);
        lp.add_row(vec![(tu[0], 1.0)], RowSense::Eq, self.initial_state.t_u);
        lp.add_row(vec![(tl[0], 1.0)], RowSense::Eq, self.initial_state.t_l);
        for (j, sys) in self.systems.iter().enumerate() {
            let q = layout.q[j];
            for (r, next) in [(0, tu[j + 1]), (1, tl[j + 1])] {
                lp.add_row(
                    vec![(next, 1.0), (tu[j], -sys.a[(r, 0)]), (tl[j], -sys.a[(r, 1)]), (q, -sys.b[r])],
                    RowSense::Eq,
                    sys.w[r],
                );
            }
            lp.add_row(vec![(tu[j + 1], 1.0), (tu[j], -cfg.a), (layout.t_s[j], cfg.a - 1.0)], RowSense::Eq, 0.0);
            lp.add_row(vec![(tu[j + 1], 1.0), (layout.comfort[j], 1.0)], RowSense::Ge, cfg.t_min);
            if let Some(s) = layout.bacteria[j] {
                lp.add_row(vec![(tu[j + 1], 0.5), (tl[j + 1], 0.5), (s, 1.0)], RowSense::Ge, cfg.t_bact);
            }
        }
        (lp, layout)
    }

    pub fn audit(&self) -> ProblemAudit {
        let (lp, layout) = self.to_lp();
        let finite_bounds = |cols: &[usize]| {
            cols.iter().map(|&c| lp.lower[c].is_finite() as usize + lp.upper[c].is_finite() as usize).sum::<usize>()
        };
        let n = self.horizon();
        let slacks: Vec<usize> = layout.comfort.iter().copied().chain(layout.bacteria.iter().flatten().copied()).collect();
        let eq_rows = lp.rows.iter().filter(|r| r.sense == RowSense::Eq).count();
        let ineq_rows = lp.rows.len() - eq_rows;
        ProblemAudit {
            equalities: eq_rows - n,
            inequalities: finite_bounds(&layout.q) + finite_bounds(&layout.t_s),
            tracking_equalities: n,
            decision_variables: layout.t_u.len() + layout.t_l.len() + layout.q.len() + layout.t_s.len(),
            epigraph_variables: slacks.len(),
            epigraph_inequalities: ineq_rows + finite_bounds(&slacks),
        }
    }

    /// Objective terms of a plan, using positive parts directly.
    pub fn plan_cost(&self, t_u: &[f64], t_l: &[f64], q: &[f64]) -> PlanCost {
        let dt = self.config.step_hours();
        let cfg = &self.config;
        let energy = q.iter().zip(&self.prices).map(|(q, c)| dt / self.params.eta * c * q).sum();
        let comfort = self.gamma * dt * t_u[1..].iter().map(|t| (cfg.t_min - t).max(0.0)).sum::<f64>();
        let bacteria = self.gamma
            * dt
            * (1..t_u.len())
                .filter(|&j| self.pi[j - 1])
                .map(|j| (cfg.t_bact - 0.5 * (t_u[j] + t_l[j])).max(0.0))
                .sum::<f64>();
        PlanCost { energy, comfort, bacteria }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanCost {
    pub energy: f64,
    pub comfort: f64,
    pub bacteria: f64,
}

impl PlanCost {
    pub fn total(&self) -> f64 {
        self.energy + self.comfort + self.bacteria
    }
}

/// Builds the planning problem from a flow forecast (kg/min) and price window.
#[allow(clippy::too_many_arguments)]
pub fn build_problem(
    state: TankState,
    params: &TankParams,
    config: &MpcConfig,
    forecast: &DrawForecast,
    recorded: &[f64],
    prices: &[f64],
    t_a_hat: f64,
    t_c_hat: f64,
) -> Result<MpcProblem, MpcError> {
    config.validate()?;
    params.validate()?;
    let n = config.horizon;
    if forecast.horizon() < n || prices.len() < n {
        return Err(MpcError::Shape(format!(
            "need {n} forecast values and prices, got {} and {}",
            forecast.horizon(),
            prices.len()
        )));
    }
    let step = config.step();
    let flows = &forecast.values[..n];
    let mut systems = Vec::with_capacity(n);
    let mut cached: Option<(f64, DiscreteParts)> = None;
    for &m in flows {
        let parts = match cached {
            Some((prev, parts)) if prev == m => parts,
            _ => {
                let parts = DiscreteParts::new(params, m * 60.0, step)?;
                cached = Some((m, parts));
                parts
            }
        };
        systems.push(parts.system(t_a_hat, t_c_hat, step));
    }
    let prices = prices[..n].to_vec();
    Ok(MpcProblem {
        initial_state: state,
        systems,
        pi: compute_pi(flows, recorded, config),
        gamma: config.gamma(&prices),
        prices,
        params: *params,
        config: *config,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub t_u_plan: Vec<f64>,
    pub t_l_plan: Vec<f64>,
    pub q_plan: Vec<f64>,
    pub t_s_plan: Vec<f64>,
    pub objective_value: f64,
    pub cost: PlanCost,
    pub applied_setpoint: f64,
    pub solver_status: LpStatus,
    pub iterations: usize,
    pub solve_seconds: f64,
}

pub fn celsius_to_fahrenheit(c: f64) -> f64 {
    c * 9.0 / 5.0 + 32.0
}

pub fn fahrenheit_to_celsius(f: f64) -> f64 {
    (f - 32.0) * 5.0 / 9.0
}

/// Rounds to whole °F, clamps to the applicable range and converts back.
pub fn quantize_setpoint(t_s: f64, config: &MpcConfig) -> f64 {
    let lo = celsius_to_fahrenheit(config.t_s_min_apply).round();
    let hi = celsius_to_fahrenheit(config.t_s_max).round();
    fahrenheit_to_celsius(celsius_to_fahrenheit(t_s).round().clamp(lo, hi))
}

/// Seconds since the call; always zero on wasm32, where std has no clock.
#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> f64 {
    let started = std::time::Instant::now();
    move || started.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> f64 {
    || 0.0
}

pub fn solve(problem: &MpcProblem, solver: &dyn LpSolver) -> Result<MpcSolution, MpcError> {
    let elapsed = stopwatch();
    let (lp, layout) = problem.to_lp();
    let sol = solver.solve(&lp)?;
    let pick = |cols: &[usize]| cols.iter().map(|&c| sol.x[c]).collect::<Vec<f64>>();
    let t_u_plan = pick(&layout.t_u);
    let t_l_plan = pick(&layout.t_l);
    let q_plan = pick(&layout.q);
    let t_s_plan = pick(&layout.t_s);
    let cost = problem.plan_cost(&t_u_plan, &t_l_plan, &q_plan);
    let applied_setpoint = quantize_setpoint(t_s_plan[0], &problem.config);
    Ok(MpcSolution {
        t_u_plan,
        t_l_plan,
        q_plan,
        t_s_plan,
        objective_value: sol.objective,
        cost,
        applied_setpoint,
        solver_status: sol.status,
        iterations: sol.iterations,
        solve_seconds: elapsed(),
    })
}

/// What the controller sees at a control instant.
#[derive(Debug, Clone, Copy)]
pub struct Measurements<'a> {
    /// Recorded samples up to and including the most recent one.
    pub history: HistoryView<'a>,
    pub state: TankState,
    /// Inlet temperature measured over the most recent sample.
    pub t_c: f64,
}

/// Stateful receding-horizon controller with a hold-last-value fail-safe.
pub struct Controller {
    pub params: TankParams,
    pub config: MpcConfig,
    solver: Box<dyn LpSolver + Send + Sync>,
    setpoint: f64,
    inlet_estimate: Option<f64>,
    last_solution: Option<MpcSolution>,
    last_fault: Option<String>,
    faults: usize,
}

impl Controller {
    pub fn new(params: TankParams, config: MpcConfig) -> Self {
        let solver = config.solver.build();
        Self::with_solver(params, config, solver)
    }

    pub fn with_solver(params: TankParams, config: MpcConfig, solver: Box<dyn LpSolver + Send + Sync>) -> Self {
        Self {
            params,
            setpoint: quantize_setpoint(config.initial_setpoint, &config),
            config,
            solver,
            inlet_estimate: None,
            last_solution: None,
            last_fault: None,
            faults: 0,
        }
    }

    pub fn setpoint(&self) -> f64 {
        self.setpoint
    }

    pub fn last_solution(&self) -> Option<&MpcSolution> {
        self.last_solution.as_ref()
    }

    pub fn last_fault(&self) -> Option<&str> {
        self.last_fault.as_deref()
    }

    pub fn fault_count(&self) -> usize {
        self.faults
    }

    /// Tracks the lowest inlet temperature seen during large draws.
    pub fn observe_inlet(&mut self, t_c: f64, mdot: f64) {
        if mdot > self.config.phi && t_c.is_finite() {
            self.inlet_estimate = Some(self.inlet_estimate.map_or(t_c, |e| e.min(t_c)));
        }
    }

    pub fn inlet_estimate(&self) -> f64 {
        self.inlet_estimate.unwrap_or(self.config.inlet_fallback)
    }

    /// Forecast, plan and solve without touching the held set-point.
    pub fn plan(
        &self,
        clock: &SimClock,
        meas: &Measurements<'_>,
        forecaster: &dyn DrawForecaster,
        tariff: &Tariff,
    ) -> Result<MpcSolution, MpcError> {
        let k = meas
            .history
            .len()
            .checked_sub(1)
            .ok_or_else(|| MpcError::Shape("empty measurement history".into()))?;
        let forecast = forecaster.forecast(&meas.history, k)?;
        let prices = tariff.price_window(&clock.wall_time(), self.config.step(), self.config.horizon)?;
        let problem = build_problem(
            meas.state,
            &self.params,
            &self.config,
            &forecast,
            meas.history.mdot,
            &prices,
            self.config.ambient_estimate(),
            self.inlet_estimate(),
        )?;
        solve(&problem, self.solver.as_ref())
    }

    /// Returns the set-point to apply for the next step. Any failure keeps
    /// the previous set-point.
    pub fn control_step(
        &mut self,
        clock: &SimClock,
        meas: &Measurements<'_>,
        forecaster: &dyn DrawForecaster,
        tariff: &Tariff,
    ) -> f64 {
        if let Some(&m) = meas.history.mdot.last() {
            self.observe_inlet(meas.t_c, m);
        }
        match self.plan(clock, meas, forecaster, tariff) {
            Ok(sol) => {
                log::debug!(
                    "k={} setpoint={:.2} objective={:.5} iterations={} solve={:.4}s",
                    clock.k,
                    sol.applied_setpoint,
                    sol.objective_value,
                    sol.iterations,
                    sol.solve_seconds
                );
                self.setpoint = sol.applied_setpoint;
                self.last_solution = Some(sol);
                self.last_fault = None;
            }
            Err(e) => {
                log::warn!("k={}: control step failed, holding {:.2} °C: {e}", clock.k, self.setpoint);
                self.faults += 1;
                self.last_fault = Some(e.to_string());
            }
        }
        self.setpoint
    }
}

#[cfg(test)]
mod tests;
