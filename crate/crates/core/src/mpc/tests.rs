use super::*;
use crate::forecast::HistoryBundle;
use crate::timeseries::{control_step, parse_timestamp, TimeSeries, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn short_config(horizon: usize) -> MpcConfig {
    MpcConfig { horizon, ..MpcConfig::default() }
}

fn problem(horizon: usize, state: TankState, flows: Vec<f64>, prices: Vec<f64>) -> MpcProblem {
    let cfg = short_config(horizon);
    let fc = DrawForecast { origin_k: 0, values: flows };
    build_problem(state, &TankParams::default(), &cfg, &fc, &[], &prices, 18.3, 18.0).unwrap()
}

/// Rolls the dynamics forward for a given q sequence; None when a set-point
/// above the limit would be needed.
fn rollout_cost(p: &MpcProblem, q: &[f64]) -> Option<f64> {
    let cfg = &p.config;
    let dt = cfg.step_hours();
    let (mut tu, mut tl) = (p.initial_state.t_u, p.initial_state.t_l);
    let mut cost = 0.0;
    for (j, sys) in p.systems.iter().enumerate() {
        let nu = sys.a[(0, 0)] * tu + sys.a[(0, 1)] * tl + sys.b[0] * q[j] + sys.w[0];
        let nl = sys.a[(1, 0)] * tu + sys.a[(1, 1)] * tl + sys.b[1] * q[j] + sys.w[1];
        let ts = (nu - cfg.a * tu) / (1.0 - cfg.a);
        if ts > cfg.t_s_max + 1e-12 {
            return None;
        }
        cost += dt / p.params.eta * p.prices[j] * q[j];
        cost += p.gamma * dt * (cfg.t_min - nu).max(0.0);
        if p.pi[j] {
            cost += p.gamma * dt * (cfg.t_bact - 0.5 * (nu + nl)).max(0.0);
        }
        tu = nu;
        tl = nl;
    }
    Some(cost)
}

#[test]
fn pi_all_zero_forecast() {
    assert!(compute_pi(&[0.0; 288], &[], &MpcConfig::default()).iter().all(|&p| p));
}

#[test]
fn pi_single_spike() {
    let mut f = vec![0.0; 288];
    f[9] = 1.0;
    let pi = compute_pi(&f, &[], &MpcConfig::default());
    for j in 1..=288 {
        assert_eq!(pi[j - 1], !(10..=14).contains(&j), "j = {j}");
    }
}

#[test]
fn pi_sustained_flow() {
    let mut f = vec![0.0; 288];
    for v in f.iter_mut().take(40) {
        *v = 0.5;
    }
    let pi = compute_pi(&f, &[], &MpcConfig::default());
    // Window mass 2.5·n kg after n steps first exceeds 18 kg at n = 8.
    assert!(pi[..7].iter().all(|&p| p));
    assert!(!pi[7]);
    let first_on = pi[7..].iter().position(|&p| p).unwrap() + 7;
    // The window drains below 18 kg once at most 7 flowing steps remain in it.
    assert_eq!(first_on + 1, 40 + 25 - 7);
}

#[test]
fn pi_uses_recorded_history() {
    let pi = compute_pi(&[0.0; 10], &[0.0, 0.0, 1.2], &MpcConfig::default());
    assert_eq!(pi, [false, false, false, false, true, true, true, true, true, true]);
}

#[test]
fn gamma_from_peak_price() {
    assert!((MpcConfig::default().gamma(&[0.082, 0.251, 0.1]) - 2.51).abs() < 1e-12);
}

#[test]
fn zero_forecast_gives_identical_systems() {
    let p = problem(288, TankState::new(50.0, 45.0), vec![0.0; 288], vec![0.1241; 288]);
    assert!(p.systems.windows(2).all(|w| w[0] == w[1]));
    assert!(p.pi.iter().all(|&x| x));
}

#[test]
fn audit_counts() {
    let p = problem(288, TankState::new(50.0, 45.0), vec![0.0; 288], vec![0.1241; 288]);
    let audit = p.audit();
    assert_eq!(audit.equalities, 578);
    assert_eq!(audit.inequalities, 864);
    assert_eq!(audit.tracking_equalities, 288);
    assert_eq!(audit.decision_variables, 1154);
    assert_eq!(audit.epigraph_variables, 576);
    assert_eq!(audit.epigraph_inequalities, 4 * 288);
}

#[test]
fn no_heating_when_hot_and_no_draws() {
    let p = problem(2, TankState::new(60.0, 60.0), vec![0.0; 2], vec![1.0; 2]);
    for solver in [SolverChoice::InteriorPoint, SolverChoice::DenseSimplex] {
        let sol = solve(&p, solver.build().as_ref()).unwrap();
        assert!(sol.q_plan.iter().all(|q| q.abs() < 1e-7), "{:?}", sol.q_plan);
        assert!(sol.objective_value.abs() < 1e-7);
    }
}

#[test]
fn matches_grid_search_at_horizon_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let state = TankState::new(rng.gen_range(36.0..52.0), rng.gen_range(30.0..50.0));
        let flows = (0..2).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..3.0) } else { 0.0 }).collect();
        let prices = (0..2).map(|_| rng.gen_range(0.05..0.3)).collect();
        let p = problem(2, state, flows, prices);
        let sol = solve(&p, &InteriorPoint::default()).unwrap();
        let qmax = p.params.q_max();
        let steps = (qmax / 0.01).floor() as usize;
        let mut best = f64::INFINITY;
        for a in 0..=steps {
            for b in 0..=steps {
                if let Some(c) = rollout_cost(&p, &[a as f64 * 0.01, b as f64 * 0.01]) {
                    best = best.min(c);
                }
            }
        }
        // Lipschitz bound of the objective in q, times the grid spacing.
        let dt = p.config.step_hours();
        let slope = 2.0 * (dt / p.params.eta * 0.3 + 2.0 * p.gamma * dt * 0.01);
        assert!(sol.objective_value <= best + 1e-7);
        assert!(best - sol.objective_value <= 0.01 * slope + 1e-7, "lp {} grid {best}", sol.objective_value);
    }
}

#[test]
fn full_horizon_solution_is_feasible_and_consistent() {
    let mut flows = vec![0.0; 288];
    for v in &mut flows[20..26] {
        *v = 8.0;
    }
    let prices: Vec<f64> = (0..288).map(|j| if (60..132).contains(&j) { 0.251 } else { 0.082 }).collect();
    let p = problem(288, TankState::new(45.0, 30.0), flows, prices);
    let (lp, _) = p.to_lp();
    let sol = solve(&p, &InteriorPoint::default()).unwrap();
    assert!(sol.solve_seconds < 1.0, "solve took {}s", sol.solve_seconds);
    let mut x = Vec::new();
    let (_, layout) = p.to_lp();
    x.resize(lp.num_vars(), 0.0);
    for (cols, vals) in [(&layout.t_u, &sol.t_u_plan), (&layout.t_l, &sol.t_l_plan), (&layout.q, &sol.q_plan), (&layout.t_s, &sol.t_s_plan)] {
        for (&c, &v) in cols.iter().zip(vals.iter()) {
            x[c] = v;
        }
    }
    for (j, &c) in layout.comfort.iter().enumerate() {
        x[c] = (p.config.t_min - sol.t_u_plan[j + 1]).max(0.0);
    }
    for (j, s) in layout.bacteria.iter().enumerate() {
        if let Some(c) = *s {
            x[c] = (p.config.t_bact - 0.5 * (sol.t_u_plan[j + 1] + sol.t_l_plan[j + 1])).max(0.0);
        }
    }
    assert!(lp.max_violation(&x) < 1e-6, "violation {}", lp.max_violation(&x));
    assert!((sol.cost.total() - sol.objective_value).abs() < 1e-6);
    assert!(sol.t_s_plan.iter().all(|&t| t <= 60.0 + 1e-6));
}

#[test]
fn solvers_agree_on_short_horizon() {
    let flows = vec![0.0, 0.0, 6.0, 6.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let prices: Vec<f64> = (0..12).map(|j| 0.08 + 0.02 * j as f64).collect();
    let p = problem(12, TankState::new(47.0, 35.0), flows, prices);
    let a = solve(&p, &InteriorPoint::default()).unwrap();
    let b = solve(&p, &DenseSimplex::default()).unwrap();
    assert!((a.objective_value - b.objective_value).abs() < 1e-6);
}

#[test]
fn quantization_rounds_in_fahrenheit_and_clamps() {
    let cfg = MpcConfig::default();
    assert!((quantize_setpoint(48.8, &cfg) - fahrenheit_to_celsius(120.0)).abs() < 1e-12);
    assert!((quantize_setpoint(20.0, &cfg) - fahrenheit_to_celsius(110.0)).abs() < 1e-12);
    assert!((quantize_setpoint(75.0, &cfg) - 60.0).abs() < 1e-12);
    let f = celsius_to_fahrenheit(quantize_setpoint(51.234, &cfg));
    assert!((f - f.round()).abs() < 1e-9);
}

struct Failing;

impl DrawForecaster for Failing {
    fn forecast(&self, _: &HistoryView<'_>, _: usize) -> Result<DrawForecast, ForecastError> {
        Err(ForecastError::Numerical("injected".into()))
    }
}

struct Zero;

impl DrawForecaster for Zero {
    fn forecast(&self, _: &HistoryView<'_>, k: usize) -> Result<DrawForecast, ForecastError> {
        Ok(DrawForecast::zeros(k, HORIZON))
    }
}

fn bundle(n: usize) -> HistoryBundle {
    let t0 = parse_timestamp("2024-06-03T00:00:00-04:00").unwrap();
    HistoryBundle::new(
        TimeSeries::new(t0, control_step(), vec![0.0; n], Unit::KgPerMin).unwrap(),
        TimeSeries::new(t0, control_step(), vec![50.0; n], Unit::Celsius).unwrap(),
        TimeSeries::new(t0, control_step(), vec![45.0; n], Unit::Celsius).unwrap(),
    )
    .unwrap()
}

#[test]
fn forecaster_failure_holds_previous_setpoint() {
    let h = bundle(24);
    let clock = SimClock::new(h.mdot.start(), control_step()).at(24);
    let meas = Measurements { history: h.view(), state: TankState::new(50.0, 45.0), t_c: 18.0 };
    let mut ctl = Controller::new(TankParams::default(), MpcConfig::default());
    let first = ctl.control_step(&clock, &meas, &Zero, &Tariff::flat());
    assert!(ctl.last_fault().is_none());
    let held = ctl.control_step(&clock.at(25), &meas, &Failing, &Tariff::flat());
    assert_eq!(first, held);
    assert_eq!(ctl.fault_count(), 1);
    assert!(ctl.last_fault().unwrap().contains("injected"));
}

#[test]
fn inlet_estimate_tracks_large_draws() {
    let mut ctl = Controller::new(TankParams::default(), MpcConfig::default());
    assert_eq!(ctl.inlet_estimate(), 18.0);
    ctl.observe_inlet(12.0, 0.1);
    assert_eq!(ctl.inlet_estimate(), 18.0);
    ctl.observe_inlet(16.0, 5.0);
    ctl.observe_inlet(17.0, 5.0);
    assert_eq!(ctl.inlet_estimate(), 16.0);
}
