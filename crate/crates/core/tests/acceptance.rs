//! Acceptance criteria 1 to 13. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; pass criterion numbers as arguments
//! to run a subset (`cargo test --test acceptance -- 2 11`).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use chrono::{DateTime, FixedOffset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hpwh_core::forecast::linear::FourierModel;
use hpwh_core::forecast::{
    backtest, build_features, metrics, BacktestOptions, DrawForecast, Ensemble, EnsembleConfig, ForecastInput,
    HistoryBundle, Member, ModelId, ModelOptions,
};
use hpwh_core::mpc::{build_problem, compute_pi, solve, MpcConfig, MpcProblem, SolverChoice, REFERENCE_VARIABLE_COUNT};
use hpwh_core::plant::{generate_draws, DrawScheduleSpec};
use hpwh_core::scenario::{
    energy_in_hours, hourly_energy_price_correlation, payback_months, run, write_result, ControlMode, DrawSource, ScenarioResult,
    ScenarioSpec, COMFORT_FLOOR,
};
use hpwh_core::tank::{discrete_system, step_state, TankParams, TankState};
use hpwh_core::tariff::{synthetic_hourly_prices, Tariff, FLAT_RATE};
use hpwh_core::timeseries::{control_step, parse_timestamp, TimeSeries, Unit};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn month_start() -> DateTime<FixedOffset> {
    parse_timestamp("2024-06-01T00:00:00-04:00").unwrap()
}

/// Right-hand side of the two-node energy balances, written out per node.
/// Time in hours, flow in kg/h.
fn node_balance(p: &TankParams, t: [f64; 2], mdot: f64, t_a: f64, t_c: f64, q: f64) -> [f64; 2] {
    let (tu, tl) = (t[0], t[1]);
    let g_ul = 1.0 / p.r_ul;
    let g_a = 1.0 / p.r_a;
    let flow = mdot * p.cp;
    let upper = g_ul * (tl - tu) + p.z * g_a * (t_a - tu) + flow * (tl - tu) + p.lambda * q;
    let lower = g_ul * (tu - tl) + (1.0 - p.z) * g_a * (t_a - tl) + flow * (t_c - tl) + (1.0 - p.lambda) * q;
    [upper / (p.z * p.c), lower / ((1.0 - p.z) * p.c)]
}

fn rk4_five_minutes(p: &TankParams, mut t: [f64; 2], mdot: f64, t_a: f64, t_c: f64, q: f64) -> [f64; 2] {
    let h = 1.0 / 3600.0;
    let f = |t: [f64; 2]| node_balance(p, t, mdot, t_a, t_c, q);
    let axpy = |t: [f64; 2], k: [f64; 2], s: f64| [t[0] + s * k[0], t[1] + s * k[1]];
    for _ in 0..300 {
        let k1 = f(t);
        let k2 = f(axpy(t, k1, h / 2.0));
        let k3 = f(axpy(t, k2, h / 2.0));
        let k4 = f(axpy(t, k3, h));
        for i in 0..2 {
            t[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    t
}

fn c1_discretization() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = TankParams {
            c: rng.gen_range(0.1..0.4),
            r_a: rng.gen_range(300.0..3000.0),
            z: rng.gen_range(0.1..0.9),
            lambda: rng.gen_range(0.0..=1.0),
            eta: rng.gen_range(2.0..5.0),
            p_max: rng.gen_range(0.3..1.0),
            ..TankParams::default()
        }
        .with_h_s(rng.gen_range(0.005..0.1));
        let state = TankState::new(rng.gen_range(20.0..65.0), rng.gen_range(10.0..60.0));
        let mdot = if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.0..900.0) };
        let (t_a, t_c) = (rng.gen_range(5.0..35.0), rng.gen_range(2.0..25.0));
        let q = rng.gen_range(0.0..=p.q_max());
        let sys = discrete_system(&p, mdot, t_a, t_c, control_step()).map_err(|e| e.to_string())?;
        let exact = step_state(&sys, state, q);
        let fine = rk4_five_minutes(&p, [state.t_u, state.t_l], mdot, t_a, t_c, q);
        worst = worst.max((exact.t_u - fine[0]).abs()).max((exact.t_l - fine[1]).abs());
    }
    let secs = started.elapsed().as_secs_f64();
    check(worst <= 1e-6 && secs < 10.0, format!("max |exact - RK4| = {worst:.2e} °C over 1000 cases, {secs:.2} s"))
}

/// Brute-force minimum over the q grid, rolling the plan forward with the
/// problem's own transition matrices.
fn grid_minimum(p: &MpcProblem, spacing: f64) -> Option<f64> {
    let cfg = &p.config;
    let dt = cfg.step_hours();
    let levels = (p.params.q_max() / spacing + 1e-9).floor() as usize;
    fn descend(p: &MpcProblem, j: usize, tu: f64, tl: f64, acc: f64, levels: usize, spacing: f64, dt: f64, best: &mut f64) {
        if j == p.horizon() {
            *best = best.min(acc);
            return;
        }
        let cfg = &p.config;
        let sys = &p.systems[j];
        for i in 0..=levels {
            let q = i as f64 * spacing;
            let nu = sys.a[(0, 0)] * tu + sys.a[(0, 1)] * tl + sys.b[0] * q + sys.w[0];
            let nl = sys.a[(1, 0)] * tu + sys.a[(1, 1)] * tl + sys.b[1] * q + sys.w[1];
            if (nu - cfg.a * tu) / (1.0 - cfg.a) > cfg.t_s_max + 1e-12 {
                break;
            }
            let mut c = acc + dt / p.params.eta * p.prices[j] * q + p.gamma * dt * (cfg.t_min - nu).max(0.0);
            if p.pi[j] {
                c += p.gamma * dt * (cfg.t_bact - 0.5 * (nu + nl)).max(0.0);
            }
            descend(p, j + 1, nu, nl, c, levels, spacing, dt, best);
        }
    }
    let mut best = f64::INFINITY;
    descend(p, 0, p.initial_state.t_u, p.initial_state.t_l, 0.0, levels, spacing, dt, &mut best);
    best.is_finite().then_some(best)
}

/// Upper bound on how much the objective can rise when each q moves by
/// at most `spacing`: per-step price term plus the penalty weight times
/// the summed state sensitivities of every later penalized state.
fn grid_error_bound(p: &MpcProblem, spacing: f64) -> f64 {
    let dt = p.config.step_hours();
    let n = p.horizon();
    let mut total = 0.0;
    for j in 0..n {
        let mut lip = dt / p.params.eta * p.prices[j];
        let mut sens = p.systems[j].b;
        for i in j..n {
            if i > j {
                sens = p.systems[i].a * sens;
            }
            lip += p.gamma * dt * sens[0].abs();
            if p.pi[i] {
                lip += p.gamma * dt * 0.5 * (sens[0] + sens[1]).abs();
            }
        }
        total += lip * spacing;
    }
    total
}

fn c2_lp_vs_grid() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let solver = SolverChoice::InteriorPoint.build();
    let params = TankParams::default();
    let mut worst_gap: f64 = 0.0;
    let mut skipped = 0;
    for case in 0..100 {
        let horizon = 1 + case % 3;
        let config = MpcConfig { horizon, ..MpcConfig::default() };
        let state = TankState::new(rng.gen_range(35.0..55.0), rng.gen_range(25.0..50.0));
        let flows: Vec<f64> = (0..horizon).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..4.0) } else { 0.0 }).collect();
        let prices: Vec<f64> = (0..horizon).map(|_| rng.gen_range(0.02..0.35)).collect();
        let forecast = DrawForecast { origin_k: 0, values: flows };
        let p = build_problem(state, &params, &config, &forecast, &[], &prices, 18.3, 18.0).map_err(|e| e.to_string())?;
        let sol = solve(&p, solver.as_ref()).map_err(|e| e.to_string())?;
        let Some(grid) = grid_minimum(&p, 0.01) else {
            skipped += 1;
            continue;
        };
        let bound = grid_error_bound(&p, 0.01);
        if sol.objective_value > grid + 1e-7 || grid - sol.objective_value > bound + 1e-7 {
            return Err(format!("case {case}: lp {} grid {grid} bound {bound}", sol.objective_value));
        }
        worst_gap = worst_gap.max((grid - sol.objective_value) / bound.max(1e-12));
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        secs < 60.0 && skipped == 0,
        format!("100 instances, J ≤ 3: lp ≤ grid everywhere, largest gap {:.0}% of the grid bound, {secs:.1} s", 100.0 * worst_gap),
    )
}

fn full_problem() -> Result<MpcProblem, String> {
    let config = MpcConfig::default();
    let draws = generate_draws(&DrawScheduleSpec::new(month_start(), 3), 1);
    let forecast = DrawForecast { origin_k: 0, values: draws.values().to_vec() };
    let prices: Vec<f64> = (0..288).map(|j| if (168..240).contains(&j) { 0.251 } else { 0.082 }).collect();
    build_problem(TankState::new(47.0, 38.0), &TankParams::default(), &config, &forecast, &[], &prices, 18.3, 18.0)
        .map_err(|e| e.to_string())
}

fn c3_audit() -> Outcome {
    let a = full_problem()?.audit();
    check(
        a.equalities == 578 && a.inequalities == 864,
        format!(
            "equalities {} inequalities {} (plus {} set-point tracking equalities); decision variables {} vs {} \
             in the reference count, which the stated structure (2·289 states + 288 q + 288 T_s) does not reach",
            a.equalities, a.inequalities, a.tracking_equalities, a.decision_variables, REFERENCE_VARIABLE_COUNT
        ),
    )
}

fn c4_solve_speed() -> Outcome {
    let p = full_problem()?;
    let started = Instant::now();
    let sol = solve(&p, SolverChoice::InteriorPoint.build().as_ref()).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    check(secs < 1.0, format!("J = 288 solved in {secs:.3} s, {} iterations", sol.iterations))
}

fn c5_comfort() -> Outcome {
    let started = Instant::now();
    let mut totals = [0usize; 2];
    let mut lowest = [f64::INFINITY; 2];
    for seed in 0..20 {
        for (i, mode) in [ControlMode::HpowhDefault, ControlMode::Mpc].into_iter().enumerate() {
            let mut spec = ScenarioSpec::new("showers", mode, Tariff::flat(), month_start(), 1, seed);
            spec.draws = DrawSource::Schedule(DrawScheduleSpec::consecutive_showers(month_start(), seed));
            spec.t_inlet = 5.0;
            let r = run(&spec).map_err(|e| e.to_string())?;
            totals[i] += r.comfort_violations(COMFORT_FLOOR);
            lowest[i] = r.comfort_events.iter().map(|e| e.min_outlet).fold(lowest[i], f64::min);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        totals[0] >= 1 && totals[1] == 0 && secs < 300.0,
        format!(
            "20 seeds: hpowh_default {} excursions (lowest {:.2} °C), mpc {} (lowest {:.2} °C), {secs:.0} s",
            totals[0], lowest[0], totals[1], lowest[1]
        ),
    )
}

/// Month runs shared by several criteria.
#[derive(Default)]
struct Months {
    flat: Option<[ScenarioResult; 3]>,
}

fn month(tariff: Tariff, mode: ControlMode) -> Result<ScenarioResult, String> {
    run(&ScenarioSpec::new("month", mode, tariff, month_start(), 30, 0)).map_err(|e| e.to_string())
}

impl Months {
    /// mpc, constant60 and hybrid_default on the flat tariff.
    fn flat(&mut self) -> Result<&[ScenarioResult; 3], String> {
        if self.flat.is_none() {
            let f = |m| month(Tariff::flat(), m);
            self.flat = Some([f(ControlMode::Mpc)?, f(ControlMode::Constant60)?, f(ControlMode::HybridDefault)?]);
        }
        Ok(self.flat.as_ref().unwrap())
    }
}

fn c6_constant60(months: &mut Months) -> Outcome {
    let [mpc, c60, _] = months.flat()?;
    let ratio = mpc.energy_kwh / c60.energy_kwh;
    check(
        ratio <= 0.75,
        format!("mpc {:.2} kWh vs constant60 {:.2} kWh: {:.1}% of baseline", mpc.energy_kwh, c60.energy_kwh, 100.0 * ratio),
    )
}

fn c7_tou() -> Outcome {
    let mpc = month(Tariff::tou(), ControlMode::Mpc)?;
    let hybrid = month(Tariff::tou(), ControlMode::HybridDefault)?;
    let saving = 1.0 - mpc.cost_per_l() / hybrid.cost_per_l();
    let (pm, ph) = (energy_in_hours(&mpc, 14, 20), energy_in_hours(&hybrid, 14, 20));
    let peak_cut = 1.0 - pm / ph;
    check(
        saving >= 0.15 && peak_cut >= 0.5,
        format!(
            "cost/L {:.5} vs {:.5} ({:.1}% lower); 2-8 PM heat-pump energy {pm:.2} vs {ph:.2} kWh ({:.1}% lower)",
            mpc.cost_per_l(),
            hybrid.cost_per_l(),
            100.0 * saving,
            100.0 * peak_cut
        ),
    )
}

fn c8_hourly() -> Outcome {
    let start = month_start();
    let tariff = Tariff::Hourly(synthetic_hourly_prices(start.date_naive(), *start.offset(), 62, FLAT_RATE, 0));
    let mpc = month(tariff.clone(), ControlMode::Mpc)?;
    let hybrid = month(tariff, ControlMode::HybridDefault)?;
    let saving = 1.0 - mpc.cost_per_l() / hybrid.cost_per_l();
    let corr = hourly_energy_price_correlation(&mpc);
    check(
        saving >= 0.15 && corr < 0.0,
        format!(
            "cost/L {:.5} vs {:.5} ({:.1}% lower); energy {:.2} vs {:.2} kWh; hourly energy-price correlation {corr:.3}",
            mpc.cost_per_l(),
            hybrid.cost_per_l(),
            100.0 * saving,
            mpc.energy_kwh,
            hybrid.energy_kwh
        ),
    )
}

fn c9_intensity(months: &mut Months) -> Outcome {
    let [mpc, _, hybrid] = months.flat()?;
    let (a, b) = (mpc.intensity_wh_per_l(), hybrid.intensity_wh_per_l());
    let rel = (a - b).abs() / b;
    let band = |x: f64| (10.0..=20.0).contains(&x);
    check(
        rel < 0.15 && band(a) && band(b),
        format!("mpc {a:.2} Wh/L, hybrid_default {b:.2} Wh/L, {:.1}% apart", 100.0 * rel),
    )
}

fn c10_forecast() -> Outcome {
    let start = parse_timestamp("2024-06-03T00:00:00-04:00").unwrap();
    let series = |v: Vec<f64>, u| TimeSeries::new(start, control_step(), v, u).unwrap();
    let bundle = |flows: Vec<f64>| {
        let n = flows.len();
        HistoryBundle::new(series(flows, Unit::KgPerMin), series(vec![50.0; n], Unit::Celsius), series(vec![44.0; n], Unit::Celsius))
            .unwrap()
    };

    let day: Vec<f64> = (0..288).map(|i| if (84..90).contains(&i) { 7.5 } else if i % 41 == 0 { 1.1 } else { 0.0 }).collect();
    let periodic = bundle(day.iter().copied().cycle().take(5 * 288).collect());
    let opts = BacktestOptions { stride: 24, ..BacktestOptions::default() };
    let rows = backtest(&periodic.view(), 2 * 288, &[ModelId::Persistence], &opts).map_err(|e| e.to_string())?;
    let persistence_max = rows[0].evaluation.wmae_by_horizon.iter().copied().fold(0.0, f64::max);

    let times: Vec<f64> = (0..30 * 288).map(|i| i as f64 / 12.0).collect();
    let y: Vec<f64> = times.iter().map(|t| 2.0 + (2.0 * std::f64::consts::PI * t / 24.0).sin()).collect();
    let fourier = FourierModel::fit(&times, &y, 6, 3).map_err(|e| e.to_string())?;
    let c = &fourier.coefficients;
    let amplitude_err = ((c[2] * c[2] + c[3] * c[3]).sqrt() - 1.0).abs();

    let draws = generate_draws(&DrawScheduleSpec::new(start, 4), 10);
    let history = bundle(draws.values().to_vec());
    let view = history.view();
    let ensemble = Ensemble::fit(EnsembleConfig::default(), ModelOptions::default(), &view.truncate(8 * 288))
        .map_err(|e| e.to_string())?;
    let k = 8 * 288 + 100;
    let combined = ensemble.forecast(&view, k).map_err(|e| e.to_string())?;
    let features = build_features(&view, k, ensemble.options.tau).map_err(|e| e.to_string())?;
    let input = ForecastInput { history: view, k, features: &features };
    let members: [&dyn Member; 3] = [&ensemble.short, &ensemble.medium, &ensemble.long];
    let mut mismatches = 0;
    for (m, member) in members.into_iter().enumerate() {
        for j in (1..=ensemble.config.horizon).filter(|&j| ensemble.config.member_for(j) == m) {
            let own = member.predict(&input, j).map_err(|e| e.to_string())?;
            if own.to_bits() != combined.at(j).to_bits() {
                mismatches += 1;
            }
        }
    }

    let hand = metrics(&[0.0, 2.0], &[1.0, 1.0]).map_err(|e| e.to_string())?.wmae;

    check(
        persistence_max == 0.0 && amplitude_err <= 1e-6 && mismatches == 0 && hand == 1.0,
        format!(
            "persistence max WMAE {persistence_max}; Fourier amplitude error {amplitude_err:.1e}; \
             {mismatches} ensemble/member mismatches; hand WMAE {hand}"
        ),
    )
}

fn c11_pi() -> Outcome {
    let cfg = MpcConfig::default();
    let zero = compute_pi(&[0.0; 288], &[], &cfg).iter().all(|&p| p);

    let mut spike = vec![0.0; 288];
    spike[9] = 1.0;
    let pi = compute_pi(&spike, &[], &cfg);
    let spike_ok = (1..=288).all(|j| pi[j - 1] != (10..=14).contains(&j));

    let mut sustained = vec![0.0; 288];
    sustained[..40].iter_mut().for_each(|v| *v = 0.5);
    let pi = compute_pi(&sustained, &[], &cfg);
    let first_over = (1..=288usize)
        .find(|&j| {
            let lo = j.saturating_sub(cfg.bact_window).max(1);
            cfg.step_minutes as f64 * sustained[lo - 1..j].iter().sum::<f64>() > cfg.big_phi
        })
        .unwrap();
    let sustained_ok = pi[..first_over - 1].iter().all(|&p| p) && !pi[first_over - 1];

    check(
        zero && spike_ok && sustained_ok,
        format!("all-zero {zero}, single spike {spike_ok}, sustained flow {sustained_ok} (off from j = {first_over})"),
    )
}

fn c12_payback() -> Outcome {
    let a = payback_months(200.0, 3.78).map_err(|e| e.to_string())?.round();
    let b = payback_months(200.0, 11.36).map_err(|e| e.to_string())?.round();
    check(a == 53.0 && b == 18.0, format!("200/3.78 -> {a} months, 200/11.36 -> {b} months"))
}

fn c13_determinism() -> Outcome {
    let start = month_start();
    let tariff = Tariff::Hourly(synthetic_hourly_prices(start.date_naive(), *start.offset(), 6, FLAT_RATE, 5));
    let mut spec = ScenarioSpec::new("repeat", ControlMode::Mpc, tariff, start, 1, 5);
    spec.warmup_days = 3;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        write_result(&run(&spec).map_err(|e| e.to_string())?, &out).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(out.join("summary.json")).map_err(|e| e.to_string())?);
    }
    check(bytes[0] == bytes[1], format!("two mpc runs with seed 5: summary.json {} bytes, identical {}", bytes[0].len(), bytes[0] == bytes[1]))
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut months = Months::default();
    let mut failed = 0;
    for n in 1..=13 {
        if !wanted(n) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| match n {
            1 => c1_discretization(),
            2 => c2_lp_vs_grid(),
            3 => c3_audit(),
            4 => c4_solve_speed(),
            5 => c5_comfort(),
            6 => c6_constant60(&mut months),
            7 => c7_tou(),
            8 => c8_hourly(),
            9 => c9_intensity(&mut months),
            10 => c10_forecast(),
            11 => c11_pi(),
            12 => c12_payback(),
            _ => c13_determinism(),
        }))
        .unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2}: PASS  {detail}  [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {detail}  [{secs:.1} s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
