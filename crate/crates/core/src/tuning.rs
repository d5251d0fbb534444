//! Grid-search identification of the two-node model parameters from
//! measured heater data.
//!
//! For each candidate the model is rolled out open loop with the measured
//! heat-pump power as input, re-initialized from the measured temperatures
//! at every local midnight. Power is predicted by inverting the one-step
//! dynamics at the measured states.

use std::collections::HashMap;

use chrono::Timelike;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tank::{DiscreteParts, TankError, TankParams};
use crate::timeseries::TimeSeries;

/// Minimum tuning span in days.
pub const MIN_TUNING_DAYS: f64 = 14.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuningError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("tuning grid has no admissible candidate")]
    EmptyGrid,
    #[error("misaligned series: {0}")]
    Shape(String),
    #[error(transparent)]
    Tank(#[from] TankError),
}

fn steps(from: f64, to: f64, by: f64) -> Vec<f64> {
    let n = ((to - from) / by + 1e-9).floor() as usize;
    (0..=n).map(|i| ((from + i as f64 * by) * 1e9).round() / 1e9).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningGrid {
    pub eta: Vec<f64>,
    pub h_s: Vec<f64>,
    pub lambda: Vec<f64>,
    pub z: Vec<f64>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        let mut h_s = steps(0.005, 0.1, 0.01);
        h_s.push(0.1);
        Self { eta: steps(1.0, 5.0, 0.1), h_s, lambda: steps(0.0, 1.0, 0.1), z: steps(0.0, 1.0, 0.1) }
    }
}

impl TuningGrid {
    pub fn single(eta: f64, h_s: f64, lambda: f64, z: f64) -> Self {
        Self { eta: vec![eta], h_s: vec![h_s], lambda: vec![lambda], z: vec![z] }
    }

    fn admissible_z(&self) -> Vec<f64> {
        self.z.iter().copied().filter(|z| *z > 0.0 && *z < 1.0).collect()
    }

    /// Number of candidates that will be evaluated.
    pub fn len(&self) -> usize {
        self.eta.len() * self.h_s.len() * self.lambda.len() * self.admissible_z().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Aligned measurements: power P (kW), node temperatures (°C), draw flow
/// (kg/min), ambient and inlet temperatures (°C).
#[derive(Debug, Clone)]
pub struct TuningData {
    pub p: TimeSeries,
    pub t_u: TimeSeries,
    pub t_l: TimeSeries,
    pub mdot: TimeSeries,
    pub t_a: TimeSeries,
    pub t_c: TimeSeries,
}

impl TuningData {
    pub fn new(
        p: TimeSeries,
        t_u: TimeSeries,
        t_l: TimeSeries,
        mdot: TimeSeries,
        t_a: TimeSeries,
        t_c: TimeSeries,
    ) -> Result<Self, TuningError> {
        let d = Self { p, t_u, t_l, mdot, t_a, t_c };
        for s in [&d.t_u, &d.t_l, &d.mdot, &d.t_a, &d.t_c] {
            if s.len() != d.p.len() || s.start() != d.p.start() || s.step() != d.p.step() {
                return Err(TuningError::Shape("all series must share start, step and length".into()));
            }
        }
        Ok(d)
    }

    pub fn span_days(&self) -> f64 {
        self.p.len() as f64 * self.p.step_hours() / 24.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    pub params: TankParams,
    pub objective: f64,
    pub power_error: f64,
    pub t_u_error: f64,
    pub candidates: usize,
}

struct Prepared {
    n: usize,
    flows_kg_h: Vec<f64>,
    restart: Vec<bool>,
    mean_p: f64,
    mean_tu: f64,
}

fn prepare(data: &TuningData) -> Result<Prepared, TuningError> {
    let n = data.p.len();
    if data.span_days() < MIN_TUNING_DAYS {
        return Err(TuningError::InsufficientData(format!(
            "{:.1} days supplied, at least {MIN_TUNING_DAYS} required",
            data.span_days()
        )));
    }
    let mean = |s: &TimeSeries| s.values()[..n - 1].iter().sum::<f64>() / (n - 1) as f64;
    let mean_p = mean(&data.p);
    let mean_tu = data.t_u.values()[1..].iter().sum::<f64>() / (n - 1) as f64;
    if mean_p <= 0.0 {
        return Err(TuningError::InsufficientData("measured power is identically zero".into()));
    }
    if mean_tu <= 0.0 {
        return Err(TuningError::InsufficientData("mean upper temperature must be positive".into()));
    }
    let restart = (0..n)
        .map(|k| {
            let t = data.p.time_at(k);
            k == 0 || (t.hour() == 0 && t.minute() == 0 && t.second() == 0)
        })
        .collect();
    Ok(Prepared { n, flows_kg_h: data.mdot.values().iter().map(|m| m * 60.0).collect(), restart, mean_p, mean_tu })
}

/// Per-step discrete matrices for one (h_s, λ, z), shared across η.
struct Rollout {
    parts: Vec<DiscreteParts>,
    index: Vec<usize>,
}

impl Rollout {
    fn new(params: &TankParams, prep: &Prepared, data: &TuningData) -> Result<Self, TuningError> {
        let mut lookup: HashMap<u64, usize> = HashMap::new();
        let mut parts = Vec::new();
        let mut index = Vec::with_capacity(prep.n);
        for &m in &prep.flows_kg_h {
            let key = m.to_bits();
            let i = match lookup.get(&key) {
                Some(&i) => i,
                None => {
                    parts.push(DiscreteParts::new(params, m, data.p.step())?);
                    lookup.insert(key, parts.len() - 1);
                    parts.len() - 1
                }
            };
            index.push(i);
        }
        Ok(Self { parts, index })
    }
}

/// Objective terms for one candidate; see [`tune_parameters`].
pub fn evaluate(params: &TankParams, data: &TuningData) -> Result<(f64, f64), TuningError> {
    let prep = prepare(data)?;
    let rollout = Rollout::new(params, &prep, data)?;
    let q_hat = inverse_heat(&rollout, &prep, data);
    Ok(errors(params.eta, params.p_max, &rollout, &q_hat, &prep, data))
}

/// Heat input implied by each measured transition (least squares on the
/// two node equations).
fn inverse_heat(r: &Rollout, prep: &Prepared, data: &TuningData) -> Vec<f64> {
    let (tu, tl, ta, tc) = (data.t_u.values(), data.t_l.values(), data.t_a.values(), data.t_c.values());
    (0..prep.n - 1)
        .map(|k| {
            let d = &r.parts[r.index[k]];
            let x = Vector2::new(tu[k], tl[k]);
            let next = Vector2::new(tu[k + 1], tl[k + 1]);
            let resid = next - d.a * x - d.g_a * ta[k] - d.g_c * tc[k];
            d.b.dot(&resid) / d.b.dot(&d.b)
        })
        .collect()
}

fn errors(eta: f64, p_max: f64, r: &Rollout, q_hat: &[f64], prep: &Prepared, data: &TuningData) -> (f64, f64) {
    let (p, tu, tl, ta, tc) = (data.p.values(), data.t_u.values(), data.t_l.values(), data.t_a.values(), data.t_c.values());
    let n = prep.n;
    let mut p_err = 0.0;
    for k in 0..n - 1 {
        let p_hat = (q_hat[k] / eta).clamp(0.0, p_max);
        p_err += (p_hat - p[k]).abs();
    }
    let mut t_err = 0.0;
    let mut state = Vector2::new(tu[0], tl[0]);
    for k in 0..n - 1 {
        if prep.restart[k] {
            state = Vector2::new(tu[k], tl[k]);
        }
        let d = &r.parts[r.index[k]];
        state = d.a * state + d.b * (eta * p[k]) + d.g_a * ta[k] + d.g_c * tc[k];
        t_err += (state[0] - tu[k + 1]).abs();
    }
    let m = (n - 1) as f64;
    (p_err / m / prep.mean_p, t_err / m / prep.mean_tu)
}

/// Exhaustive search over `grid`, keeping the physical constants of `base`.
///
/// Minimizes mean|P̂ − P|/mean(P) + mean|T̂_u − T_u|/mean(T_u). Candidates
/// with z ∈ {0, 1} are skipped. Exact ties resolve to the lexicographically
/// smallest (η, h_s, λ, z).
pub fn tune_parameters(data: &TuningData, grid: &TuningGrid, base: &TankParams) -> Result<TuningOutcome, TuningError> {
    let zs = grid.admissible_z();
    if grid.is_empty() {
        return Err(TuningError::EmptyGrid);
    }
    let prep = prepare(data)?;
    let mut best: Option<((f64, [usize; 4]), TuningOutcome)> = None;
    for (ih, &h_s) in grid.h_s.iter().enumerate() {
        for (il, &lambda) in grid.lambda.iter().enumerate() {
            for (iz, &z) in zs.iter().enumerate() {
                let shape = TankParams { lambda, z, ..*base }.with_h_s(h_s);
                let rollout = Rollout::new(&shape, &prep, data)?;
                let q_hat = inverse_heat(&rollout, &prep, data);
                for (ie, &eta) in grid.eta.iter().enumerate() {
                    let (pe, te) = errors(eta, base.p_max, &rollout, &q_hat, &prep, data);
                    let key = (pe + te, [ie, ih, il, iz]);
                    let better = match &best {
                        None => true,
                        Some((k, _)) => key.0 < k.0 || (key.0 == k.0 && key.1 < k.1),
                    };
                    if better {
                        let outcome = TuningOutcome {
                            params: TankParams { eta, ..shape },
                            objective: pe + te,
                            power_error: pe,
                            t_u_error: te,
                            candidates: grid.len(),
                        };
                        best = Some((key, outcome));
                    }
                }
            }
        }
    }
    best.map(|(_, o)| o).ok_or(TuningError::EmptyGrid)
}
