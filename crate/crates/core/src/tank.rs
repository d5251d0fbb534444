//! Two-node stratified tank model: continuous dynamics, exact zero-order-hold
//! discretization and state propagation.

use chrono::Duration;
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Thermal conductivity of water, W/(m·°C).
pub const K_WATER: f64 = 0.63;
/// Specific heat of water, kWh/(kg·°C).
pub const CP_WATER: f64 = 4.186 / 3600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TankError {
    #[error("degenerate parameters: {0}")]
    DegenerateParams(String),
    #[error("continuous system matrix is singular")]
    SingularAtilde,
}

/// Physical parameters of the two-node model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankParams {
    /// Total thermal capacitance, kWh/°C.
    pub c: f64,
    /// Tank-to-ambient resistance, °C/kW.
    pub r_a: f64,
    /// Inter-node resistance, °C/kW. Kept consistent with `h_s`.
    pub r_ul: f64,
    /// Upper-node height fraction.
    pub z: f64,
    /// Fraction of heat-pump output delivered to the upper node.
    pub lambda: f64,
    /// Constant coefficient of performance.
    pub eta: f64,
    /// Maximum electrical input, kW.
    pub p_max: f64,
    /// Specific heat of water, kWh/(kg·°C).
    pub cp: f64,
    /// Tank height, m.
    pub tank_height: f64,
    /// Tank cross-section, m².
    pub cross_section: f64,
    /// Thermal conductivity of water, W/(m·°C).
    pub k_w: f64,
    /// Stratification layer thickness, m.
    pub h_s: f64,
}

impl Default for TankParams {
    fn default() -> Self {
        let tank_height = 1.2;
        let cross_section = 0.1893 / tank_height;
        let mut p = Self {
            c: 0.197,
            r_a: 1476.0,
            r_ul: 0.0,
            z: 0.5,
            lambda: 0.3,
            eta: 3.5,
            p_max: 0.5,
            cp: CP_WATER,
            tank_height,
            cross_section,
            k_w: K_WATER,
            h_s: 0.025,
        };
        p.r_ul = p.stratification_resistance();
        p
    }
}

impl TankParams {
    /// Inter-node resistance h_s / (k_w A) converted from °C/W to °C/kW.
    pub fn stratification_resistance(&self) -> f64 {
        1000.0 * self.h_s / (self.k_w * self.cross_section)
    }

    /// Returns a copy with a new layer thickness and matching `r_ul`.
    pub fn with_h_s(mut self, h_s: f64) -> Self {
        self.h_s = h_s;
        self.r_ul = self.stratification_resistance();
        self
    }

    /// Thermocline height (1 − z)·h, m.
    pub fn thermocline_height(&self) -> f64 {
        (1.0 - self.z) * self.tank_height
    }

    /// Maximum thermal output η·P_max, kW.
    pub fn q_max(&self) -> f64 {
        self.eta * self.p_max
    }

    pub fn validate(&self) -> Result<(), TankError> {
        let bad = |m: &str| Err(TankError::DegenerateParams(m.to_string()));
        let all = [
            self.c, self.r_a, self.r_ul, self.z, self.lambda, self.eta, self.p_max, self.cp,
            self.tank_height, self.cross_section, self.k_w, self.h_s,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        if !(self.z > 0.0 && self.z < 1.0) {
            return bad("z must lie strictly between 0 and 1");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.eta <= 0.0 || self.c <= 0.0 || self.r_a <= 0.0 || self.r_ul <= 0.0 {
            return bad("eta, C, R_a and R_ul must be positive");
        }
        if self.p_max <= 0.0 || self.cp <= 0.0 {
            return bad("P_max and cp must be positive");
        }
        if self.tank_height <= 0.0 || self.cross_section <= 0.0 || self.k_w <= 0.0 {
            return bad("geometry must be positive");
        }
        let r = self.stratification_resistance();
        if (r - self.r_ul).abs() > 1e-9 * r.abs().max(1.0) {
            return bad("R_ul inconsistent with h_s / (k_w A)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankState {
    pub t_u: f64,
    pub t_l: f64,
}

impl TankState {
    pub fn new(t_u: f64, t_l: f64) -> Self {
        Self { t_u, t_l }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.t_u, self.t_l)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self { t_u: v[0], t_l: v[1] }
    }
}

/// Inputs held constant over one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    /// Draw mass flow, kg/h.
    pub mdot: f64,
    pub t_a: f64,
    pub t_c: f64,
    /// Heat-pump thermal output, kW.
    pub q: f64,
}

/// Continuous-time matrices Ã, B̃, w̃ (time unit: hours).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousSystem {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub w: Vector2<f64>,
}

impl ContinuousSystem {
    /// Right-hand side Ã T + B̃ q + w̃.
    pub fn derivative(&self, t: &Vector2<f64>, q: f64) -> Vector2<f64> {
        self.a * t + self.b * q + self.w
    }
}

/// Discrete-time system T(k+1) = A T(k) + B q(k) + w(k).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteSystem {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub w: Vector2<f64>,
    pub step: Duration,
}

pub fn continuous_matrices(
    p: &TankParams,
    mdot: f64,
    t_a: f64,
    t_c: f64,
) -> Result<ContinuousSystem, TankError> {
    if p.z <= 0.0 || p.z >= 1.0 {
        return Err(TankError::DegenerateParams("z must lie strictly between 0 and 1".into()));
    }
    let (c, z) = (p.c, p.z);
    let g_ul = 1.0 / p.r_ul;
    let g_a = 1.0 / p.r_a;
    let flow = mdot * p.cp;
    let a = Matrix2::new(
        -(g_ul + z * g_a + flow) / (z * c),
        (g_ul + flow) / (z * c),
        g_ul / ((1.0 - z) * c),
        -(flow + g_ul + (1.0 - z) * g_a) / ((1.0 - z) * c),
    );
    let b = Vector2::new(p.lambda / z, (1.0 - p.lambda) / (1.0 - z)) / c;
    let w = Vector2::new(t_a * g_a, t_a * g_a + flow * t_c / (1.0 - z)) / c;
    Ok(ContinuousSystem { a, b, w })
}

/// Closed-form exponential of a real 2×2 matrix.
///
/// Uses e^M = e^μ [c(d) I + s(d) (M − μI)] with μ = tr/2 and d = μ² − det,
/// where c = cosh √d and s = sinh √d / √d (trigonometric forms for d < 0).
/// When the eigenvalue gap 2√|d| is below 1e-10 the even power series of
/// c and s in d is used instead.
pub fn expm2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let mu = 0.5 * m.trace();
    let d = mu * mu - m.determinant();
    let (c, s) = if 2.0 * d.abs().sqrt() < 1e-10 {
        // cosh and sinh(x)/x as series in d = x².
        (1.0 + d / 2.0 + d * d / 24.0, 1.0 + d / 6.0 + d * d / 120.0)
    } else if d > 0.0 {
        let r = d.sqrt();
        (r.cosh(), r.sinh() / r)
    } else {
        let r = (-d).sqrt();
        (r.cos(), r.sin() / r)
    };
    let shifted = m - Matrix2::identity() * mu;
    (Matrix2::identity() * c + shifted * s) * mu.exp()
}

pub fn discretize(sys: &ContinuousSystem, dt: Duration) -> Result<DiscreteSystem, TankError> {
    let h = dt.num_milliseconds() as f64 / 3_600_000.0;
    let scale = sys.a.abs().max().max(f64::MIN_POSITIVE);
    if sys.a.determinant().abs() <= 1e-14 * scale * scale {
        return Err(TankError::SingularAtilde);
    }
    if h == 0.0 {
        return Ok(DiscreteSystem {
            a: Matrix2::identity(),
            b: Vector2::zeros(),
            w: Vector2::zeros(),
            step: dt,
        });
    }
    let a = expm2(&(sys.a * h));
    let inv = sys.a.try_inverse().ok_or(TankError::SingularAtilde)?;
    let phi = inv * (a - Matrix2::identity());
    Ok(DiscreteSystem { a, b: phi * sys.b, w: phi * sys.w, step: dt })
}

/// Convenience: continuous matrices followed by discretization.
pub fn discrete_system(
    p: &TankParams,
    mdot: f64,
    t_a: f64,
    t_c: f64,
    dt: Duration,
) -> Result<DiscreteSystem, TankError> {
    discretize(&continuous_matrices(p, mdot, t_a, t_c)?, dt)
}

/// Discrete matrices with the affine term split by source:
/// w = g_a·T_a + g_c·T_c. Lets callers reuse one discretization per flow
/// value across varying ambient and inlet temperatures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteParts {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub g_a: Vector2<f64>,
    pub g_c: Vector2<f64>,
}

impl DiscreteParts {
    pub fn new(p: &TankParams, mdot: f64, dt: Duration) -> Result<Self, TankError> {
        let ambient = discrete_system(p, mdot, 1.0, 0.0, dt)?;
        let inlet = continuous_matrices(p, mdot, 0.0, 1.0)?;
        let h = dt.num_milliseconds() as f64 / 3_600_000.0;
        let g_c = if h == 0.0 {
            Vector2::zeros()
        } else {
            let inv = inlet.a.try_inverse().ok_or(TankError::SingularAtilde)?;
            inv * (ambient.a - Matrix2::identity()) * inlet.w
        };
        Ok(Self { a: ambient.a, b: ambient.b, g_a: ambient.w, g_c })
    }

    pub fn system(&self, t_a: f64, t_c: f64, step: Duration) -> DiscreteSystem {
        DiscreteSystem { a: self.a, b: self.b, w: self.g_a * t_a + self.g_c * t_c, step }
    }
}

pub fn step_state(sys: &DiscreteSystem, s: TankState, q: f64) -> TankState {
    TankState::from_vector(&(sys.a * s.as_vector() + sys.b * q + sys.w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Scaling-and-squaring Taylor exponential, independent of [`expm2`].
    fn expm_taylor(m: &Matrix2<f64>) -> Matrix2<f64> {
        let mut squarings = 0;
        let mut scaled = *m;
        while scaled.abs().max() > 0.01 {
            scaled /= 2.0;
            squarings += 1;
        }
        let mut term = Matrix2::identity();
        let mut sum = Matrix2::identity();
        for k in 1..20 {
            term = term * scaled / k as f64;
            sum += term;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn default_params_valid() {
        let p = TankParams::default();
        p.validate().unwrap();
        assert_relative_eq!(p.r_ul, 1000.0 * 0.025 / (0.63 * 0.1893 / 1.2), epsilon = 1e-12);
        assert!(p.thermocline_height() > 0.0 && p.thermocline_height() < p.tank_height);
    }

    #[test]
    fn golden_matrices_default_params() {
        let p = TankParams::default();
        let sys = continuous_matrices(&p, 0.0, 20.0, 15.0).unwrap();
        // Frozen from direct evaluation of the entry formulas.
        let g_ul = 1.0 / p.r_ul;
        let g_a = 1.0 / 1476.0;
        let zc = 0.5 * 0.197;
        assert_relative_eq!(sys.a[(0, 0)], -(g_ul + 0.5 * g_a) / zc, max_relative = 1e-14);
        assert_relative_eq!(sys.a[(0, 1)], g_ul / zc, max_relative = 1e-14);
        assert_relative_eq!(sys.a[(0, 0)], -0.0437974963, max_relative = 1e-8);
        assert_relative_eq!(sys.a[(0, 1)], 0.0403583756, max_relative = 1e-8);
        assert_relative_eq!(sys.a[(1, 0)], 0.0403583756, max_relative = 1e-8);
        assert_relative_eq!(sys.a[(1, 1)], -0.0437974963, max_relative = 1e-8);
        assert_relative_eq!(sys.b[0], 0.3 / 0.5 / 0.197, max_relative = 1e-14);
        assert_relative_eq!(sys.b[1], 0.7 / 0.5 / 0.197, max_relative = 1e-14);
        assert_relative_eq!(sys.w[0], 20.0 / 1476.0 / 0.197, max_relative = 1e-14);
    }

    #[test]
    fn zero_flow_off_diagonal_has_no_flow_term() {
        let p = TankParams::default();
        let sys = continuous_matrices(&p, 0.0, 20.0, 15.0).unwrap();
        assert_relative_eq!(sys.a[(0, 1)], 1.0 / (p.z * p.c * p.r_ul), max_relative = 1e-14);
        let flowing = continuous_matrices(&p, 300.0, 20.0, 15.0).unwrap();
        assert!(flowing.a[(0, 1)] > sys.a[(0, 1)]);
        assert_eq!(flowing.a[(1, 0)], sys.a[(1, 0)]);
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let p = TankParams::default();
        let t = 21.5;
        let sys = continuous_matrices(&p, 0.0, t, t).unwrap();
        let x = Vector2::new(t, t);
        assert!(sys.derivative(&x, 0.0).norm() < 1e-12);
        let d = discretize(&sys, Duration::minutes(5)).unwrap();
        let next = step_state(&d, TankState::new(t, t), 0.0);
        assert!((next.t_u - t).abs() < 1e-9 && (next.t_l - t).abs() < 1e-9);
    }

    #[test]
    fn degenerate_z_rejected() {
        let mut p = TankParams::default();
        p.z = 1.0;
        assert!(matches!(
            continuous_matrices(&p, 0.0, 20.0, 15.0),
            Err(TankError::DegenerateParams(_))
        ));
    }

    #[test]
    fn zero_step_is_identity() {
        let p = TankParams::default();
        let d = discrete_system(&p, 120.0, 20.0, 15.0, Duration::zero()).unwrap();
        assert_eq!(d.a, Matrix2::identity());
        assert_eq!(d.b, Vector2::zeros());
        assert_eq!(d.w, Vector2::zeros());
    }

    #[test]
    fn matches_forward_euler_one_second() {
        let p = TankParams::default();
        let sys = continuous_matrices(&p, 0.0, 20.0, 15.0).unwrap();
        let d = discretize(&sys, Duration::minutes(5)).unwrap();
        let h = 1.0 / 3600.0;
        let mut a = Matrix2::identity();
        for _ in 0..300 {
            a += sys.a * a * h;
        }
        assert!((a - d.a).abs().max() < 1e-6);
    }

    #[test]
    fn repeated_eigenvalue_series_matches_taylor() {
        // Upper-triangular with equal diagonal: exactly repeated eigenvalues.
        let m = Matrix2::new(-0.3, 0.2, 0.0, -0.3);
        let e = expm2(&m);
        let oracle = expm_taylor(&m);
        assert!((e - oracle).abs().max() < 1e-9);
        // Nearly repeated.
        let m = Matrix2::new(-0.3, 0.2, 1e-22, -0.3);
        assert!((expm2(&m) - expm_taylor(&m)).abs().max() < 1e-9);
    }

    #[test]
    fn complex_eigenvalues_match_taylor() {
        let m = Matrix2::new(-0.5, 2.0, -1.5, -0.2);
        assert!((expm2(&m) - expm_taylor(&m)).abs().max() < 1e-12);
    }

    #[test]
    fn parts_reassemble_full_system() {
        let p = TankParams::default();
        let dt = Duration::minutes(5);
        let parts = DiscreteParts::new(&p, 240.0, dt).unwrap();
        let full = discrete_system(&p, 240.0, 19.0, 14.0, dt).unwrap();
        let joined = parts.system(19.0, 14.0, dt);
        assert!((joined.w - full.w).abs().max() < 1e-12);
        assert_eq!(joined.a, full.a);
    }

    #[test]
    fn full_power_heats_both_nodes() {
        let p = TankParams::default();
        let d = discrete_system(&p, 0.0, 20.0, 15.0, Duration::minutes(5)).unwrap();
        let s = TankState::new(45.0, 45.0);
        let next = step_state(&d, s, p.q_max());
        assert!(next.t_u > 45.0 && next.t_l > 45.0);
    }
}
