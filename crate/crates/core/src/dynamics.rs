//! Single-track (bicycle) vehicle model in curvilinear track coordinates.
//!
//! Lateral tire forces are linear in the slip angle, longitudinal forces are
//! linear in the slip ratio, and the throttle drives the rear wheel. The
//! vehicle pose is tracked relative to the centerline (`s`, `e_y`, `e_psi`),
//! so no Cartesian position is integrated.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::config::{parse_kv, ConfigError, KvMap};
use crate::track::Track;

/// Lower bound on `|v_x|` in slip denominators.
pub const MIN_SLIP_SPEED: f64 = 0.5;
/// Lower bound on `|1 - kappa * e_y|` in the progress rate.
pub const MIN_PROGRESS_DENOM: f64 = 0.1;

pub const STATE_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State {
    pub v_x: f64,
    pub v_y: f64,
    pub psi_dot: f64,
    pub omega_f: f64,
    pub omega_r: f64,
    pub e_psi: f64,
    pub e_y: f64,
    pub s: f64,
}

impl State {
    /// Straight-ahead motion at `speed` with rolling wheels.
    pub fn cruising(speed: f64, wheel_radius: f64) -> Self {
        Self {
            v_x: speed,
            omega_f: speed / wheel_radius,
            omega_r: speed / wheel_radius,
            ..Self::default()
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.v_x, self.v_y, self.psi_dot, self.omega_f, self.omega_r, self.e_psi, self.e_y, self.s]
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self {
            v_x: a[0],
            v_y: a[1],
            psi_dot: a[2],
            omega_f: a[3],
            omega_r: a[4],
            e_psi: a[5],
            e_y: a[6],
            s: a[7],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn axpy(&self, h: f64, d: &[f64; STATE_DIM]) -> Self {
        let mut a = self.to_array();
        for (ai, di) in a.iter_mut().zip(d) {
            *ai += h * di;
        }
        Self::from_array(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Control {
    /// Steering angle (rad).
    pub delta: f64,
    /// Throttle; negative values brake.
    pub throttle: f64,
}

impl Control {
    pub const ZERO: Control = Control { delta: 0.0, throttle: 0.0 };

    pub fn new(delta: f64, throttle: f64) -> Self {
        Self { delta, throttle }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.delta, self.throttle]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self { delta: a[0], throttle: a[1] }
    }
}

/// Current and previous state, `z = (x_k, x_{k-1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState {
    pub current: State,
    pub previous: State,
}

impl AugmentedState {
    /// Initial augmented state, with the previous state equal to the current one.
    pub fn initial(x0: State) -> Self {
        Self { current: x0, previous: x0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite state after propagating {state:?} with {control:?}")]
    NonFinite { state: State, control: Control },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

impl FromStr for Integrator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(Self::Euler),
            "rk4" => Ok(Self::Rk4),
            _ => Err(format!("unknown integrator `{s}` (expected euler or rk4)")),
        }
    }
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Euler => "euler",
            Self::Rk4 => "rk4",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub lf: f64,
    pub lr: f64,
    pub wheel_radius: f64,
    pub wheel_inertia: f64,
    pub cornering_front: f64,
    pub cornering_rear: f64,
    pub longitudinal_stiffness: f64,
    /// Rear drive torque per unit throttle (N·m).
    pub drive_gain: f64,
    /// Linear rolling resistance (N per m/s).
    pub rolling_resistance: f64,
    /// Quadratic drag (N per (m/s)^2).
    pub drag: f64,
    pub dt: f64,
    pub delta_max: f64,
    pub throttle_min: f64,
    pub throttle_max: f64,
}

macro_rules! param_keys {
    ($($field:ident),* $(,)?) => {
        const PARAM_KEYS: &[&str] = &[$(stringify!($field)),*];

        impl VehicleParams {
            fn from_map(map: &KvMap) -> Result<Self, ConfigError> {
                let p = Self { $($field: map.require_f64(stringify!($field))?),* };
                p.validate()?;
                Ok(p)
            }

            /// Renders the parameter file format.
            pub fn to_kv_text(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{} = {}\n", stringify!($field), self.$field));)*
                out
            }
        }
    };
}

param_keys!(
    mass,
    yaw_inertia,
    lf,
    lr,
    wheel_radius,
    wheel_inertia,
    cornering_front,
    cornering_rear,
    longitudinal_stiffness,
    drive_gain,
    rolling_resistance,
    drag,
    dt,
    delta_max,
    throttle_min,
    throttle_max,
);

impl VehicleParams {
    /// A 22 kg, 1/5-scale rally car. Same values as the shipped
    /// `data/vehicles/autorally.txt`.
    pub fn autorally_like() -> Self {
        Self {
            mass: 22.0,
            yaw_inertia: 1.5,
            lf: 0.34,
            lr: 0.23,
            wheel_radius: 0.095,
            wheel_inertia: 0.1,
            cornering_front: 300.0,
            cornering_rear: 450.0,
            longitudinal_stiffness: 200.0,
            drive_gain: 10.0,
            rolling_resistance: 2.0,
            drag: 0.8,
            dt: 0.02,
            delta_max: 0.35,
            throttle_min: -1.0,
            throttle_max: 1.0,
        }
    }

    /// Parses the flat `key = value` parameter file. Every key is mandatory.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let map = parse_kv(text)?;
        map.reject_unknown(|k| PARAM_KEYS.contains(&k))?;
        Self::from_map(&map)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.into(), source: e })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("lf", self.lf),
            ("lr", self.lr),
            ("wheel_radius", self.wheel_radius),
            ("wheel_inertia", self.wheel_inertia),
            ("cornering_front", self.cornering_front),
            ("cornering_rear", self.cornering_rear),
            ("longitudinal_stiffness", self.longitudinal_stiffness),
            ("drive_gain", self.drive_gain),
            ("delta_max", self.delta_max),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(key, format!("must be positive, got {v}")));
            }
        }
        for (key, v) in [("rolling_resistance", self.rolling_resistance), ("drag", self.drag)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(key, format!("must be non-negative, got {v}")));
            }
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(ConfigError::invalid("dt", format!("must lie in (0, 0.1], got {}", self.dt)));
        }
        if !(self.throttle_min < self.throttle_max && self.throttle_min.is_finite() && self.throttle_max.is_finite()) {
            return Err(ConfigError::invalid("throttle_min", "throttle bounds must satisfy min < max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleModel {
    pub params: VehicleParams,
    pub integrator: Integrator,
}

impl VehicleModel {
    pub fn new(params: VehicleParams) -> Self {
        Self { params, integrator: Integrator::Euler }
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    pub fn clamp(&self, u: Control) -> Control {
        let p = &self.params;
        Control {
            delta: u.delta.clamp(-p.delta_max, p.delta_max),
            throttle: u.throttle.clamp(p.throttle_min, p.throttle_max),
        }
    }

    /// Continuous-time state derivative for an already clamped control.
    pub fn derivative(&self, track: &Track, x: &State, u: Control) -> [f64; STATE_DIM] {
        let p = &self.params;
        let State { v_x, v_y, psi_dot, omega_f, omega_r, e_psi, e_y, s } = *x;

        let v_reg = v_x.abs().max(MIN_SLIP_SPEED);
        let slip_f = u.delta - ((v_y + p.lf * psi_dot) / v_reg).atan();
        let slip_r = -((v_y - p.lr * psi_dot) / v_reg).atan();
        let fy_f = p.cornering_front * slip_f;
        let fy_r = p.cornering_rear * slip_r;

        let fx_f = p.longitudinal_stiffness * (p.wheel_radius * omega_f - v_x) / v_reg;
        let fx_r = p.longitudinal_stiffness * (p.wheel_radius * omega_r - v_x) / v_reg;
        let resistance = p.rolling_resistance * v_x + p.drag * v_x * v_x.abs();

        let (sin_d, cos_d) = u.delta.sin_cos();
        let front_long = fx_f * cos_d - fy_f * sin_d;
        let front_lat = fy_f * cos_d + fx_f * sin_d;

        let kappa = track.curvature_at(s);
        let mut denom = 1.0 - kappa * e_y;
        if denom.abs() < MIN_PROGRESS_DENOM {
            denom = MIN_PROGRESS_DENOM.copysign(denom);
        }
        let (sin_e, cos_e) = e_psi.sin_cos();
        let s_dot = (v_x * cos_e - v_y * sin_e) / denom;

        [
            (fx_r + front_long - resistance) / p.mass + v_y * psi_dot,
            (fy_r + front_lat) / p.mass - v_x * psi_dot,
            (p.lf * front_lat - p.lr * fy_r) / p.yaw_inertia,
            -p.wheel_radius * fx_f / p.wheel_inertia,
            (p.drive_gain * u.throttle - p.wheel_radius * fx_r) / p.wheel_inertia,
            psi_dot - kappa * s_dot,
            v_x * sin_e + v_y * cos_e,
            s_dot,
        ]
    }

    /// One integration step `x_{k+1} = f(x_k, u_k)`; the control is clamped first.
    pub fn step(&self, track: &Track, x: &State, u: Control) -> Result<State, DynamicsError> {
        let u = self.clamp(u);
        let dt = self.params.dt;
        let next = match self.integrator {
            Integrator::Euler => x.axpy(dt, &self.derivative(track, x, u)),
            Integrator::Rk4 => {
                let k1 = self.derivative(track, x, u);
                let k2 = self.derivative(track, &x.axpy(dt / 2.0, &k1), u);
                let k3 = self.derivative(track, &x.axpy(dt / 2.0, &k2), u);
                let k4 = self.derivative(track, &x.axpy(dt, &k3), u);
                let mut d = [0.0; STATE_DIM];
                for i in 0..STATE_DIM {
                    d[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
                }
                x.axpy(dt, &d)
            }
        };
        if next.is_finite() {
            Ok(next)
        } else {
            Err(DynamicsError::NonFinite { state: *x, control: u })
        }
    }

    /// `(x, x_prev) -> (f(x, u), x)`.
    pub fn step_augmented(&self, track: &Track, z: &AugmentedState, u: Control) -> Result<AugmentedState, DynamicsError> {
        Ok(AugmentedState { current: self.step(track, &z.current, u)?, previous: z.current })
    }

    /// `f(x, u) + w` with additive state noise `w`.
    pub fn step_disturbed(
        &self,
        track: &Track,
        x: &State,
        u: Control,
        noise: &[f64; STATE_DIM],
    ) -> Result<State, DynamicsError> {
        let next = self.step(track, x, u)?.axpy(1.0, noise);
        if next.is_finite() {
            Ok(next)
        } else {
            Err(DynamicsError::NonFinite { state: *x, control: self.clamp(u) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{circle_waypoints, stadium_waypoints};

    fn straight_track() -> Track {
        // 1 km straights; curvature is exactly zero between interior waypoints
        Track::from_waypoints(stadium_waypoints(1000.0, 20.0, 1.0), 2.0).unwrap()
    }

    fn model() -> VehicleModel {
        VehicleModel::new(VehicleParams::autorally_like())
    }

    #[test]
    fn rest_is_equilibrium() {
        let t = straight_track();
        let m = model();
        let x = State::default();
        assert_eq!(m.step(&t, &x, Control::ZERO).unwrap(), x);
        let mut y = x;
        for _ in 0..100 {
            y = m.step(&t, &y, Control::ZERO).unwrap();
        }
        assert_eq!(y, x);
    }

    #[test]
    fn one_euler_step_on_straight() {
        let t = straight_track();
        let m = model();
        let x = State { v_x: 5.0, s: 100.0, ..State::default() };
        let y = m.step(&t, &x, Control::ZERO).unwrap();
        // Euler: s' = s + dt * v_x * cos(0) / (1 - 0)
        assert!((y.s - 100.1).abs() < 1e-12);
        assert_eq!(y.e_y, 0.0);
        assert_eq!(y.e_psi, 0.0);
    }

    #[test]
    fn steering_is_clamped() {
        let t = Track::from_waypoints(circle_waypoints(10.0, 360), 1.0).unwrap();
        let m = model();
        let x = State { v_x: 4.0, v_y: 0.3, psi_dot: 0.2, e_y: 0.1, s: 3.0, ..State::cruising(4.0, 0.095) };
        let a = m.step(&t, &x, Control::new(1.0, 2.0)).unwrap();
        let b = m.step(&t, &x, Control::new(0.35, 1.0)).unwrap();
        assert_eq!(a, b);
        let a = m.step(&t, &x, Control::new(-3.0, -5.0)).unwrap();
        let b = m.step(&t, &x, Control::new(-0.35, -1.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn straight_line_keeps_lateral_offset() {
        let t = straight_track();
        let m = model();
        let mut x = State { e_y: 0.7, s: 10.0, ..State::cruising(3.0, 0.095) };
        for _ in 0..500 {
            x = m.step(&t, &x, Control::new(0.0, 0.5)).unwrap();
            assert_eq!(x.e_y, 0.7);
        }
        assert!(x.v_x > 3.0);
    }

    #[test]
    fn augmented_step_chains() {
        let t = Track::from_waypoints(stadium_waypoints(20.0, 5.0, 0.5), 1.0).unwrap();
        let m = model();
        let x = State::cruising(3.0, 0.095);
        let u = Control::new(0.1, 0.3);
        let z0 = AugmentedState::initial(x);
        let z1 = m.step_augmented(&t, &z0, u).unwrap();
        assert_eq!(z1.current, m.step(&t, &x, u).unwrap());
        assert_eq!(z1.previous, x);
        let z2 = m.step_augmented(&t, &z1, u).unwrap();
        assert_eq!(z2.previous, z1.current);
    }

    #[test]
    fn non_finite_propagates() {
        let t = straight_track();
        let m = model();
        let x = State { v_x: f64::NAN, ..State::default() };
        assert!(m.step(&t, &x, Control::ZERO).is_err());
        let z = AugmentedState::initial(x);
        assert!(m.step_augmented(&t, &z, Control::ZERO).is_err());
    }

    #[test]
    fn disturbance_is_additive() {
        let t = straight_track();
        let m = model();
        let x = State { e_y: 0.2, s: 5.0, ..State::cruising(4.0, 0.095) };
        let u = Control::new(0.05, 0.2);
        let base = m.step(&t, &x, u).unwrap();
        assert_eq!(m.step_disturbed(&t, &x, u, &[0.0; 8]).unwrap(), base);
        let mut w = [0.0; 8];
        w[6] = 0.05;
        let d = m.step_disturbed(&t, &x, u, &w).unwrap();
        assert_eq!(d.e_y, base.e_y + 0.05);
        assert_eq!(d.v_x, base.v_x);
        w[2] = f64::INFINITY;
        assert!(m.step_disturbed(&t, &x, u, &w).is_err());
    }

    #[test]
    fn stays_finite_under_full_inputs() {
        let t = Track::from_waypoints(circle_waypoints(10.0, 360), 1.0).unwrap();
        for integrator in [Integrator::Euler, Integrator::Rk4] {
            let m = model().with_integrator(integrator);
            let mut x = State::default();
            for k in 0..3000 {
                let u = Control::new(if (k / 100) % 2 == 0 { 0.35 } else { -0.35 }, if k < 2000 { 1.0 } else { -1.0 });
                x = m.step(&t, &x, u).unwrap();
            }
            assert!(x.v_x.abs() < 20.0, "{x:?}");
        }
    }

    #[test]
    fn params_file_matches_builtin() {
        let text = include_str!("../data/vehicles/autorally.txt");
        assert_eq!(VehicleParams::parse(text).unwrap(), VehicleParams::autorally_like());
    }

    #[test]
    fn params_file_requires_every_key() {
        let text = VehicleParams::autorally_like().to_kv_text();
        let missing: String = text.lines().filter(|l| !l.starts_with("drag ")).map(|l| format!("{l}\n")).collect();
        assert!(matches!(VehicleParams::parse(&missing), Err(ConfigError::MissingKey(k)) if k == "drag"));
        let extra = format!("{text}downforce = 3\n");
        assert!(matches!(VehicleParams::parse(&extra), Err(ConfigError::UnknownKey(k)) if k == "downforce"));
        let bad = text.replace("dt = 0.02", "dt = 0.5");
        assert!(matches!(VehicleParams::parse(&bad), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn central_differences_are_finite_and_continuous() {
        let t = Track::from_waypoints(stadium_waypoints(20.0, 5.0, 0.5), 1.0).unwrap();
        let m = model();
        let x = State { v_y: 0.2, psi_dot: 0.3, e_y: 0.4, e_psi: 0.1, s: 25.0, ..State::cruising(5.0, 0.095) };
        let fd = |u: Control, ch: usize, h: f64| {
            let mut up = u.to_array();
            let mut dn = u.to_array();
            up[ch] += h;
            dn[ch] -= h;
            let a = m.step(&t, &x, Control::from_array(up)).unwrap().to_array();
            let b = m.step(&t, &x, Control::from_array(dn)).unwrap().to_array();
            a.iter().zip(b).map(|(p, q)| (p - q) / (2.0 * h)).collect::<Vec<_>>()
        };
        for ch in 0..2 {
            let g0 = fd(Control::new(0.1, 0.2), ch, 1e-5);
            let g1 = fd(Control::new(0.1 + 1e-4, 0.2 + 1e-4), ch, 1e-5);
            for (a, b) in g0.iter().zip(&g1) {
                assert!(a.is_finite());
                assert!((a - b).abs() <= 1e-3 * (1.0 + a.abs()));
            }
        }
    }
}
