//! Gradient-based repair of a control sequence against DCBF violations.
//!
//! The first `N + 1` controls of the optimizer output are pushed uphill on
//!
//! ```text
//!     J(v) = sum_{k=0}^{N} min(h(x_{k+1}) - alpha h(x_k), 0),   x_{k+1} = f(x_k, v_k)
//! ```
//!
//! which is zero exactly when every step satisfies the DCBF condition. The
//! gradient is taken by central finite differences, and the ascent runs for a
//! fixed number of iterations, either as plain gradient steps or with a BFGS
//! inverse-Hessian estimate.

use std::fmt;
use std::str::FromStr;

use crate::cost::{self, CbfParams};
use crate::dynamics::{Control, State, VehicleModel};
use crate::track::Track;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RepairMethod {
    #[default]
    Gradient,
    QuasiNewton,
}

impl FromStr for RepairMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gradient" => Ok(Self::Gradient),
            "bfgs" | "quasi-newton" => Ok(Self::QuasiNewton),
            _ => Err(format!("unknown repair method `{s}` (expected gradient or bfgs)")),
        }
    }
}

impl fmt::Display for RepairMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gradient => "gradient",
            Self::QuasiNewton => "bfgs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShieldConfig {
    /// Repair horizon `N`; the first `N + 1` controls are repaired.
    pub horizon: usize,
    /// Iteration cap `n_s`.
    pub iterations: usize,
    /// Step size `delta`.
    pub step: f64,
    pub fd_eps: f64,
    pub method: RepairMethod,
    /// Backtrack until the objective does not decrease.
    pub line_search: bool,
    pub max_halvings: u32,
}

impl Default for ShieldConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            iterations: 10,
            step: 0.05,
            fd_eps: 1e-5,
            method: RepairMethod::Gradient,
            line_search: true,
            max_halvings: 8,
        }
    }
}

/// A system with a barrier function, as seen by the repair.
pub trait BarrierSystem {
    type State: Copy;

    /// One nominal step; `None` if the model blows up.
    fn propagate(&self, x: &Self::State, u: Control) -> Option<Self::State>;

    fn barrier(&self, x: &Self::State) -> f64;

    fn clamp(&self, u: Control) -> Control;
}

/// The vehicle on a track with `h = w_T^2 - e_y^2`.
#[derive(Clone, Copy)]
pub struct VehicleBarrier<'a> {
    pub model: &'a VehicleModel,
    pub track: &'a Track,
}

impl BarrierSystem for VehicleBarrier<'_> {
    type State = State;

    fn propagate(&self, x: &State, u: Control) -> Option<State> {
        self.model.step(self.track, x, u).ok()
    }

    fn barrier(&self, x: &State) -> f64 {
        cost::h(self.track.half_width(), x)
    }

    fn clamp(&self, u: Control) -> Control {
        self.model.clamp(u)
    }
}

/// Sum of clipped residuals from `x` under `controls`, or `-inf` on blow-up.
fn rollout_objective<S: BarrierSystem>(sys: &S, cbf: &CbfParams, x: &S::State, controls: &[Control]) -> f64 {
    let mut x = *x;
    let mut h_prev = sys.barrier(&x);
    let mut total = 0.0;
    for &u in controls {
        x = match sys.propagate(&x, u) {
            Some(next) => next,
            None => return f64::NEG_INFINITY,
        };
        let h_next = sys.barrier(&x);
        total += cost::dcbf_residual(cbf, h_next, h_prev).min(0.0);
        h_prev = h_next;
    }
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

/// Repair objective over all of `v` (length `N + 1`). Non-positive; zero iff
/// every step satisfies the DCBF condition.
pub fn repair_objective<S: BarrierSystem>(sys: &S, cbf: &CbfParams, x0: &S::State, v: &[Control]) -> f64 {
    rollout_objective(sys, cbf, x0, v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairGradient {
    pub grad: Vec<[f64; 2]>,
    /// Set when the objective or one of its probes blew up; the affected
    /// entries are zero.
    pub degenerate: bool,
}

/// Central finite-difference gradient of `repair_objective` w.r.t. every
/// control entry.
pub fn repair_gradient<S: BarrierSystem>(
    sys: &S,
    cbf: &CbfParams,
    fd_eps: f64,
    x0: &S::State,
    v: &[Control],
) -> RepairGradient {
    let n = v.len();
    let mut grad = vec![[0.0; 2]; n];

    // prefix states and clipped-residual partial sums along the nominal rollout
    let mut states = Vec::with_capacity(n + 1);
    let mut prefix = Vec::with_capacity(n + 1);
    states.push(*x0);
    prefix.push(0.0);
    let mut h_prev = sys.barrier(x0);
    for (k, &u) in v.iter().enumerate() {
        let Some(next) = sys.propagate(&states[k], u) else {
            return RepairGradient { grad, degenerate: true };
        };
        let h_next = sys.barrier(&next);
        prefix.push(prefix[k] + cost::dcbf_residual(cbf, h_next, h_prev).min(0.0));
        h_prev = h_next;
        states.push(next);
    }
    if !prefix[n].is_finite() {
        return RepairGradient { grad, degenerate: true };
    }

    let mut degenerate = false;
    let mut probe = v.to_vec();
    for i in 0..n {
        for ch in 0..2 {
            let base = v[i].to_array();
            let mut eval = |delta: f64| {
                let mut a = base;
                a[ch] += delta;
                probe[i] = Control::from_array(a);
                prefix[i] + rollout_objective(sys, cbf, &states[i], &probe[i..])
            };
            let up = eval(fd_eps);
            let down = eval(-fd_eps);
            probe[i] = v[i];
            let g = (up - down) / (2.0 * fd_eps);
            if g.is_finite() {
                grad[i][ch] = g;
            } else {
                degenerate = true;
            }
        }
    }
    RepairGradient { grad, degenerate }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutcome {
    /// Full-length sequence: repaired head followed by the untouched tail.
    pub controls: Vec<Control>,
    /// Objective at the input and after each accepted iterate.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// Whether any control differs from the input.
    pub changed: bool,
    /// The objective was `-inf` at the input; nothing was attempted.
    pub degenerate: bool,
}

impl RepairOutcome {
    pub fn initial_objective(&self) -> f64 {
        self.history[0]
    }

    pub fn final_objective(&self) -> f64 {
        *self.history.last().expect("history is never empty")
    }
}

fn flatten(v: &[Control]) -> Vec<f64> {
    v.iter().flat_map(|u| u.to_array()).collect()
}

fn unflatten<S: BarrierSystem>(sys: &S, x: &[f64]) -> Vec<Control> {
    x.chunks_exact(2).map(|c| sys.clamp(Control::new(c[0], c[1]))).collect()
}

/// Repairs the first `N + 1` controls of `v_plus`; see the module docs.
pub fn repair<S: BarrierSystem>(
    config: &ShieldConfig,
    sys: &S,
    cbf: &CbfParams,
    x0: &S::State,
    v_plus: &[Control],
) -> RepairOutcome {
    let head_len = (config.horizon + 1).min(v_plus.len());
    let mut head: Vec<Control> = v_plus[..head_len].iter().map(|&u| sys.clamp(u)).collect();
    let mut objective = repair_objective(sys, cbf, x0, &head);
    let mut history = vec![objective];
    let unchanged = |history: Vec<f64>, iterations: usize, degenerate: bool| RepairOutcome {
        controls: v_plus.to_vec(),
        history,
        iterations,
        changed: false,
        degenerate,
    };
    if objective == f64::NEG_INFINITY {
        return unchanged(history, 0, true);
    }

    let dim = 2 * head_len;
    // inverse Hessian estimate of -J, used by the quasi-Newton method
    let mut inv_hessian: Vec<f64> = (0..dim * dim)
        .map(|i| if i / dim == i % dim { config.step } else { 0.0 })
        .collect();
    let mut grad = repair_gradient(sys, cbf, config.fd_eps, x0, &head).grad.concat();
    let mut iterations = 0;

    while iterations < config.iterations && objective < 0.0 {
        iterations += 1;
        let direction: Vec<f64> = match config.method {
            RepairMethod::Gradient => grad.iter().map(|g| config.step * g).collect(),
            RepairMethod::QuasiNewton => (0..dim)
                .map(|r| (0..dim).map(|c| inv_hessian[r * dim + c] * grad[c]).sum())
                .collect(),
        };
        if direction.iter().all(|d| *d == 0.0) {
            break;
        }

        let current = flatten(&head);
        let mut scale = 1.0;
        let mut accepted = None;
        for attempt in 0..=config.max_halvings {
            let trial: Vec<f64> = current.iter().zip(&direction).map(|(x, d)| x + scale * d).collect();
            let trial = unflatten(sys, &trial);
            let value = repair_objective(sys, cbf, x0, &trial);
            if !config.line_search || (value >= objective && trial != head) {
                accepted = Some((trial, value));
                break;
            }
            if attempt == config.max_halvings {
                break;
            }
            scale *= 0.5;
        }
        let Some((next, value)) = accepted else { break };
        if value == f64::NEG_INFINITY {
            break;
        }

        let next_grad = repair_gradient(sys, cbf, config.fd_eps, x0, &next).grad.concat();
        if config.method == RepairMethod::QuasiNewton {
            let s: Vec<f64> = flatten(&next).iter().zip(&current).map(|(a, b)| a - b).collect();
            // gradient of -J
            let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| b - a).collect();
            bfgs_update(&mut inv_hessian, &s, &y);
        }
        head = next;
        objective = value;
        grad = next_grad;
        history.push(objective);
    }

    let mut controls = v_plus.to_vec();
    controls[..head_len].copy_from_slice(&head);
    let changed = controls != v_plus;
    RepairOutcome { controls, history, iterations, changed, degenerate: false }
}

/// Standard BFGS update of an inverse Hessian; skipped without curvature.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64]) {
    let n = s.len();
    let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
    if !(sy > 1e-12) {
        return;
    }
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|r| (0..n).map(|c| h[r * n + c] * y[c]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for r in 0..n {
        for c in 0..n {
            h[r * n + c] += -rho * (hy[r] * s[c] + s[r] * hy[c]) + (rho * rho * yhy + rho) * s[r] * s[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::VehicleParams;
    use crate::track::stadium_waypoints;

    /// `e_y+ = e_y + dt u` on the steering channel, `h = w^2 - e_y^2`.
    struct Lateral {
        dt: f64,
        w: f64,
        u_max: f64,
    }

    impl BarrierSystem for Lateral {
        type State = f64;
        fn propagate(&self, x: &f64, u: Control) -> Option<f64> {
            Some(x + self.dt * u.delta.clamp(-self.u_max, self.u_max))
        }
        fn barrier(&self, x: &f64) -> f64 {
            self.w * self.w - x * x
        }
        fn clamp(&self, u: Control) -> Control {
            Control::new(u.delta.clamp(-self.u_max, self.u_max), u.throttle)
        }
    }

    const SYS: Lateral = Lateral { dt: 0.1, w: 1.0, u_max: 5.0 };

    fn steer(values: &[f64]) -> Vec<Control> {
        values.iter().map(|&d| Control::new(d, 0.0)).collect()
    }

    #[test]
    fn objective_examples() {
        let cbf = CbfParams { alpha: 0.9, c: 1.0 };
        assert_eq!(repair_objective(&SYS, &cbf, &0.0, &steer(&[0.0, 0.0, 0.0])), 0.0);
        assert_eq!(repair_objective(&SYS, &cbf, &0.3, &steer(&[-1.0, -1.0])), 0.0);
        // h0 = 0.5 at e_y^2 = 0.5, h1 = 0.4 at e_y^2 = 0.6: residual -0.05
        let e0 = 0.5f64.sqrt();
        let u = (0.6f64.sqrt() - e0) / SYS.dt;
        let j = repair_objective(&SYS, &cbf, &e0, &steer(&[u]));
        assert!((j + 0.05).abs() < 1e-12, "{j}");
    }

    #[test]
    fn gradient_is_zero_in_flat_region() {
        let cbf = CbfParams::default();
        let g = repair_gradient(&SYS, &cbf, 1e-5, &0.1, &steer(&[-0.5, -0.5, 0.0]));
        assert!(!g.degenerate);
        assert!(g.grad.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_matches_one_step_chain_rule() {
        // J = h(e + dt u) - alpha h(e) when violated, so dJ/du = -2 (e + dt u) dt
        let cbf = CbfParams { alpha: 0.9, c: 1.0 };
        let e0 = 0.9;
        let u = 1.5;
        let g = repair_gradient(&SYS, &cbf, 1e-5, &e0, &steer(&[u]));
        let expected = -2.0 * (e0 + SYS.dt * u) * SYS.dt;
        assert!(((g.grad[0][0] - expected) / expected).abs() < 1e-3);
        assert_eq!(g.grad[0][1], 0.0);
    }

    #[test]
    fn identity_when_already_safe() {
        let cbf = CbfParams::default();
        let v = steer(&[0.0, -0.2, 0.1, 0.4, 0.3]);
        let cfg = ShieldConfig { horizon: 2, ..ShieldConfig::default() };
        let out = repair(&cfg, &SYS, &cbf, &0.2, &v);
        assert_eq!(out.controls, v);
        assert_eq!(out.iterations, 0);
        assert!(!out.changed);
    }

    #[test]
    fn zero_iterations_is_identity() {
        let cbf = CbfParams::default();
        let v = steer(&[5.0, 5.0, 5.0, 5.0]);
        let cfg = ShieldConfig { horizon: 2, iterations: 0, ..ShieldConfig::default() };
        let out = repair(&cfg, &SYS, &cbf, &0.95, &v);
        assert_eq!(out.controls, v);
        assert!(out.initial_objective() < 0.0);
    }

    #[test]
    fn repair_improves_and_keeps_tail() {
        let cbf = CbfParams::default();
        let v = steer(&[5.0, 5.0, 5.0, 4.0, 3.0]);
        for method in [RepairMethod::Gradient, RepairMethod::QuasiNewton] {
            let cfg = ShieldConfig { horizon: 2, iterations: 30, step: 2.0, method, ..ShieldConfig::default() };
            let out = repair(&cfg, &SYS, &cbf, &0.9, &v);
            assert!(out.final_objective() > out.initial_objective(), "{method}: {:?}", out.history);
            assert!(out.history.windows(2).all(|w| w[1] >= w[0]));
            assert_eq!(&out.controls[3..], &v[3..]);
            assert!(out.changed);
        }
    }

    #[test]
    fn blow_up_is_flagged() {
        struct Explodes;
        impl BarrierSystem for Explodes {
            type State = f64;
            fn propagate(&self, _: &f64, _: Control) -> Option<f64> {
                None
            }
            fn barrier(&self, x: &f64) -> f64 {
                -x
            }
            fn clamp(&self, u: Control) -> Control {
                u
            }
        }
        let v = steer(&[1.0, 1.0, 1.0]);
        let out = repair(&ShieldConfig::default(), &Explodes, &CbfParams::default(), &1.0, &v);
        assert!(out.degenerate);
        assert_eq!(out.controls, v);
        let g = repair_gradient(&Explodes, &CbfParams::default(), 1e-5, &1.0, &v);
        assert!(g.degenerate);
    }

    #[test]
    fn vehicle_steering_outward_is_repaired() {
        let model = VehicleModel::new(VehicleParams::autorally_like());
        let track = Track::from_waypoints(stadium_waypoints(40.0, 8.0, 0.5), 1.0).unwrap();
        let sys = VehicleBarrier { model: &model, track: &track };
        let cbf = CbfParams::default();
        let x0 = State { e_y: 0.8, e_psi: 0.15, s: 5.0, ..State::cruising(5.0, 0.095) };
        let v = vec![Control::new(0.3, 0.5); 20];
        let cfg = ShieldConfig::default();
        let out = repair(&cfg, &sys, &cbf, &x0, &v);
        assert!(out.initial_objective() < 0.0);
        assert!(out.final_objective() > out.initial_objective());
        assert!(out.controls[0].delta < 0.3);
        assert_eq!(&out.controls[cfg.horizon + 1..], &v[cfg.horizon + 1..]);
    }
}
