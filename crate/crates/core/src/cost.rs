//! Barrier function, DCBF penalty and trajectory cost accumulation.

use thiserror::Error;

use crate::dynamics::{AugmentedState, Control, State, STATE_DIM};
use crate::track::Track;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfParams {
    /// Decay factor `alpha = 1 - beta`, in (0, 1).
    pub alpha: f64,
    /// Penalty per unit of DCBF violation.
    pub c: f64,
}

impl Default for CbfParams {
    fn default() -> Self {
        Self { alpha: 0.9, c: 300.0 }
    }
}

impl CbfParams {
    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// Diagonal state weights, in state order.
    pub q: [f64; STATE_DIM],
    /// Target longitudinal velocity.
    pub v_g: f64,
    /// Off-track penalty.
    pub c_obs: f64,
    /// Weight of the `v^T Sigma^-1 u` control term.
    pub gamma: f64,
    /// Multiplier on the quadratic part of the terminal cost.
    pub terminal_scale: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            q: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.0, 0.0],
            v_g: 7.0,
            c_obs: 1e4,
            gamma: 10.0,
            terminal_scale: 1.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("rollout has {states} states and {nominal}/{applied} controls; expected K+1 states and K controls")]
    LengthMismatch { states: usize, nominal: usize, applied: usize },
}

/// `h(x) = w_T^2 - e_y^2`; non-negative exactly on the track.
pub fn h(half_width: f64, x: &State) -> f64 {
    half_width * half_width - x.e_y * x.e_y
}

/// `h(x_k) - alpha h(x_{k-1})`; non-negative iff the DCBF condition holds.
pub fn dcbf_residual(cbf: &CbfParams, h_curr: f64, h_prev: f64) -> f64 {
    h_curr - cbf.alpha * h_prev
}

pub fn cbf_penalty(cbf: &CbfParams, z: &AugmentedState, half_width: f64) -> f64 {
    let r = dcbf_residual(cbf, h(half_width, &z.current), h(half_width, &z.previous));
    cbf.c * (-r).max(0.0)
}

fn quadratic(cp: &CostParams, x: &State) -> f64 {
    let mut d = x.to_array();
    d[0] -= cp.v_g;
    d.iter().zip(&cp.q).map(|(di, qi)| qi * di * di).sum()
}

fn collision_indicator(cp: &CostParams, track: &Track, x: &State) -> f64 {
    if track.inside_track(x.e_y) {
        0.0
    } else {
        cp.c_obs
    }
}

/// `q(x) = (x - x_g)^T Q (x - x_g) + 1(x)`.
pub fn running_cost(cp: &CostParams, track: &Track, x: &State) -> f64 {
    quadratic(cp, x) + collision_indicator(cp, track, x)
}

/// Terminal cost; equals `running_cost` with the default `terminal_scale`.
pub fn terminal_cost(cp: &CostParams, track: &Track, x: &State) -> f64 {
    cp.terminal_scale * quadratic(cp, x) + collision_indicator(cp, track, x)
}

/// `gamma * v^T Sigma^-1 u`.
pub fn control_cost(gamma: f64, sigma_inv: &[[f64; 2]; 2], v: Control, u: Control) -> f64 {
    let su = [
        sigma_inv[0][0] * u.delta + sigma_inv[0][1] * u.throttle,
        sigma_inv[1][0] * u.delta + sigma_inv[1][1] * u.throttle,
    ];
    gamma * (v.delta * su[0] + v.throttle * su[1])
}

/// Everything needed to score a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub params: CostParams,
    pub cbf: CbfParams,
    /// Whether the DCBF penalty enters the trajectory cost.
    pub cbf_enabled: bool,
    pub sigma_inv: [[f64; 2]; 2],
}

impl CostModel {
    /// Running term for step `k`: state cost, control cost and DCBF penalty.
    pub fn stage(&self, track: &Track, z: &AugmentedState, v: Control, u: Control) -> f64 {
        let mut c = running_cost(&self.params, track, &z.current) + control_cost(self.params.gamma, &self.sigma_inv, v, u);
        if self.cbf_enabled {
            c += cbf_penalty(&self.cbf, z, track.half_width());
        }
        c
    }

    pub fn terminal(&self, track: &Track, z: &AugmentedState) -> f64 {
        let mut c = terminal_cost(&self.params, track, &z.current);
        if self.cbf_enabled {
            c += cbf_penalty(&self.cbf, z, track.half_width());
        }
        c
    }

    /// Cost of one rollout given its K+1 augmented states, the K nominal
    /// controls and the K applied (noisy, clamped) controls.
    pub fn trajectory_cost(
        &self,
        track: &Track,
        states: &[AugmentedState],
        nominal: &[Control],
        applied: &[Control],
    ) -> Result<f64, CostError> {
        if states.len() != nominal.len() + 1 || nominal.len() != applied.len() {
            return Err(CostError::LengthMismatch {
                states: states.len(),
                nominal: nominal.len(),
                applied: applied.len(),
            });
        }
        let mut total = 0.0;
        for ((z, &v), &u) in states.iter().zip(nominal).zip(applied) {
            total += self.stage(track, z, v, u);
        }
        Ok(total + self.terminal(track, &states[states.len() - 1]))
    }
}
