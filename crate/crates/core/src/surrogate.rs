//! One-dimensional single integrator `x+ = x + dt * u` with a scalar
//! barrier, for checking shield properties in isolation.

use crate::cost::CbfParams;
use crate::dynamics::Control;
use crate::shield::{repair, BarrierSystem, ShieldConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Barrier1d {
    /// `h = w^2 - x^2`: a lane of half-width `w`.
    Corridor { half_width: f64 },
    /// `h = x`: the half-line `x >= 0`.
    HalfLine,
}

/// The control is the steering channel of [`Control`]; throttle is ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator1d {
    pub dt: f64,
    pub u_max: f64,
    pub barrier: Barrier1d,
}

impl Integrator1d {
    pub fn corridor(dt: f64, u_max: f64, half_width: f64) -> Self {
        Self { dt, u_max, barrier: Barrier1d::Corridor { half_width } }
    }

    pub fn half_line(dt: f64, u_max: f64) -> Self {
        Self { dt, u_max, barrier: Barrier1d::HalfLine }
    }

    pub fn h(&self, x: f64) -> f64 {
        match self.barrier {
            Barrier1d::Corridor { half_width } => half_width * half_width - x * x,
            Barrier1d::HalfLine => x,
        }
    }

    pub fn step(&self, x: f64, u: f64) -> f64 {
        x + self.dt * u.clamp(-self.u_max, self.u_max)
    }

    /// The control that makes the DCBF residual vanish, `h(x+) = alpha h(x)`,
    /// ignoring the input bound. Corridor states keep their side.
    pub fn residual_zero_control(&self, x: f64, alpha: f64) -> f64 {
        let target = match self.barrier {
            Barrier1d::Corridor { half_width } => {
                let w2 = half_width * half_width;
                x.signum() * (w2 - alpha * (w2 - x * x)).sqrt()
            }
            Barrier1d::HalfLine => alpha * x,
        };
        (target - x) / self.dt
    }

    /// Runs the proposals through the shield one at a time and returns the
    /// visited states, starting with `x0`. Each proposal is repaired as a
    /// one-step plan before it is applied.
    pub fn shielded_run(&self, config: &ShieldConfig, cbf: &CbfParams, x0: f64, proposals: &[f64]) -> Vec<f64> {
        let mut xs = Vec::with_capacity(proposals.len() + 1);
        xs.push(x0);
        let mut x = x0;
        for &p in proposals {
            let plan = vec![Control::new(p, 0.0); config.horizon + 1];
            let safe = repair(config, self, cbf, &x, &plan);
            x = self.step(x, safe.controls[0].delta);
            xs.push(x);
        }
        xs
    }
}

impl BarrierSystem for Integrator1d {
    type State = f64;

    fn propagate(&self, x: &f64, u: Control) -> Option<f64> {
        Some(self.step(*x, u.delta))
    }

    fn barrier(&self, x: &f64) -> f64 {
        self.h(*x)
    }

    fn clamp(&self, u: Control) -> Control {
        Control::new(u.delta.clamp(-self.u_max, self.u_max), 0.0)
    }
}
