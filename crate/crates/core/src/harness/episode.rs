use rand_distr::{Distribution, StandardNormal};

use super::{mix_seed, Controller, ControllerKind, EpisodeConfig, RunSettings, StepDiagnostics};
use crate::cost::{dcbf_residual, h};
use crate::dynamics::{Control, State, VehicleModel, STATE_DIM};
use crate::mppi::{keyed_rng, Executor};
use crate::track::Track;

const PLANT_NOISE_TAG: u64 = 0x706c_616e_745f_7721;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub crashed: bool,
    pub collisions: u32,
    /// Time to lap completion, crash detection or timeout (s).
    pub lap_time: f64,
    /// Mean planar speed up to lap end or wall impact.
    pub avg_speed: f64,
    pub max_speed: f64,
    pub shield_interventions: u32,
    /// Steps where no rollout was viable.
    pub fallbacks: u32,
    pub completed: bool,
    pub log: Option<Vec<StepRecord>>,
}

impl EpisodeMetrics {
    /// Touched the boundary at all: a scrape or a crash.
    pub fn collided(&self) -> bool {
        self.crashed || self.collisions > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub state: State,
    pub control: Control,
    pub h: f64,
    pub dcbf_residual: f64,
    pub repaired: bool,
}

/// Counts boundary scrapes and detects crashes from the plant trajectory.
///
/// A collision is a maximal run of samples with `w_T < |e_y| <= w_T + margin`.
/// A crash is `|e_y| > w_T + margin` together with `v_x < v_stop`, held for
/// `t_stop` seconds.
#[derive(Debug, Clone)]
pub struct BoundaryMonitor {
    half_width: f64,
    wall: f64,
    v_stop: f64,
    stop_steps: usize,
    in_band: bool,
    stopped_for: usize,
    pub collisions: u32,
    pub crashed: bool,
}

impl BoundaryMonitor {
    pub fn new(half_width: f64, config: &EpisodeConfig, dt: f64) -> Self {
        Self {
            half_width,
            wall: half_width * (1.0 + config.crash_margin_frac),
            v_stop: config.v_stop,
            stop_steps: ((config.t_stop / dt).round() as usize).max(1),
            in_band: false,
            stopped_for: 0,
            collisions: 0,
            crashed: false,
        }
    }

    /// Distance from the centerline past which the vehicle hits the wall.
    pub fn wall(&self) -> f64 {
        self.wall
    }

    /// Feeds one plant sample; returns true once a crash is detected.
    pub fn observe(&mut self, e_y: f64, v_x: f64) -> bool {
        let off = e_y.abs();
        let band = off > self.half_width && off <= self.wall;
        if band && !self.in_band {
            self.collisions += 1;
        }
        self.in_band = band;
        if off > self.wall && v_x < self.v_stop {
            self.stopped_for += 1;
        } else {
            self.stopped_for = 0;
        }
        if self.stopped_for >= self.stop_steps {
            self.crashed = true;
        }
        self.crashed
    }
}

/// Collisions and crash time for a recorded `(e_y, v_x)` trajectory sampled
/// every `dt` seconds.
pub fn evaluate_log(half_width: f64, config: &EpisodeConfig, dt: f64, samples: &[(f64, f64)]) -> (u32, Option<f64>) {
    let mut monitor = BoundaryMonitor::new(half_width, config, dt);
    for (i, &(e_y, v_x)) in samples.iter().enumerate() {
        if monitor.observe(e_y, v_x) {
            return (monitor.collisions, Some((i + 1) as f64 * dt));
        }
    }
    (monitor.collisions, None)
}

pub struct PolicyStep {
    pub control: Control,
    pub diagnostics: Option<StepDiagnostics>,
}

/// Anything that maps the plant state to a control.
pub trait Policy {
    fn act(&mut self, model: &VehicleModel, track: &Track, x: &State) -> PolicyStep;

    /// Whether the plant realizes the nominal model exactly.
    fn perfect_tracking(&self) -> bool {
        false
    }
}

impl Policy for Controller {
    fn act(&mut self, model: &VehicleModel, track: &Track, x: &State) -> PolicyStep {
        let (control, diag) = self.control_step(model, track, x);
        PolicyStep { control, diagnostics: Some(diag) }
    }

    fn perfect_tracking(&self) -> bool {
        self.kind().perfect_tracking()
    }
}

impl<F: FnMut(&State) -> Control> Policy for F {
    fn act(&mut self, _: &VehicleModel, _: &Track, x: &State) -> PolicyStep {
        PolicyStep { control: self(x), diagnostics: None }
    }
}

/// Closed-loop run of one controller kind for one lap.
pub fn run_episode(
    kind: ControllerKind,
    track: &Track,
    model: &VehicleModel,
    settings: &RunSettings,
    seed: u64,
    log: bool,
) -> EpisodeMetrics {
    let mut controller = Controller::new(kind, settings, seed, Executor::Sequential);
    run_policy(&mut controller, track, model, settings, seed, log)
}

/// Simulates `policy` from the start line until one lap is completed, the
/// vehicle crashes, or the episode times out.
///
/// The plant adds Gaussian state noise when the disturbance is enabled
/// (never for perfect-tracking policies). Crossing the outer wall at
/// `w_T + margin` stops the vehicle: its velocities and wheel speeds are
/// zeroed and it stays pinned there.
pub fn run_policy<P: Policy>(
    policy: &mut P,
    track: &Track,
    model: &VehicleModel,
    settings: &RunSettings,
    seed: u64,
    log: bool,
) -> EpisodeMetrics {
    let dt = model.dt();
    let ep = &settings.episode;
    let disturbance = settings.disturbance;
    let noisy = disturbance.enabled && !policy.perfect_tracking();
    let mut plant_rng = keyed_rng([mix_seed(seed, 2), 0, 0, PLANT_NOISE_TAG]);
    let mut monitor = BoundaryMonitor::new(track.half_width(), ep, dt);
    let half_width = track.half_width();

    let mut x = State::cruising(ep.initial_speed, model.params.wheel_radius);
    let s_start = x.s;
    let max_steps = (ep.timeout / dt).ceil() as usize;
    let mut records = log.then(Vec::new);
    let mut pinned = false;
    let mut crashed = false;
    let mut completed = false;
    let mut interventions = 0;
    let mut fallbacks = 0;
    let mut speed_sum = 0.0;
    let mut max_speed: f64 = 0.0;
    let mut moving_steps = 0;
    let mut steps = 0;

    while steps < max_steps {
        let (control, repaired) = if pinned {
            (Control::ZERO, false)
        } else {
            let step = policy.act(model, track, &x);
            let diag = step.diagnostics.as_ref();
            let repaired = diag.is_some_and(|d| d.repaired());
            if repaired {
                interventions += 1;
            }
            if diag.is_some_and(|d| d.fallback) {
                fallbacks += 1;
            }
            (model.clamp(step.control), repaired)
        };

        let next = if pinned {
            Ok(x)
        } else if noisy {
            let mut w = [0.0; STATE_DIM];
            for (wi, sd) in w.iter_mut().zip(disturbance.std) {
                let z: f64 = StandardNormal.sample(&mut plant_rng);
                *wi = sd * z;
            }
            model.step_disturbed(track, &x, control, &w)
        } else {
            model.step(track, &x, control)
        };
        steps += 1;
        let mut next = match next {
            Ok(n) => n,
            Err(_) => {
                crashed = true;
                break;
            }
        };
        if !pinned && next.e_y.abs() > monitor.wall() {
            pinned = true;
        }
        if pinned {
            next = State { v_x: 0.0, v_y: 0.0, psi_dot: 0.0, omega_f: 0.0, omega_r: 0.0, ..next };
        }

        if !pinned {
            let speed = next.v_x.hypot(next.v_y);
            speed_sum += speed;
            moving_steps += 1;
            max_speed = max_speed.max(speed);
        }
        if let Some(r) = records.as_mut() {
            let h_next = h(half_width, &next);
            r.push(StepRecord {
                t: steps as f64 * dt,
                state: next,
                control,
                h: h_next,
                dcbf_residual: dcbf_residual(&settings.cbf, h_next, h(half_width, &x)),
                repaired,
            });
        }
        x = next;

        if monitor.observe(x.e_y, x.v_x) {
            crashed = true;
            break;
        }
        if x.s - s_start >= track.total_length() {
            completed = true;
            break;
        }
    }

    EpisodeMetrics {
        crashed,
        collisions: monitor.collisions,
        lap_time: steps.max(1) as f64 * dt,
        avg_speed: if moving_steps > 0 { speed_sum / moving_steps as f64 } else { 0.0 },
        max_speed,
        shield_interventions: interventions,
        fallbacks,
        completed,
        log: records,
    }
}
