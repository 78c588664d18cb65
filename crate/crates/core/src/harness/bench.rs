use std::time::Instant;

use super::{Controller, ControllerKind, RunSettings};
use crate::dynamics::{State, VehicleModel};
use crate::mppi::Executor;
use crate::track::Track;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub kind: ControllerKind,
    pub steps: usize,
    pub workers: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Wall-clock latency of one control step (sampling, rollouts, update and
/// repair) measured along a closed-loop nominal run.
pub fn bench_control_step(
    track: &Track,
    model: &VehicleModel,
    settings: &RunSettings,
    kind: ControllerKind,
    steps: usize,
    workers: usize,
) -> BenchReport {
    let executor = Executor::with_workers(workers);
    let workers = executor.workers();
    let mut controller = Controller::new(kind, settings, 0, executor);
    let mut x = State::cruising(settings.episode.initial_speed.max(3.0), model.params.wheel_radius);
    let warmup = 5;
    let mut times = Vec::with_capacity(steps);
    let steps = steps.max(1);
    for i in 0..steps + warmup {
        let t0 = Instant::now();
        let (u, _) = controller.control_step(model, track, &x);
        let dt = t0.elapsed().as_secs_f64() * 1e3;
        if i >= warmup {
            times.push(dt);
        }
        x = model.step(track, &x, u).unwrap_or(x);
    }
    times.sort_by(f64::total_cmp);
    BenchReport {
        kind,
        steps,
        workers,
        p50_ms: percentile(&times, 0.5),
        p95_ms: percentile(&times, 0.95),
        max_ms: *times.last().unwrap_or(&0.0),
    }
}
