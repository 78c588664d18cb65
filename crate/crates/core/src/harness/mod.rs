//! Closed-loop simulation: controller catalog, plant, metrics and sweeps.

mod bench;
mod episode;
mod sweep;

use std::fmt;
use std::str::FromStr;

pub use bench::{bench_control_step, BenchReport};
pub use episode::{
    evaluate_log, run_episode, run_policy, BoundaryMonitor, EpisodeMetrics, Policy, PolicyStep, StepRecord,
};
pub use sweep::{run_sweep, AggregateRow, EpisodeRow, GridPoint, SweepResults, SweepSpec};

use crate::cost::{CbfParams, CostModel, CostParams};
use crate::dynamics::{Control, State, VehicleModel, STATE_DIM};
use crate::mppi::{Executor, Mppi, MppiConfig, MppiError, RolloutContext};
use crate::shield::{repair, RepairOutcome, ShieldConfig, VehicleBarrier};
use crate::track::Track;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControllerKind {
    /// Baseline: trajectory costs without the DCBF penalty.
    Mppi,
    /// DCBF penalty in the rollout costs only.
    CbfMppi,
    /// DCBF penalty plus gradient repair of the output.
    ShieldMppi,
    /// Baseline MPPI driving a plant that realizes its nominal prediction.
    PtMppi,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [Self::Mppi, Self::CbfMppi, Self::ShieldMppi, Self::PtMppi];

    pub fn uses_cbf_cost(self) -> bool {
        matches!(self, Self::CbfMppi | Self::ShieldMppi)
    }

    pub fn uses_repair(self) -> bool {
        self == Self::ShieldMppi
    }

    pub fn perfect_tracking(self) -> bool {
        self == Self::PtMppi
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mppi => "mppi",
            Self::CbfMppi => "cbf-mppi",
            Self::ShieldMppi => "shield-mppi",
            Self::PtMppi => "pt-mppi",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown controller `{s}` (expected mppi, cbf-mppi, shield-mppi or pt-mppi)"))
    }
}

/// Additive Gaussian state noise with diagonal covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceModel {
    pub enabled: bool,
    /// Per-state standard deviations (square roots of the diagonal).
    pub std: [f64; STATE_DIM],
}

impl Default for DisturbanceModel {
    fn default() -> Self {
        Self { enabled: false, std: [0.1, 0.1, 0.05, 0.0, 0.0, 0.01, 0.02, 0.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    /// Width of the scrape band beyond `w_T`, as a fraction of `w_T`.
    pub crash_margin_frac: f64,
    pub v_stop: f64,
    pub t_stop: f64,
    pub timeout: f64,
    pub initial_speed: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { crash_margin_frac: 0.3, v_stop: 0.3, t_stop: 0.5, timeout: 60.0, initial_speed: 0.0 }
    }
}

/// Every tunable of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSettings {
    pub mppi: MppiConfig,
    pub cbf: CbfParams,
    pub cost: CostParams,
    pub shield: ShieldConfig,
    pub disturbance: DisturbanceModel,
    pub episode: EpisodeConfig,
}

/// SplitMix64 finalizer; derives independent sub-seeds.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    /// Optimizer output before repair (the warm start source).
    pub v_plus: Vec<Control>,
    pub repair: Option<RepairOutcome>,
    /// No rollout was viable; the previous plan was executed instead.
    pub fallback: bool,
}

impl StepDiagnostics {
    pub fn repaired(&self) -> bool {
        self.repair.as_ref().is_some_and(|r| r.changed)
    }
}

/// Controller memory for one episode.
#[derive(Debug, Clone)]
pub struct Controller {
    kind: ControllerKind,
    mppi: Mppi,
    cost: CostModel,
    shield: ShieldConfig,
}

impl Controller {
    pub fn new(kind: ControllerKind, settings: &RunSettings, seed: u64, executor: Executor) -> Self {
        let config = MppiConfig {
            seed: mix_seed(seed, 1),
            cbf_cost_enabled: kind.uses_cbf_cost(),
            ..settings.mppi.clone()
        };
        let cost = CostModel {
            params: settings.cost,
            cbf: settings.cbf,
            cbf_enabled: config.cbf_cost_enabled,
            sigma_inv: config.sigma.inverse(),
        };
        Self { kind, mppi: Mppi::new(config, executor), cost, shield: settings.shield }
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    pub fn nominal(&self) -> &[Control] {
        self.mppi.nominal()
    }

    /// Sample, roll out, weight, update, optionally repair; returns the
    /// control to execute and stores the warm start for the next call.
    pub fn control_step(&mut self, model: &VehicleModel, track: &Track, x: &State) -> (Control, StepDiagnostics) {
        let ctx = RolloutContext { model, cost: &self.cost, track };
        match self.mppi.optimize(&ctx, x, false) {
            Ok(step) => {
                let repair = self.kind.uses_repair().then(|| {
                    let sys = VehicleBarrier { model, track };
                    repair(&self.shield, &sys, &self.cost.cbf, x, &step.v_plus)
                });
                let executed = repair.as_ref().map_or(step.v_plus[0], |r| r.controls[0]);
                self.mppi.advance(&step.v_plus);
                (executed, StepDiagnostics { v_plus: step.v_plus, repair, fallback: false })
            }
            Err(MppiError::NoViableRollout | MppiError::DegenerateWeights(_)) => {
                let previous = self.mppi.nominal().to_vec();
                self.mppi.skip();
                (previous[0], StepDiagnostics { v_plus: previous, repair: None, fallback: true })
            }
            Err(e) => panic!("controller invariant violated: {e}"),
        }
    }
}
