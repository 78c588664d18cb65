//! Model predictive path integral optimizer.
//!
//! One iteration samples `M` Gaussian perturbations of the nominal control
//! sequence, simulates every perturbed sequence under the nominal model,
//! scores it, and moves the nominal sequence towards the exponentially
//! weighted average perturbation. Noise for rollout `m` of iteration `i` is
//! drawn from a ChaCha stream keyed by `(seed, i, m)`, so batches do not
//! depend on how rollouts are scheduled across threads.

#[cfg(feature = "parallel")]
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::cost::CostModel;
use crate::dynamics::{AugmentedState, Control, State, VehicleModel};
use crate::track::Track;

pub type ControlSequence = Vec<Control>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MppiError {
    #[error("no rollout has a finite cost")]
    NoViableRollout,
    #[error("total importance weight is {0}")]
    DegenerateWeights(f64),
    #[error("nominal sequence has {got} controls, horizon is {expected}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("invalid sampling covariance: {0}")]
    Covariance(String),
}

/// Symmetric positive definite 2x2 sampling covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance2 {
    matrix: [[f64; 2]; 2],
    chol: [[f64; 2]; 2],
    inverse: [[f64; 2]; 2],
}

impl Covariance2 {
    pub fn new(matrix: [[f64; 2]; 2]) -> Result<Self, MppiError> {
        let [[a, b], [c, d]] = matrix;
        if matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MppiError::Covariance("non-finite entry".into()));
        }
        if b != c {
            return Err(MppiError::Covariance(format!("not symmetric ({b} != {c})")));
        }
        let det = a * d - b * c;
        if !(a > 0.0 && det > 0.0) {
            return Err(MppiError::Covariance("not positive definite".into()));
        }
        let l00 = a.sqrt();
        let l10 = b / l00;
        let l11 = (d - l10 * l10).sqrt();
        Ok(Self {
            matrix,
            chol: [[l00, 0.0], [l10, l11]],
            inverse: [[d / det, -b / det], [-c / det, a / det]],
        })
    }

    pub fn diagonal(var_delta: f64, var_throttle: f64) -> Result<Self, MppiError> {
        Self::new([[var_delta, 0.0], [0.0, var_throttle]])
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.matrix
    }

    pub fn inverse(&self) -> [[f64; 2]; 2] {
        self.inverse
    }

    /// Maps a standard normal pair to a draw with this covariance.
    pub fn color(&self, z: [f64; 2]) -> [f64; 2] {
        [self.chol[0][0] * z[0], self.chol[1][0] * z[0] + self.chol[1][1] * z[1]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MppiConfig {
    /// Number of rollouts `M`.
    pub samples: usize,
    /// Horizon `K` in steps.
    pub horizon: usize,
    pub sigma: Covariance2,
    /// Temperature `lambda`.
    pub lambda: f64,
    pub seed: u64,
    /// Layer-1 shield: include the DCBF penalty in rollout costs.
    pub cbf_cost_enabled: bool,
    /// Keep `v <- v+` without shifting between iterations.
    pub no_shift: bool,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            samples: 50,
            horizon: 50,
            sigma: Covariance2::diagonal(0.04, 0.25).expect("valid default covariance"),
            lambda: 10.0,
            seed: 0,
            cbf_cost_enabled: false,
            no_shift: false,
        }
    }
}

/// Perturbations `eps[m][k]`, stored row-major by rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    samples: usize,
    horizon: usize,
    data: Vec<[f64; 2]>,
}

impl NoiseBatch {
    pub fn from_fn(samples: usize, horizon: usize, mut f: impl FnMut(usize, usize) -> [f64; 2]) -> Self {
        let mut data = Vec::with_capacity(samples * horizon);
        for m in 0..samples {
            for k in 0..horizon {
                data.push(f(m, k));
            }
        }
        Self { samples, horizon, data }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rollout(&self, m: usize) -> &[[f64; 2]] {
        &self.data[m * self.horizon..(m + 1) * self.horizon]
    }

    pub fn get(&self, m: usize, k: usize) -> [f64; 2] {
        self.data[m * self.horizon + k]
    }
}

const NOISE_STREAM_TAG: u64 = 0x6d70_7069_6e6f_6973;

/// ChaCha8 generator keyed by a tuple of words.
pub(crate) fn keyed_rng(words: [u64; 4]) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

fn sample_rollout_noise(config: &MppiConfig, iteration: u64, m: usize, out: &mut Vec<[f64; 2]>) {
    let mut rng = keyed_rng([config.seed, iteration, m as u64, NOISE_STREAM_TAG]);
    for _ in 0..config.horizon {
        let z = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
        out.push(config.sigma.color(z));
    }
}

/// Draws the `M x K` perturbations for one iteration.
pub fn sample_noise(config: &MppiConfig, iteration: u64) -> NoiseBatch {
    let mut data = Vec::with_capacity(config.samples * config.horizon);
    for m in 0..config.samples {
        sample_rollout_noise(config, iteration, m, &mut data);
    }
    NoiseBatch { samples: config.samples, horizon: config.horizon, data }
}

/// Where rollouts run. Results never depend on the choice.
#[derive(Clone, Default)]
pub enum Executor {
    #[default]
    Sequential,
    #[cfg(feature = "parallel")]
    Pool(Arc<rayon::ThreadPool>),
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Executor({} workers)", self.workers())
    }
}

impl Executor {
    /// A pool of `workers` threads, or sequential execution for `workers <= 1`.
    pub fn with_workers(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        if workers > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return Self::Pool(Arc::new(pool));
            }
        }
        let _ = workers;
        Self::Sequential
    }

    pub fn workers(&self) -> usize {
        match self {
            Self::Sequential => 1,
            #[cfg(feature = "parallel")]
            Self::Pool(p) => p.current_num_threads(),
        }
    }

    /// `(0..n).map(f)` collected in index order.
    pub fn map<T: Send>(&self, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        match self {
            Self::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Self::Pool(pool) => {
                use rayon::prelude::*;
                pool.install(|| (0..n).into_par_iter().map(f).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub noises: NoiseBatch,
    /// Trajectory costs; `+inf` marks a rollout whose simulation blew up.
    pub costs: Vec<f64>,
    /// Simulated states per rollout, when requested.
    pub trajectories: Option<Vec<Vec<State>>>,
}

pub struct RolloutContext<'a> {
    pub model: &'a VehicleModel,
    pub cost: &'a CostModel,
    pub track: &'a Track,
}

/// Simulates rollout `m` and returns its cost (and states if requested).
fn simulate(
    ctx: &RolloutContext<'_>,
    x0: &State,
    v: &[Control],
    eps: &[[f64; 2]],
    keep: bool,
) -> (f64, Option<Vec<State>>) {
    let mut z = AugmentedState::initial(*x0);
    let mut states = keep.then(|| {
        let mut s = Vec::with_capacity(v.len() + 1);
        s.push(*x0);
        s
    });
    let mut total = 0.0;
    for (vk, e) in v.iter().zip(eps) {
        let u = ctx.model.clamp(Control::new(vk.delta + e[0], vk.throttle + e[1]));
        total += ctx.cost.stage(ctx.track, &z, *vk, u);
        z = match ctx.model.step_augmented(ctx.track, &z, u) {
            Ok(next) => next,
            Err(_) => return (f64::INFINITY, states),
        };
        if let Some(s) = states.as_mut() {
            s.push(z.current);
        }
    }
    total += ctx.cost.terminal(ctx.track, &z);
    if total.is_finite() {
        (total, states)
    } else {
        (f64::INFINITY, states)
    }
}

/// Simulates and scores every perturbed sequence `clamp(v + eps[m])`.
pub fn rollout_batch(
    ctx: &RolloutContext<'_>,
    x0: &State,
    v: &[Control],
    noises: NoiseBatch,
    executor: &Executor,
    keep_trajectories: bool,
) -> Result<RolloutBatch, MppiError> {
    if v.len() != noises.horizon() {
        return Err(MppiError::HorizonMismatch { expected: noises.horizon(), got: v.len() });
    }
    let results = executor.map(noises.samples(), |m| simulate(ctx, x0, v, noises.rollout(m), keep_trajectories));
    let mut costs = Vec::with_capacity(results.len());
    let mut trajectories = keep_trajectories.then(Vec::new);
    for (c, s) in results {
        costs.push(c);
        if let (Some(all), Some(s)) = (trajectories.as_mut(), s) {
            all.push(s);
        }
    }
    Ok(RolloutBatch { noises, costs, trajectories })
}

/// `omega_m = exp(-(S_m - min S) / lambda)`; infinite costs get zero weight.
pub fn weights(costs: &[f64], lambda: f64) -> Result<Vec<f64>, MppiError> {
    let min = costs.iter().copied().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(MppiError::NoViableRollout);
    }
    Ok(costs
        .iter()
        .map(|&c| if c.is_finite() { (-(c - min) / lambda).exp() } else { 0.0 })
        .collect())
}

/// Weights scaled to sum to one.
pub fn normalize(weights: &[f64]) -> Result<Vec<f64>, MppiError> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(MppiError::DegenerateWeights(total));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// `v_k + sum_m omega_m eps_k^m / sum_m omega_m`, unclamped.
pub fn weighted_update(v: &[Control], noises: &NoiseBatch, weights: &[f64]) -> Result<ControlSequence, MppiError> {
    if v.len() != noises.horizon() {
        return Err(MppiError::HorizonMismatch { expected: noises.horizon(), got: v.len() });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(MppiError::DegenerateWeights(total));
    }
    let mut acc = vec![[0.0f64; 2]; v.len()];
    for (m, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (a, e) in acc.iter_mut().zip(noises.rollout(m)) {
            a[0] += w * e[0];
            a[1] += w * e[1];
        }
    }
    Ok(v.iter()
        .zip(&acc)
        .map(|(vk, a)| Control::new(vk.delta + a[0] / total, vk.throttle + a[1] / total))
        .collect())
}

/// Control update law followed by clamping to the model's bounds.
pub fn update_controls(
    model: &VehicleModel,
    v: &[Control],
    noises: &NoiseBatch,
    weights: &[f64],
) -> Result<ControlSequence, MppiError> {
    Ok(weighted_update(v, noises, weights)?.into_iter().map(|u| model.clamp(u)).collect())
}

/// Shifts the sequence one step left, repeating the last control.
pub fn warm_start(v_plus: &[Control]) -> ControlSequence {
    let mut out: ControlSequence = v_plus.iter().skip(1).copied().collect();
    if let Some(&last) = v_plus.last() {
        out.push(last);
    }
    out
}

/// Result of one optimizer iteration.
#[derive(Debug, Clone)]
pub struct MppiStep {
    pub v_plus: ControlSequence,
    pub batch: RolloutBatch,
}

/// Stateful optimizer: holds the warm-start sequence and iteration counter.
#[derive(Debug, Clone)]
pub struct Mppi {
    pub config: MppiConfig,
    nominal: ControlSequence,
    iteration: u64,
    executor: Executor,
}

impl Mppi {
    pub fn new(config: MppiConfig, executor: Executor) -> Self {
        let nominal = vec![Control::ZERO; config.horizon];
        Self { config, nominal, iteration: 0, executor }
    }

    pub fn nominal(&self) -> &[Control] {
        &self.nominal
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Samples, rolls out and updates. Does not touch the warm start.
    pub fn optimize(
        &self,
        ctx: &RolloutContext<'_>,
        x0: &State,
        keep_trajectories: bool,
    ) -> Result<MppiStep, MppiError> {
        let noises = sample_noise(&self.config, self.iteration);
        let batch = rollout_batch(ctx, x0, &self.nominal, noises, &self.executor, keep_trajectories)?;
        let w = weights(&batch.costs, self.config.lambda)?;
        let v_plus = update_controls(ctx.model, &self.nominal, &batch.noises, &w)?;
        Ok(MppiStep { v_plus, batch })
    }

    /// Stores the next warm start and advances the noise stream.
    pub fn advance(&mut self, v_plus: &[Control]) {
        self.nominal = if self.config.no_shift { v_plus.to_vec() } else { warm_start(v_plus) };
        self.iteration += 1;
    }

    /// Executes the head of the current plan without optimizing: the plan
    /// is shifted regardless of `no_shift`.
    pub fn skip(&mut self) {
        self.nominal = warm_start(&self.nominal);
        self.iteration += 1;
    }
}
