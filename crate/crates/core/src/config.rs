//! Flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dynamics::{Integrator, VehicleModel, VehicleParams, STATE_DIM};
use crate::harness::{ControllerKind, GridPoint, RunSettings, SweepSpec};
use crate::mppi::Covariance2;
use crate::shield::RepairMethod;
use crate::track::{load_track_file, Track, TrackError};

pub const SEED_ENV: &str = "SHIELD_MPPI_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("track {}: {source}", path.display())]
    Track { path: PathBuf, source: TrackError },
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid { key: key.into(), message: message.into() }
    }

    /// True for failures of the file system rather than of the content.
    pub fn is_io(&self) -> bool {
        matches!(self, Self::Io { .. } | Self::Track { source: TrackError::Io(_), .. })
    }
}

/// Parsed `key = value` pairs in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<KvMap, ConfigError> {
    let mut map = KvMap::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: i + 1, message: format!("expected `key = value`, got `{line}`") });
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax { line: i + 1, message: format!("bad key `{key}`") });
        }
        if map.entries.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(ConfigError::DuplicateKey(key.to_string()));
        }
    }
    Ok(map)
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value.parse().map_err(|_| ConfigError::invalid(key, format!("expected a number, got `{value}`")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::invalid(key, "must be finite"))
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| ConfigError::invalid(key, format!("expected a non-negative integer, got `{value}`")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64, ConfigError> {
    value.parse().map_err(|_| ConfigError::invalid(key, format!("expected a non-negative integer, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::invalid(key, format!("expected true or false, got `{value}`"))),
    }
}

fn split_list(value: &str) -> Vec<&str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn parse_f64_list<const N: usize>(key: &str, value: &str) -> Result<[f64; N], ConfigError> {
    let items = split_list(value);
    if items.len() != N {
        return Err(ConfigError::invalid(key, format!("expected {N} comma-separated numbers, got {}", items.len())));
    }
    let mut out = [0.0; N];
    for (o, s) in out.iter_mut().zip(items) {
        *o = parse_f64(key, s)?;
    }
    Ok(out)
}

impl KvMap {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn require_str(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, ConfigError> {
        parse_f64(key, self.require_str(key)?)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.get(key).map_or(Ok(default), |v| parse_f64(key, v))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        self.get(key).map_or(Ok(default), |v| parse_usize(key, v))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.get(key).map_or(Ok(default), |v| parse_bool(key, v))
    }

    /// Fails on the first key rejected by `known`.
    pub fn reject_unknown(&self, known: impl Fn(&str) -> bool) -> Result<(), ConfigError> {
        match self.keys().find(|k| !known(k)) {
            Some(k) => Err(ConfigError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }
}

const Q_KEYS: [&str; STATE_DIM] =
    ["cost.q_vx", "cost.q_vy", "cost.q_psi_dot", "cost.q_omega_f", "cost.q_omega_r", "cost.q_epsi", "cost.q_ey", "cost.q_s"];

/// Keys that take one scalar and can therefore be swept.
pub const SCALAR_KEYS: &[&str] = &[
    "mppi.samples",
    "mppi.horizon",
    "mppi.lambda",
    "mppi.no_shift",
    "cbf.alpha",
    "cbf.c",
    "cost.q_vx",
    "cost.q_vy",
    "cost.q_psi_dot",
    "cost.q_omega_f",
    "cost.q_omega_r",
    "cost.q_epsi",
    "cost.q_ey",
    "cost.q_s",
    "cost.v_g",
    "cost.c_obs",
    "cost.gamma",
    "cost.terminal_scale",
    "shield.horizon",
    "shield.iterations",
    "shield.step",
    "shield.fd_eps",
    "shield.method",
    "shield.line_search",
    "shield.max_halvings",
    "disturbance.enabled",
    "episode.crash_margin_frac",
    "episode.v_stop",
    "episode.t_stop",
    "episode.timeout",
    "episode.initial_speed",
];

const LIST_SETTING_KEYS: &[&str] = &["mppi.sigma", "disturbance.std"];

const TOP_KEYS: &[&str] =
    &["track", "vehicle", "integrator", "controllers", "seeds.count", "seeds.base", "mppi.workers", "label"];

/// Applies one settings key to `s`.
pub fn apply_setting(s: &mut RunSettings, key: &str, value: &str) -> Result<(), ConfigError> {
    if let Some(i) = Q_KEYS.iter().position(|k| *k == key) {
        s.cost.q[i] = parse_f64(key, value)?;
        return Ok(());
    }
    match key {
        "mppi.samples" => s.mppi.samples = parse_usize(key, value)?,
        "mppi.horizon" => s.mppi.horizon = parse_usize(key, value)?,
        "mppi.lambda" => s.mppi.lambda = parse_f64(key, value)?,
        "mppi.no_shift" => s.mppi.no_shift = parse_bool(key, value)?,
        "mppi.sigma" => {
            let [a, b, c, d] = parse_f64_list::<4>(key, value)?;
            s.mppi.sigma =
                Covariance2::new([[a, b], [c, d]]).map_err(|e| ConfigError::invalid(key, e.to_string()))?;
        }
        "cbf.alpha" => s.cbf.alpha = parse_f64(key, value)?,
        "cbf.c" => s.cbf.c = parse_f64(key, value)?,
        "cost.v_g" => s.cost.v_g = parse_f64(key, value)?,
        "cost.c_obs" => s.cost.c_obs = parse_f64(key, value)?,
        "cost.gamma" => s.cost.gamma = parse_f64(key, value)?,
        "cost.terminal_scale" => s.cost.terminal_scale = parse_f64(key, value)?,
        "shield.horizon" => s.shield.horizon = parse_usize(key, value)?,
        "shield.iterations" => s.shield.iterations = parse_usize(key, value)?,
        "shield.step" => s.shield.step = parse_f64(key, value)?,
        "shield.fd_eps" => s.shield.fd_eps = parse_f64(key, value)?,
        "shield.method" => s.shield.method = value.parse::<RepairMethod>().map_err(|e| ConfigError::invalid(key, e))?,
        "shield.line_search" => s.shield.line_search = parse_bool(key, value)?,
        "shield.max_halvings" => {
            s.shield.max_halvings = u32::try_from(parse_usize(key, value)?)
                .map_err(|_| ConfigError::invalid(key, "too large"))?
        }
        "disturbance.enabled" => s.disturbance.enabled = parse_bool(key, value)?,
        "disturbance.std" => s.disturbance.std = parse_f64_list::<STATE_DIM>(key, value)?,
        "episode.crash_margin_frac" => s.episode.crash_margin_frac = parse_f64(key, value)?,
        "episode.v_stop" => s.episode.v_stop = parse_f64(key, value)?,
        "episode.t_stop" => s.episode.t_stop = parse_f64(key, value)?,
        "episode.timeout" => s.episode.timeout = parse_f64(key, value)?,
        "episode.initial_speed" => s.episode.initial_speed = parse_f64(key, value)?,
        _ => return Err(ConfigError::UnknownKey(key.to_string())),
    }
    Ok(())
}

/// Checks the numeric invariants of every settings group.
pub fn validate_settings(s: &RunSettings) -> Result<(), ConfigError> {
    let check = |ok: bool, key: &str, msg: &str| if ok { Ok(()) } else { Err(ConfigError::invalid(key, msg)) };
    check(s.mppi.samples >= 1, "mppi.samples", "must be at least 1")?;
    check(s.mppi.horizon >= 1, "mppi.horizon", "must be at least 1")?;
    check(s.mppi.lambda > 0.0, "mppi.lambda", "must be positive")?;
    check(s.cbf.alpha > 0.0 && s.cbf.alpha < 1.0, "cbf.alpha", "must lie in (0, 1)")?;
    check(s.cbf.c >= 0.0, "cbf.c", "must be non-negative")?;
    for (k, q) in Q_KEYS.iter().zip(s.cost.q) {
        check(q >= 0.0, k, "must be non-negative")?;
    }
    check(s.cost.c_obs >= 0.0, "cost.c_obs", "must be non-negative")?;
    check(s.cost.gamma >= 0.0, "cost.gamma", "must be non-negative")?;
    check(s.cost.terminal_scale >= 0.0, "cost.terminal_scale", "must be non-negative")?;
    check(
        s.shield.horizon >= 1 && s.shield.horizon < s.mppi.horizon,
        "shield.horizon",
        "must satisfy 1 <= shield.horizon < mppi.horizon",
    )?;
    check(s.shield.step > 0.0, "shield.step", "must be positive")?;
    check(s.shield.fd_eps > 0.0, "shield.fd_eps", "must be positive")?;
    check(s.disturbance.std.iter().all(|&v| v >= 0.0), "disturbance.std", "entries must be non-negative")?;
    check(s.episode.crash_margin_frac > 0.0, "episode.crash_margin_frac", "must be positive")?;
    check(s.episode.v_stop >= 0.0, "episode.v_stop", "must be non-negative")?;
    check(s.episode.t_stop > 0.0, "episode.t_stop", "must be positive")?;
    check(s.episode.timeout > 0.0, "episode.timeout", "must be positive")?;
    check(s.episode.initial_speed >= 0.0, "episode.initial_speed", "must be non-negative")?;
    Ok(())
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub track: PathBuf,
    /// `None` selects the built-in vehicle.
    pub vehicle: Option<PathBuf>,
    pub integrator: Integrator,
    pub kinds: Vec<ControllerKind>,
    pub seed_count: usize,
    pub seed_base: u64,
    pub workers: usize,
    pub label: Option<String>,
    pub base: RunSettings,
    /// Sweep axes sorted by key.
    pub axes: Vec<(String, Vec<String>)>,
    gamma_set: bool,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.into(), source: e })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, dir)
    }

    /// Parses config text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let map = parse_kv(text)?;
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) }
        };
        let track = resolve(map.require_str("track")?);
        let vehicle = map.get("vehicle").filter(|v| *v != "builtin").map(resolve);
        let integrator = match map.get("integrator") {
            Some(v) => v.parse().map_err(|e: String| ConfigError::invalid("integrator", e))?,
            None => Integrator::Euler,
        };
        let kinds = match map.get("controllers") {
            Some(v) => split_list(v)
                .into_iter()
                .map(|k| k.parse::<ControllerKind>().map_err(|e| ConfigError::invalid("controllers", e)))
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![ControllerKind::ShieldMppi],
        };
        if kinds.is_empty() {
            return Err(ConfigError::invalid("controllers", "at least one controller is required"));
        }
        let seed_count = map.usize_or("seeds.count", 1)?;
        if seed_count == 0 {
            return Err(ConfigError::invalid("seeds.count", "must be at least 1"));
        }
        let seed_base = match std::env::var(SEED_ENV) {
            Ok(v) => parse_u64(SEED_ENV, v.trim())?,
            Err(_) => map.get("seeds.base").map_or(Ok(0), |v| parse_u64("seeds.base", v))?,
        };
        let workers = map.usize_or("mppi.workers", 1)?.max(1);

        let mut base = RunSettings::default();
        let mut axes = Vec::new();
        for (key, value) in map.iter() {
            if TOP_KEYS.contains(&key) {
                continue;
            }
            if let Some(axis) = key.strip_prefix("sweep.") {
                if !SCALAR_KEYS.contains(&axis) {
                    return Err(ConfigError::UnknownKey(key.to_string()));
                }
                let values: Vec<String> = split_list(value).into_iter().map(String::from).collect();
                if values.is_empty() {
                    return Err(ConfigError::invalid(key, "sweep needs at least one value"));
                }
                axes.push((axis.to_string(), values));
            } else if SCALAR_KEYS.contains(&key) || LIST_SETTING_KEYS.contains(&key) {
                apply_setting(&mut base, key, value)?;
            } else {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
        }
        let gamma_set = map.get("cost.gamma").is_some();
        if !gamma_set {
            base.cost.gamma = base.mppi.lambda;
        }
        let config = Self { track, vehicle, integrator, kinds, seed_count, seed_base, workers, label: map.get("label").map(String::from), base, axes, gamma_set };
        for point in config.grid()? {
            validate_settings(&point.settings)?;
        }
        Ok(config)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.seed_count as u64).map(|i| self.seed_base.wrapping_add(i)).collect()
    }

    /// Cartesian product of the sweep axes, first axis slowest.
    pub fn grid(&self) -> Result<Vec<GridPoint>, ConfigError> {
        let mut points = vec![GridPoint { labels: Vec::new(), settings: self.base.clone() }];
        for (axis, values) in &self.axes {
            let mut next = Vec::with_capacity(points.len() * values.len());
            for p in &points {
                for v in values {
                    let mut settings = p.settings.clone();
                    apply_setting(&mut settings, axis, v)?;
                    if axis == "mppi.lambda" && !self.gamma_set && !self.axes.iter().any(|(a, _)| a == "cost.gamma") {
                        settings.cost.gamma = settings.mppi.lambda;
                    }
                    let mut labels = p.labels.clone();
                    labels.push((axis.clone(), v.clone()));
                    next.push(GridPoint { labels, settings });
                }
            }
            points = next;
        }
        Ok(points)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec, ConfigError> {
        Ok(SweepSpec {
            axes: self.axes.iter().map(|(a, _)| a.clone()).collect(),
            points: self.grid()?,
            kinds: self.kinds.clone(),
            seeds: self.seeds(),
            keep_logs: false,
        })
    }

    pub fn load_track(&self) -> Result<Track, ConfigError> {
        load_track_file(&self.track).map_err(|e| ConfigError::Track { path: self.track.clone(), source: e })
    }

    pub fn load_model(&self) -> Result<VehicleModel, ConfigError> {
        let params = match &self.vehicle {
            Some(path) => VehicleParams::load(path)?,
            None => VehicleParams::autorally_like(),
        };
        Ok(VehicleModel::new(params).with_integrator(self.integrator))
    }
}
