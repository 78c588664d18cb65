use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use super::{run_episode, ControllerKind, EpisodeMetrics, RunSettings};
use crate::dynamics::VehicleModel;
use crate::mppi::Executor;
use crate::track::Track;

/// One cell of a sweep: axis values and the settings they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    /// `(axis, value)` pairs in axis order.
    pub labels: Vec<(String, String)>,
    pub settings: RunSettings,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axes: Vec<String>,
    pub points: Vec<GridPoint>,
    pub kinds: Vec<ControllerKind>,
    /// Seeds shared by every kind and grid point.
    pub seeds: Vec<u64>,
    /// Keep per-step logs in the episode metrics.
    pub keep_logs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub kind: ControllerKind,
    pub point: usize,
    pub seed: u64,
    pub metrics: EpisodeMetrics,
}

/// Mean and 95% half-width (normal approximation).
fn mean_ci(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub kind: ControllerKind,
    pub point: usize,
    pub episodes: usize,
    pub crash_rate: (f64, f64),
    pub collisions_mean: (f64, f64),
    /// Fraction of episodes that touched the boundary (scrape or crash).
    pub collision_rate: (f64, f64),
    pub lap_time_mean: f64,
    pub avg_speed_mean: f64,
    pub max_speed_mean: f64,
    pub interventions_mean: f64,
    pub completion_rate: f64,
}

impl AggregateRow {
    fn from_rows(kind: ControllerKind, point: usize, rows: &[&EpisodeRow]) -> Self {
        let m = || rows.iter().map(|r| &r.metrics);
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        Self {
            kind,
            point,
            episodes: rows.len(),
            crash_rate: mean_ci(m().map(|e| flag(e.crashed))),
            collisions_mean: mean_ci(m().map(|e| e.collisions as f64)),
            collision_rate: mean_ci(m().map(|e| flag(e.collided()))),
            lap_time_mean: mean_ci(m().map(|e| e.lap_time)).0,
            avg_speed_mean: mean_ci(m().map(|e| e.avg_speed)).0,
            max_speed_mean: mean_ci(m().map(|e| e.max_speed)).0,
            interventions_mean: mean_ci(m().map(|e| e.shield_interventions as f64)).0,
            completion_rate: mean_ci(m().map(|e| flag(e.completed))).0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResults {
    pub spec: SweepSpec,
    pub episodes: Vec<EpisodeRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// Runs every `(point, kind, seed)` episode. Episodes are distributed over
/// `executor`; the output order and values do not depend on it.
pub fn run_sweep(spec: &SweepSpec, track: &Track, model: &VehicleModel, executor: &Executor) -> SweepResults {
    let per_point = spec.kinds.len() * spec.seeds.len();
    let jobs = spec.points.len() * per_point;
    let episodes = executor.map(jobs, |j| {
        let point = j / per_point;
        let kind = spec.kinds[(j % per_point) / spec.seeds.len()];
        let seed = spec.seeds[j % spec.seeds.len()];
        let metrics = run_episode(kind, track, model, &spec.points[point].settings, seed, spec.keep_logs);
        EpisodeRow { kind, point, seed, metrics }
    });
    let mut aggregates = Vec::new();
    for point in 0..spec.points.len() {
        for &kind in &spec.kinds {
            let rows: Vec<&EpisodeRow> = episodes.iter().filter(|r| r.point == point && r.kind == kind).collect();
            aggregates.push(AggregateRow::from_rows(kind, point, &rows));
        }
    }
    SweepResults { spec: spec.clone(), episodes, aggregates }
}

fn timestamp_line<W: Write>(out: &mut W) -> std::io::Result<()> {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    writeln!(out, "# generated unix_time={secs}")
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

impl SweepResults {
    pub fn aggregate(&self, kind: ControllerKind, point: usize) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.kind == kind && a.point == point)
    }

    fn labels(&self, point: usize) -> impl Iterator<Item = String> + '_ {
        self.spec.points[point].labels.iter().map(|(_, v)| v.clone())
    }

    pub fn write_episodes<W: Write>(&self, mut out: W) -> csv::Result<()> {
        timestamp_line(&mut out)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["kind".to_string()];
        header.extend(self.spec.axes.iter().cloned());
        header.extend(
            ["seed", "crashed", "collisions", "lap_time", "avg_speed", "max_speed", "shield_interventions", "completed"]
                .map(String::from),
        );
        w.write_record(&header)?;
        for r in &self.episodes {
            let e = &r.metrics;
            let mut rec = vec![r.kind.to_string()];
            rec.extend(self.labels(r.point));
            rec.extend([
                r.seed.to_string(),
                u8::from(e.crashed).to_string(),
                e.collisions.to_string(),
                fmt(e.lap_time),
                fmt(e.avg_speed),
                fmt(e.max_speed),
                e.shield_interventions.to_string(),
                u8::from(e.completed).to_string(),
            ]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregates<W: Write>(&self, mut out: W) -> csv::Result<()> {
        timestamp_line(&mut out)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["kind".to_string()];
        header.extend(self.spec.axes.iter().cloned());
        header.extend(
            [
                "episodes",
                "crash_rate",
                "crash_rate_ci95",
                "collisions_mean",
                "collisions_ci95",
                "collision_rate",
                "collision_rate_ci95",
                "lap_time_mean",
                "avg_speed_mean",
                "max_speed_mean",
                "interventions_mean",
                "completion_rate",
            ]
            .map(String::from),
        );
        w.write_record(&header)?;
        for a in &self.aggregates {
            let mut rec = vec![a.kind.to_string()];
            rec.extend(self.labels(a.point));
            rec.extend([
                a.episodes.to_string(),
                fmt(a.crash_rate.0),
                fmt(a.crash_rate.1),
                fmt(a.collisions_mean.0),
                fmt(a.collisions_mean.1),
                fmt(a.collision_rate.0),
                fmt(a.collision_rate.1),
                fmt(a.lap_time_mean),
                fmt(a.avg_speed_mean),
                fmt(a.max_speed_mean),
                fmt(a.interventions_mean),
                fmt(a.completion_rate),
            ]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
