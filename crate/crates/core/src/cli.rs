//! Command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::harness::{bench_control_step, run_sweep, ControllerKind, StepRecord, SweepResults};
use crate::mppi::Executor;

pub const DATA_ENV: &str = "SHIELD_MPPI_DATA";

pub const STUDIES: [&str; 4] = ["fig3", "fig4", "fig5", "table1"];

#[derive(Debug, Parser)]
#[command(name = "shield-mppi", version, about = "Shield-MPPI racing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sweep described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write one per-step CSV per episode.
        #[arg(long)]
        log_trajectories: bool,
        /// Episodes run in parallel on this many threads.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-run one of the shipped studies: fig3, fig4, fig5 or table1.
    Repro {
        study: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Measure control-step latency for each configured controller.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Thread count for the multi-threaded measurement.
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown study `{0}` (expected fig3, fig4, fig5 or table1)")]
    UnknownStudy(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(e) if e.is_io() => 3,
            Self::Config(_) | Self::UnknownStudy(_) => 2,
            Self::Io { .. } => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.to_path_buf(), source: e.into() }
}

/// Directory holding the shipped tracks, vehicles and study configs.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("data"))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_results(results: &SweepResults, out: &Path) -> Result<(), CliError> {
    let episodes = out.join("episodes.csv");
    results.write_episodes(create(&episodes)?).map_err(csv_err(&episodes))?;
    let aggregates = out.join("aggregates.csv");
    results.write_aggregates(create(&aggregates)?).map_err(csv_err(&aggregates))?;
    Ok(())
}

fn write_trajectory(path: &Path, records: &[StepRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let header = ["t", "s", "e_y", "e_psi", "v_x", "v_y", "psi_dot", "delta", "T", "h", "dcbf_residual", "repaired"];
    w.write_record(header).map_err(csv_err(path))?;
    for r in records {
        let x = &r.state;
        let row = [r.t, x.s, x.e_y, x.e_psi, x.v_x, x.v_y, x.psi_dot, r.control.delta, r.control.throttle, r.h, r.dcbf_residual]
            .map(|v| format!("{v:.6}"));
        w.write_record(row.iter().map(String::as_str).chain([if r.repaired { "1" } else { "0" }]))
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn print_summary(results: &SweepResults) {
    let axes = &results.spec.axes;
    let mut head = format!("{:<12}", "kind");
    for a in axes {
        head += &format!(" {a:>14}");
    }
    println!("{head} {:>9} {:>11} {:>10} {:>9} {:>9}", "episodes", "crash_rate", "coll/lap", "coll_rate", "avg_speed");
    for a in &results.aggregates {
        let mut line = format!("{:<12}", a.kind.name());
        for (_, v) in &results.spec.points[a.point].labels {
            line += &format!(" {v:>14}");
        }
        println!(
            "{line} {:>9} {:>11.3} {:>10.3} {:>9.3} {:>9.3}",
            a.episodes, a.crash_rate.0, a.collisions_mean.0, a.collision_rate.0, a.avg_speed_mean
        );
    }
}

fn execute(config: &ExperimentConfig, out: &Path, workers: usize, logs: bool) -> Result<SweepResults, CliError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let track = config.load_track()?;
    let model = config.load_model()?;
    let mut spec = config.sweep_spec()?;
    spec.keep_logs = logs;
    let results = run_sweep(&spec, &track, &model, &Executor::with_workers(workers));
    write_results(&results, out)?;
    if logs {
        for r in &results.episodes {
            if let Some(log) = &r.metrics.log {
                let path = out.join(format!("trajectory_{}_p{}_s{}.csv", r.kind, r.point, r.seed));
                write_trajectory(&path, log)?;
            }
        }
    }
    print_summary(&results);
    Ok(results)
}

pub fn cmd_run(config: &Path, out: &Path, log_trajectories: bool, workers: Option<usize>) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config)?;
    let workers = workers.unwrap_or(config.workers);
    execute(&config, out, workers, log_trajectories).map(|_| ())
}

/// Index of the grid point whose labels match `values` on the named axes.
fn find_point(results: &SweepResults, values: &[(&str, &str)]) -> Option<usize> {
    results.spec.points.iter().position(|p| {
        values.iter().all(|(axis, v)| p.labels.iter().any(|(a, pv)| a == axis && pv == v))
    })
}

fn write_fig5(results: &SweepResults, out: &Path) -> Result<(), CliError> {
    let axis_values = |name: &str| {
        let mut seen: Vec<String> = Vec::new();
        for p in &results.spec.points {
            for (a, v) in &p.labels {
                if a == name && !seen.contains(v) {
                    seen.push(v.clone());
                }
            }
        }
        seen
    };
    let reduction_path = out.join("fig5_reduction.csv");
    let absolute_path = out.join("fig5_absolute.csv");
    let mut red = create(&reduction_path)?;
    let mut abs = create(&absolute_path)?;
    let stamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    writeln!(red, "# generated unix_time={stamp}").map_err(io_err(&reduction_path))?;
    writeln!(abs, "# generated unix_time={stamp}").map_err(io_err(&absolute_path))?;
    let mut red = csv::Writer::from_writer(red);
    let mut abs = csv::Writer::from_writer(abs);
    red.write_record(["samples", "horizon", "episodes", "reduction"]).map_err(csv_err(&reduction_path))?;
    abs.write_record(["samples", "horizon", "kind", "episodes", "collision_rate", "collision_rate_ci95", "crash_rate"])
        .map_err(csv_err(&absolute_path))?;
    for m in axis_values("mppi.samples") {
        for k in axis_values("mppi.horizon") {
            let Some(point) = find_point(results, &[("mppi.samples", &m), ("mppi.horizon", &k)]) else { continue };
            let cbf = results.aggregate(ControllerKind::CbfMppi, point);
            let shield = results.aggregate(ControllerKind::ShieldMppi, point);
            if let (Some(c), Some(s)) = (cbf, shield) {
                let reduction = c.collision_rate.0 - s.collision_rate.0;
                red.write_record([m.clone(), k.clone(), c.episodes.to_string(), format!("{reduction:.6}")])
                    .map_err(csv_err(&reduction_path))?;
            }
            for a in [cbf, shield].into_iter().flatten() {
                abs.write_record([
                    m.clone(),
                    k.clone(),
                    a.kind.to_string(),
                    a.episodes.to_string(),
                    format!("{:.6}", a.collision_rate.0),
                    format!("{:.6}", a.collision_rate.1),
                    format!("{:.6}", a.crash_rate.0),
                ])
                .map_err(csv_err(&absolute_path))?;
            }
        }
    }
    red.flush().map_err(io_err(&reduction_path))?;
    abs.flush().map_err(io_err(&absolute_path))
}

fn write_table1(results: &SweepResults, out: &Path) -> Result<(), CliError> {
    let path = out.join("table1.csv");
    let mut f = create(&path)?;
    let samples = results.spec.points.first().map_or(0, |p| p.settings.mppi.samples);
    writeln!(f, "# desk-scale: M = {samples} rollouts; ordering-only comparison, not absolute values")
        .map_err(io_err(&path))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["kind", "episodes", "crash_rate", "crash_rate_ci95", "collisions_per_lap", "collisions_ci95", "avg_speed"])
        .map_err(csv_err(&path))?;
    for a in &results.aggregates {
        w.write_record([
            a.kind.to_string(),
            a.episodes.to_string(),
            format!("{:.6}", a.crash_rate.0),
            format!("{:.6}", a.crash_rate.1),
            format!("{:.6}", a.collisions_mean.0),
            format!("{:.6}", a.collisions_mean.1),
            format!("{:.6}", a.avg_speed_mean),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

/// Path of the shipped config for `study`.
pub fn study_config(study: &str) -> Result<PathBuf, CliError> {
    if !STUDIES.contains(&study) {
        return Err(CliError::UnknownStudy(study.to_string()));
    }
    Ok(data_dir().join("configs").join(format!("{study}.cfg")))
}

pub fn cmd_repro(study: &str, out: &Path, workers: Option<usize>) -> Result<SweepResults, CliError> {
    let config = ExperimentConfig::load(study_config(study)?)?;
    let results = execute(&config, out, workers.unwrap_or_else(default_workers), false)?;
    match study {
        "fig5" => write_fig5(&results, out)?,
        "table1" => write_table1(&results, out)?,
        _ => {}
    }
    Ok(results)
}

pub fn cmd_bench(config: &Path, steps: usize, workers: Option<usize>) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config)?;
    let track = config.load_track()?;
    let model = config.load_model()?;
    let settings = &config.base;
    let multi = workers.unwrap_or_else(default_workers);
    println!(
        "{:<12} {:>7} {:>7} {:>10} {:>10} {:>10}",
        "kind", "workers", "steps", "p50_ms", "p95_ms", "max_ms"
    );
    for &kind in &config.kinds {
        let mut counts = vec![1];
        if multi > 1 {
            counts.push(multi);
        }
        for w in counts {
            let r = bench_control_step(&track, &model, settings, kind, steps, w);
            println!(
                "{:<12} {:>7} {:>7} {:>10.4} {:>10.4} {:>10.4}",
                kind.name(),
                r.workers,
                r.steps,
                r.p50_ms,
                r.p95_ms,
                r.max_ms
            );
        }
    }
    Ok(())
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, log_trajectories, workers } => cmd_run(&config, &out, log_trajectories, workers),
        Command::Repro { study, out, workers } => cmd_repro(&study, &out, workers).map(|_| ()),
        Command::Bench { config, steps, workers } => cmd_bench(&config, steps, workers),
    }
}

pub fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
