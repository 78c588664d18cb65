use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_shield-mppi"));
    cmd.env_remove("SHIELD_MPPI_SEED");
    cmd
}

fn course() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/tracks/course.csv")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, format!("track = {}\n{body}", course().display())).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn body(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with('#'), "{} lacks the comment header", path.display());
    text.lines().skip(1).collect::<Vec<_>>().join("\n")
}

const SHORT: &str = "mppi.samples = 8\nmppi.horizon = 10\nepisode.timeout = 1\nepisode.initial_speed = 3\n";

#[test]
fn minimal_config_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let episodes = body(&out.join("episodes.csv"));
    let mut lines = episodes.lines();
    assert_eq!(
        lines.next().unwrap(),
        "kind,seed,crashed,collisions,lap_time,avg_speed,max_speed,shield_interventions,completed"
    );
    assert_eq!(lines.count(), 1);
    assert_eq!(body(&out.join("aggregates.csv")).lines().count(), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("shield-mppi"));
}

#[test]
fn unknown_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mppi.temperature = 3\n");
    let o = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mppi.temperature"));
}

#[test]
fn invalid_value_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    for (body, key) in [("cbf.alpha = 1.5\n", "cbf.alpha"), ("mppi.horizon = 8\n", "shield.horizon")] {
        let cfg = write_config(dir.path(), body);
        let o = run(&cfg, &dir.path().join("out"), &[]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains(key));
    }
}

#[test]
fn missing_files_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&dir.path().join("absent.cfg"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "track = nowhere.csv\n").unwrap();
    let o = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn unknown_study_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().args(["repro", "fig9", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fig9"));
}

#[test]
fn sweep_rows_are_grid_times_seeds_times_kinds_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "{SHORT}controllers = mppi, shield-mppi\nseeds.count = 2\ndisturbance.enabled = true\n\
             sweep.cost.q_ey = 0, 10, 20\nsweep.cost.v_g = 5, 7\n"
        ),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &["--workers", "3"]).status.success());
    let episodes = body(&a.join("episodes.csv"));
    assert!(episodes.starts_with("kind,cost.q_ey,cost.v_g,seed,"));
    assert_eq!(episodes.lines().count(), 1 + 6 * 2 * 2);
    assert_eq!(body(&a.join("aggregates.csv")).lines().count(), 1 + 6 * 2);
    assert_eq!(episodes, body(&b.join("episodes.csv")));
    assert_eq!(body(&a.join("aggregates.csv")), body(&b.join("aggregates.csv")));
}

#[test]
fn seed_env_overrides_base_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SHORT}seeds.count = 2\nseeds.base = 5\n"));
    let out = dir.path().join("out");
    let o = bin()
        .env("SHIELD_MPPI_SEED", "40")
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    let seeds: Vec<String> =
        body(&out.join("episodes.csv")).lines().skip(1).map(|l| l.split(',').nth(1).unwrap().to_string()).collect();
    assert_eq!(seeds, ["40", "41"]);
}

#[test]
fn trajectory_logs_have_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SHORT}controllers = mppi, shield-mppi\n"));
    let out = dir.path().join("out");
    assert!(run(&cfg, &out, &["--log-trajectories"]).status.success());
    let text = std::fs::read_to_string(out.join("trajectory_shield-mppi_p0_s0.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,s,e_y,e_psi,v_x,v_y,psi_dot,delta,T,h,dcbf_residual,repaired");
    assert_eq!(lines.count(), 50);
    assert!(out.join("trajectory_mppi_p0_s0.csv").exists());
}

#[test]
fn bench_reports_positive_latencies_even_for_tiny_problems() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "controllers = shield-mppi\nmppi.samples = 1\nmppi.horizon = 2\nshield.horizon = 1\n");
    let o = bin().args(["bench", "--steps", "20", "--workers", "2", "--config"]).arg(&cfg).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let rows: Vec<&str> = stdout.lines().filter(|l| l.starts_with("shield-mppi")).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let p50: f64 = row.split_whitespace().nth(3).unwrap().parse().unwrap();
        assert!(p50 > 0.0);
    }
    assert!(stdout.lines().next().unwrap().contains("p50_ms"));
}
