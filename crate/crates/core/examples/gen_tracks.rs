//! Regenerates the shipped track files under `data/tracks`.
//!
//! cargo run -p shield-mppi --example gen_tracks

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use shield_mppi::track::{circle_waypoints, stadium_waypoints, Track};

/// Closed polar curve resampled at constant arc-length spacing.
fn polar_course(radius: impl Fn(f64) -> f64, spacing: f64) -> Vec<[f64; 2]> {
    let dense: Vec<[f64; 2]> = (0..20_000)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / 20_000.0;
            let r = radius(th);
            [r * th.cos(), r * th.sin()]
        })
        .collect();
    let mut cum = vec![0.0];
    for i in 0..dense.len() {
        let (a, b) = (dense[i], dense[(i + 1) % dense.len()]);
        cum.push(cum[i] + (b[0] - a[0]).hypot(b[1] - a[1]));
    }
    let total = *cum.last().unwrap();
    let n = (total / spacing).round() as usize;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let s = total * i as f64 / n as f64;
        while cum[j + 1] < s {
            j += 1;
        }
        let t = (s - cum[j]) / (cum[j + 1] - cum[j]);
        let (a, b) = (dense[j], dense[(j + 1) % dense.len()]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

fn save(dir: &Path, name: &str, track: &Track) {
    let path = dir.join(name);
    track.write(BufWriter::new(File::create(&path).expect("create track file"))).expect("write track");
    let kmax = track.curvatures().iter().fold(0.0f64, |m, k| m.max(k.abs()));
    println!("{name}: length {:.2} m, {} points, max |curvature| {kmax:.3}", track.total_length(), track.waypoints().len());
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/tracks");
    std::fs::create_dir_all(&dir).expect("track dir");
    save(&dir, "circle.csv", &Track::from_waypoints(circle_waypoints(10.0, 128), 1.0).unwrap());
    save(&dir, "stadium.csv", &Track::from_waypoints(stadium_waypoints(20.0, 6.0, 0.5), 1.0).unwrap());
    let course = polar_course(|th| 7.0 * (1.0 + 0.12 * (3.0 * th).cos() + 0.06 * (2.0 * th + 0.6).sin()), 0.5);
    save(&dir, "course.csv", &Track::from_waypoints(course, 1.0).unwrap());
}
