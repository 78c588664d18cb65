//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns plain numbers or a JSON string so the page needs no
//! generated type glue beyond `wasm-bindgen`'s own.

use serde_json::json;
use wasm_bindgen::prelude::*;

use shield_mppi::cost::CbfParams;
use shield_mppi::dynamics::{VehicleModel, VehicleParams};
use shield_mppi::harness::{run_episode, ControllerKind, RunSettings};
use shield_mppi::mppi::{normalize, weights, Covariance2};
use shield_mppi::shield::ShieldConfig;
use shield_mppi::surrogate::Integrator1d;
use shield_mppi::track::{load_track, Track};

const COURSE: &str = include_str!("../../core/data/tracks/course.csv");

fn course() -> Track {
    load_track(COURSE.as_bytes()).expect("bundled track parses")
}

fn err(msg: impl ToString) -> JsValue {
    JsValue::from_str(&msg.to_string())
}

/// Settings of the shipped studies, with the given knobs.
fn demo_settings(samples: usize, horizon: usize, q_ey: f64, disturbance: bool) -> RunSettings {
    let mut s = RunSettings::default();
    s.mppi.samples = samples.max(1);
    s.mppi.horizon = horizon.max(1);
    s.mppi.lambda = 10.0;
    s.mppi.sigma = Covariance2::diagonal(0.04, 0.25).expect("positive variances");
    s.cost.gamma = 0.5;
    s.cost.v_g = 7.0;
    s.cost.q[6] = q_ey;
    s.cbf = CbfParams { alpha: 0.9, c: 3000.0 };
    s.disturbance.enabled = disturbance;
    s.episode.initial_speed = 4.0;
    s.episode.timeout = 20.0;
    s
}

/// Track centerline and both edges as `[[x, y], ...]`.
#[wasm_bindgen]
pub fn track_geometry() -> String {
    let track = course();
    let (left, right) = track.boundaries();
    let center: Vec<[f64; 2]> = track.cum_arclength().iter().map(|&s| track.lift(s, 0.0)).collect();
    json!({ "center": center, "left": left, "right": right, "half_width": track.half_width() }).to_string()
}

/// Runs one lap attempt and returns the metrics and the lifted path.
#[wasm_bindgen]
pub fn simulate(
    kind: &str,
    samples: usize,
    horizon: usize,
    q_ey: f64,
    seed: u32,
    disturbance: bool,
) -> Result<String, JsValue> {
    let kind: ControllerKind = kind.parse().map_err(err)?;
    let track = course();
    let model = VehicleModel::new(VehicleParams::autorally_like());
    let settings = demo_settings(samples, horizon, q_ey, disturbance);
    let m = run_episode(kind, &track, &model, &settings, u64::from(seed), true);
    let log = m.log.as_deref().unwrap_or_default();
    let path: Vec<[f64; 2]> = log.iter().map(|r| track.lift(r.state.s, r.state.e_y)).collect();
    let speed: Vec<f64> = log.iter().map(|r| r.state.v_x).collect();
    let repaired: Vec<bool> = log.iter().map(|r| r.repaired).collect();
    Ok(json!({
        "kind": kind.name(),
        "crashed": m.crashed,
        "collisions": m.collisions,
        "completed": m.completed,
        "lap_time": m.lap_time,
        "avg_speed": m.avg_speed,
        "max_speed": m.max_speed,
        "interventions": m.shield_interventions,
        "path": path,
        "speed": speed,
        "repaired": repaired,
    })
    .to_string())
}

/// A 1-D integrator in a lane of half-width 1 pushed toward the wall at
/// `push` times the input bound, with and without the repair layer.
#[wasm_bindgen]
pub fn barrier_demo(alpha: f64, push: f64, steps: usize) -> Result<String, JsValue> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(err("alpha must lie in [0, 1)"));
    }
    let sys = Integrator1d::corridor(0.1, 5.0, 1.0);
    let cbf = CbfParams { alpha, c: 1.0 };
    let config = ShieldConfig { horizon: 1, step: 2.0, ..ShieldConfig::default() };
    let proposals = vec![push * sys.u_max; steps];
    let shielded = sys.shielded_run(&config, &cbf, 0.2, &proposals);
    let open: Vec<f64> = std::iter::successors(Some(0.2), |&x| Some(sys.step(x, push * sys.u_max))).take(steps + 1).collect();
    let h = |xs: &[f64]| xs.iter().map(|&x| sys.h(x)).collect::<Vec<_>>();
    Ok(json!({
        "dt": sys.dt,
        "shielded": { "x": shielded, "h": h(&shielded) },
        "open": { "x": open, "h": h(&open) },
    })
    .to_string())
}

/// Normalized importance weights of `costs` at temperature `lambda`.
#[wasm_bindgen]
pub fn softmin_weights(costs: Vec<f64>, lambda: f64) -> Result<Vec<f64>, JsValue> {
    if !(lambda > 0.0) {
        return Err(err("lambda must be positive"));
    }
    normalize(&weights(&costs, lambda).map_err(err)?).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn geometry_has_matching_edges() {
        let g: Value = serde_json::from_str(&track_geometry()).unwrap();
        let n = g["center"].as_array().unwrap().len();
        assert!(n > 10);
        assert_eq!(g["left"].as_array().unwrap().len(), n);
    }

    #[test]
    fn simulate_returns_a_path() {
        let out: Value = serde_json::from_str(&simulate("shield-mppi", 10, 10, 2.0, 1, false).unwrap()).unwrap();
        let path = out["path"].as_array().unwrap();
        assert!(!path.is_empty());
        assert_eq!(path.len(), out["speed"].as_array().unwrap().len());
    }

    #[test]
    fn barrier_demo_keeps_the_shielded_run_inside() {
        let out: Value = serde_json::from_str(&barrier_demo(0.9, 2.0, 60).unwrap()).unwrap();
        let h = |k: &str| -> Vec<f64> {
            out[k]["h"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
        };
        assert!(h("shielded").iter().all(|&v| v >= 0.0));
        assert!(h("open").iter().any(|&v| v < 0.0));
    }

    #[test]
    fn softmin_weights_sum_to_one() {
        let w = softmin_weights(vec![3.0, 1.0, 2.0], 0.5).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[1] > w[2] && w[2] > w[0]);
    }
}
