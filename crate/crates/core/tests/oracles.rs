use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shield_mppi::cost::{CbfParams, CostModel, CostParams};
use shield_mppi::dynamics::{Control, State, VehicleModel, VehicleParams};
use shield_mppi::mppi::{rollout_batch, update_controls, weights, Covariance2, Executor, NoiseBatch, RolloutContext};
use shield_mppi::track::{circle_waypoints, Track};

/// Straight-line evaluation of the rollout cost, written out term by term.
fn naive_cost(model: &VehicleModel, track: &Track, cost: &CostModel, x0: State, v: &[Control], eps: &[[f64; 2]]) -> f64 {
    let w = track.half_width();
    let p = &cost.params;
    let si = cost.sigma_inv;
    let mut prev = x0;
    let mut cur = x0;
    let mut total = 0.0;
    let state_cost = |x: &State, scale: f64| {
        let a = x.to_array();
        let mut q = 0.0;
        for i in 0..8 {
            let target = if i == 0 { p.v_g } else { 0.0 };
            q += scale * p.q[i] * (a[i] - target) * (a[i] - target);
        }
        if x.e_y.abs() > w {
            q += p.c_obs;
        }
        q
    };
    let penalty = |cur: &State, prev: &State| {
        let hc = w * w - cur.e_y * cur.e_y;
        let hp = w * w - prev.e_y * prev.e_y;
        let viol = cost.cbf.alpha * hp - hc;
        if cost.cbf_enabled && viol > 0.0 {
            cost.cbf.c * viol
        } else {
            0.0
        }
    };
    for (vk, e) in v.iter().zip(eps) {
        let u = model.clamp(Control::new(vk.delta + e[0], vk.throttle + e[1]));
        total += state_cost(&cur, 1.0);
        total += p.gamma
            * (vk.delta * (si[0][0] * u.delta + si[0][1] * u.throttle)
                + vk.throttle * (si[1][0] * u.delta + si[1][1] * u.throttle));
        total += penalty(&cur, &prev);
        let next = model.step(track, &cur, u).unwrap();
        prev = cur;
        cur = next;
    }
    total + state_cost(&cur, p.terminal_scale) + penalty(&cur, &prev)
}

fn fixture() -> (VehicleModel, Track) {
    (
        VehicleModel::new(VehicleParams::autorally_like()),
        Track::from_waypoints(circle_waypoints(8.0, 200), 0.6).unwrap(),
    )
}

#[test]
fn rollout_costs_match_naive_evaluation() {
    let (model, track) = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..40 {
        let horizon = [1, 2, 3, 7][case % 4];
        let samples = 4;
        let sigma = Covariance2::new([[0.05, 0.01], [0.01, 0.3]]).unwrap();
        let cost = CostModel {
            params: CostParams { q: [1.0, 0.5, 0.2, 0.0, 0.0, 2.0, 10.0, 0.1], terminal_scale: 3.0, ..CostParams::default() },
            cbf: CbfParams { alpha: rng.random_range(0.05..0.95), c: 500.0 },
            cbf_enabled: case % 2 == 0,
            sigma_inv: sigma.inverse(),
        };
        let x0 = State {
            v_x: rng.random_range(1.0..6.0),
            v_y: rng.random_range(-0.5..0.5),
            e_y: rng.random_range(-0.55..0.55),
            e_psi: rng.random_range(-0.3..0.3),
            ..State::cruising(0.0, model.params.wheel_radius)
        };
        let v: Vec<Control> =
            (0..horizon).map(|_| Control::new(rng.random_range(-0.4..0.4), rng.random_range(-1.2..1.2))).collect();
        let noises = NoiseBatch::from_fn(samples, horizon, |_, _| [rng.random_range(-0.3..0.3), rng.random_range(-0.8..0.8)]);
        let ctx = RolloutContext { model: &model, cost: &cost, track: &track };
        let batch = rollout_batch(&ctx, &x0, &v, noises.clone(), &Executor::Sequential, false).unwrap();
        for m in 0..samples {
            let expected = naive_cost(&model, &track, &cost, x0, &v, noises.rollout(m));
            assert_relative_eq!(batch.costs[m], expected, max_relative = 1e-12);
        }
    }
}

#[test]
fn sharp_softmin_selects_argmin_rollout() {
    let (model, _) = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let (samples, horizon) = (8, 5);
        let noises = NoiseBatch::from_fn(samples, horizon, |_, _| [rng.random_range(-0.05..0.05), rng.random_range(-0.2..0.2)]);
        let costs: Vec<f64> = (0..samples).map(|_| rng.random_range(0.0..100.0)).collect();
        let best = (0..samples).min_by(|&a, &b| costs[a].total_cmp(&costs[b])).unwrap();
        let v = vec![Control::new(0.1, 0.2); horizon];
        let out = update_controls(&model, &v, &noises, &weights(&costs, 1e-6).unwrap()).unwrap();
        for k in 0..horizon {
            let e = noises.get(best, k);
            assert_relative_eq!(out[k].delta, 0.1 + e[0], epsilon = 1e-12);
            assert_relative_eq!(out[k].throttle, 0.2 + e[1], epsilon = 1e-12);
        }
    }
}
