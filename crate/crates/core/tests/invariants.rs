use proptest::prelude::*;
use shield_mppi::cost::{CbfParams, CostModel, CostParams};
use shield_mppi::dynamics::{AugmentedState, Control, State, VehicleModel, VehicleParams};
use shield_mppi::mppi::{rollout_batch, sample_noise, Covariance2, Executor, MppiConfig, NoiseBatch, RolloutContext};
use shield_mppi::shield::{repair, RepairMethod, ShieldConfig, VehicleBarrier};
use shield_mppi::track::{circle_waypoints, Track};

fn model() -> VehicleModel {
    VehicleModel::new(VehicleParams::autorally_like())
}

fn track() -> Track {
    Track::from_waypoints(circle_waypoints(8.0, 160), 0.8).unwrap()
}

fn state() -> impl Strategy<Value = State> {
    (0.5f64..8.0, -0.5f64..0.5, -0.5f64..0.5, -0.4f64..0.4, -0.75f64..0.75, 0.0f64..50.0).prop_map(
        |(v_x, v_y, psi_dot, e_psi, e_y, s)| State {
            v_y,
            psi_dot,
            e_psi,
            e_y,
            s,
            ..State::cruising(v_x, VehicleParams::autorally_like().wheel_radius)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clamped_controls_respect_bounds(delta in -10.0f64..10.0, throttle in -10.0f64..10.0) {
        let m = model();
        let u = m.clamp(Control::new(delta, throttle));
        prop_assert!(u.delta.abs() <= m.params.delta_max);
        prop_assert!(u.throttle >= m.params.throttle_min && u.throttle <= m.params.throttle_max);
        prop_assert_eq!(m.clamp(u), u);
    }

    #[test]
    fn augmented_step_keeps_the_preimage(x in state(), delta in -0.35f64..0.35, throttle in -1.0f64..1.0) {
        let (m, t) = (model(), track());
        let z0 = AugmentedState::initial(x);
        prop_assert_eq!(z0.previous, z0.current);
        let u = Control::new(delta, throttle);
        let z1 = m.step_augmented(&t, &z0, u).unwrap();
        prop_assert_eq!(z1.previous, x);
        prop_assert_eq!(z1.current, m.step(&t, &x, u).unwrap());
        prop_assert!(z1.current.is_finite());
    }

    #[test]
    fn rollout_costs_are_finite_or_sentinel(
        x in state(),
        seed in 0u64..1000,
        samples in 1usize..16,
        horizon in 1usize..20,
    ) {
        let (m, t) = (model(), track());
        let config = MppiConfig {
            samples,
            horizon,
            seed,
            sigma: Covariance2::diagonal(0.5, 4.0).unwrap(),
            ..MppiConfig::default()
        };
        let cost = CostModel {
            params: CostParams::default(),
            cbf: CbfParams::default(),
            cbf_enabled: true,
            sigma_inv: config.sigma.inverse(),
        };
        let ctx = RolloutContext { model: &m, cost: &cost, track: &t };
        let v = vec![Control::new(0.0, 0.3); horizon];
        let batch = rollout_batch(&ctx, &x, &v, sample_noise(&config, 0), &Executor::Sequential, true).unwrap();
        prop_assert_eq!(batch.costs.len(), samples);
        prop_assert_eq!(batch.noises.samples(), samples);
        prop_assert_eq!(batch.noises.horizon(), horizon);
        for c in &batch.costs {
            prop_assert!(c.is_finite() || *c == f64::INFINITY);
        }
        for traj in batch.trajectories.as_ref().unwrap() {
            prop_assert!(traj.len() <= horizon + 1);
        }
    }

    #[test]
    fn noise_depends_only_on_seed_and_iteration(seed in 0u64..1000, iteration in 0u64..1000) {
        let config = MppiConfig { samples: 5, horizon: 7, seed, ..MppiConfig::default() };
        prop_assert_eq!(sample_noise(&config, iteration), sample_noise(&config, iteration));
        let more = MppiConfig { samples: 9, ..config };
        let wide = sample_noise(&more, iteration);
        let narrow = sample_noise(&config, iteration);
        for m in 0..5 {
            prop_assert_eq!(narrow.rollout(m), wide.rollout(m));
        }
    }

    #[test]
    fn repair_never_lowers_the_objective(
        x in state(),
        steer in -0.35f64..0.35,
        bfgs in any::<bool>(),
    ) {
        let (m, t) = (model(), track());
        let sys = VehicleBarrier { model: &m, track: &t };
        let method = if bfgs { RepairMethod::QuasiNewton } else { RepairMethod::Gradient };
        let config = ShieldConfig { method, ..ShieldConfig::default() };
        let v = vec![Control::new(steer, 0.5); 12];
        let out = repair(&config, &sys, &CbfParams::default(), &x, &v);
        prop_assert!(out.history.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(out.history.iter().all(|h| *h <= 0.0));
        prop_assert_eq!(&out.controls[config.horizon + 1..], &v[config.horizon + 1..]);
        prop_assert!(out.iterations <= config.iterations);
    }
}

#[test]
fn noise_batch_indexing_is_row_major() {
    let b = NoiseBatch::from_fn(3, 4, |m, k| [m as f64, k as f64]);
    assert_eq!(b.get(2, 3), [2.0, 3.0]);
    assert_eq!(b.rollout(1)[2], [1.0, 2.0]);
}
