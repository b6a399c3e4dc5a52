use barrier_stab_core::benchmarks::{bump_barrier, bump_wclf, BumpParams};
use barrier_stab_core::simulator::INVARIANCE_TOL;
use barrier_stab_core::{
    bump_system, classify_outcome, simulate_batch, Branch, ControllerKind, ControllerSpec,
    EventKind, OnIncompatible, SimConfig, State, Trajectory,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn switching() -> ControllerSpec {
    let p = BumpParams::default();
    ControllerSpec::new(
        ControllerKind::Switching,
        bump_wclf(p.w_scale),
        bump_barrier(&p).unwrap(),
    )
    .unwrap()
    .with_on_incompatible(OnIncompatible::FallbackToU2)
}

fn sample(rng: &mut ChaCha8Rng, count: usize, keep: impl Fn(&State) -> bool) -> Vec<State> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = DVector::from_vec(vec![rng.gen_range(-4.5..4.5), rng.gen_range(-4.5..4.5)]);
        if keep(&x) {
            out.push(x);
        }
    }
    out
}

fn runs(spec: &ControllerSpec, x0s: &[State], cfg: &SimConfig) -> Vec<Trajectory> {
    simulate_batch(&bump_system(), spec, x0s, cfg)
        .into_iter()
        .map(|r| r.expect("simulation failed"))
        .collect()
}

#[test]
fn truncated_safe_set_is_forward_invariant() {
    let spec = switching();
    let b = spec.barrier().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0s = sample(&mut rng, 50, |x| b.h(x) >= 0.0);
    let cfg = SimConfig::default();
    for (x0, traj) in x0s.iter().zip(runs(&spec, &x0s, &cfg)) {
        let worst = traj.h_values.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(worst >= -INVARIANCE_TOL, "x0 = {x0:?}: min h = {worst:e}");
    }
}

#[test]
fn entry_and_convergence_happen_before_the_horizon() {
    let spec = switching();
    let b = spec.barrier().clone();
    let v = spec.wclf().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut x0s = sample(&mut rng, 20, |x| b.h(x) >= 0.0 && v.value(x) > 0.05);
    x0s.extend(sample(&mut rng, 20, |x| b.h(x) < 0.0));
    let cfg = SimConfig::default();
    for (x0, traj) in x0s.iter().zip(runs(&spec, &x0s, &cfg)) {
        let out = classify_outcome(&traj, &spec, &cfg);
        let t_c = out
            .t_enter_c
            .unwrap_or_else(|| panic!("x0 = {x0:?} never entered C"));
        let t_0 = out
            .t_converged
            .unwrap_or_else(|| panic!("x0 = {x0:?} did not converge"));
        assert!(t_c <= t_0 && t_0 < cfg.horizon);
        assert!(
            out.stayed_in_c_after_entry,
            "x0 = {x0:?}: violation {:e}",
            out.max_safety_violation
        );
    }
}

#[test]
fn recorded_values_are_recomputed_exactly() {
    let spec = switching();
    let cfg = SimConfig {
        horizon: 3.0,
        record_every: 6,
        ..Default::default()
    };
    let x0s = vec![
        DVector::from_vec(vec![2.5, 0.0]),
        DVector::from_vec(vec![-1.0, 1.0]),
    ];
    for traj in runs(&spec, &x0s, &cfg) {
        for (k, x) in traj.states.iter().enumerate() {
            assert_eq!(traj.v_values[k], spec.wclf().value(x));
            assert_eq!(traj.h_values[k], spec.barrier().h(x));
        }
        let spacing = cfg.dt * cfg.record_every as f64;
        for w in traj.times.windows(2) {
            assert!(w[1] > w[0] && ((w[1] - w[0]) - spacing).abs() < 1e-12);
        }
    }
}

#[test]
fn lyapunov_decrease_while_in_u1() {
    let spec = switching();
    let cfg = SimConfig {
        horizon: 5.0,
        ..Default::default()
    };
    let x0s = vec![
        DVector::from_vec(vec![-1.0, 1.0]),
        DVector::from_vec(vec![0.5, -2.0]),
    ];
    for traj in runs(&spec, &x0s, &cfg) {
        let mut u1_steps = 0;
        for k in 0..traj.states.len() - 1 {
            if traj.branches[k] != Branch::U1 {
                continue;
            }
            u1_steps += 1;
            let w = spec.wclf().margin(&traj.states[k]);
            let dv = traj.v_values[k + 1] - traj.v_values[k];
            assert!(
                dv < 0.0 || traj.v_values[k] < 1e-12,
                "V increased by {dv:e} at step {k}"
            );
            assert!(
                dv <= -0.99 * w * cfg.dt + 1e-15,
                "step {k}: decrease {dv:e}, W dt = {:e}",
                w * cfg.dt
            );
        }
        assert!(u1_steps > 1000);
    }
}

#[test]
fn outside_state_enters_then_events_are_ordered() {
    let spec = switching();
    let cfg = SimConfig::default();
    let traj = &runs(&spec, &[DVector::from_vec(vec![3.0, 0.0])], &cfg)[0];
    let kinds: Vec<EventKind> = traj.events.iter().map(|e| e.kind).collect();
    let pos = |k| kinds.iter().position(|x| *x == k).unwrap();
    assert!(pos(EventKind::EnterC) < pos(EventKind::Converged));
    assert!(traj.events.windows(2).all(|w| w[0].t <= w[1].t));
}
