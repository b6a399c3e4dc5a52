use barrier_stab_core::benchmarks::{
    bump_barrier, bump_wclf_with_region, unicycle_barrier, unicycle_wclf, BumpParams,
    UnicycleParams,
};
use barrier_stab_core::certificates::{Sbncbf, Wclf};
use barrier_stab_core::dynamics::bump_system_with_cutoff;
use barrier_stab_core::{
    unicycle_system, ControllerKind, ControllerSpec, GridSpec, OnIncompatible, State, SystemModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Source};
use crate::error::CliError;

const MAX_SAMPLING_ATTEMPTS: usize = 1_000_000;

/// Everything a command needs, built from a resolved config.
pub struct Experiment {
    pub sys: SystemModel,
    pub spec: ControllerSpec,
    pub initial_states: Vec<State>,
}

pub fn build(cfg: &ExperimentConfig, src: &Source) -> Result<Experiment, CliError> {
    let (sys, wclf, barrier) = certificates(cfg).map_err(|e| src.error("controller", e))?;
    let c = &cfg.controller;
    let kind = ControllerKind::parse(c.kind.as_deref().expect("resolved"))
        .ok_or_else(|| src.error("controller.kind", "unknown controller"))?;
    let policy = match c.on_incompatible.as_deref() {
        Some("error") => OnIncompatible::Error,
        _ => OnIncompatible::FallbackToU2,
    };
    let spec = ControllerSpec::new(kind, wclf, barrier)
        .and_then(|s| s.with_c_bar(c.c_bar.expect("resolved")))
        .and_then(|s| s.with_lambda(c.lambda.expect("resolved")))
        .and_then(|s| s.with_hysteresis(c.hysteresis.expect("resolved")))
        .map_err(|e| src.error("controller", e))?
        .with_on_incompatible(policy);

    let mut initial_states: Vec<State> = cfg
        .initial_states
        .iter()
        .map(|x| State::from_column_slice(x))
        .collect();
    if let Some(r) = &cfg.random_initial_states {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let region = r.region.as_deref().unwrap_or("any");
        let mut drawn = 0;
        for _ in 0..MAX_SAMPLING_ATTEMPTS {
            if drawn == r.count {
                break;
            }
            let x = State::from_fn(r.lower.len(), |i, _| rng.gen_range(r.lower[i]..r.upper[i]));
            let h = spec.barrier().h(&x);
            let keep = match region {
                "inside_c" => h >= 0.0,
                "outside_c" => h < 0.0,
                _ => true,
            };
            if keep {
                initial_states.push(x);
                drawn += 1;
            }
        }
        if drawn < r.count {
            return Err(src.error(
                "random_initial_states",
                format!(
                    "drew only {drawn} of {} states in region `{region}`",
                    r.count
                ),
            ));
        }
    }
    Ok(Experiment {
        sys,
        spec,
        initial_states,
    })
}

fn certificates(
    cfg: &ExperimentConfig,
) -> Result<(SystemModel, Wclf, Sbncbf), barrier_stab_core::ContractError> {
    let c = &cfg.controller;
    let b = &cfg.barrier;
    if cfg.system == "bump" {
        let consts = cfg.bump.clone().unwrap_or_default();
        let p = BumpParams {
            w_scale: c.w_scale.expect("resolved"),
            alpha0: c.alpha0.expect("resolved"),
            epsilon: c.epsilon.expect("resolved"),
            active_tol: b.active_tol.expect("resolved"),
            gamma: b.gamma,
        };
        let sys = bump_system_with_cutoff(consts.lambda_cutoff.expect("resolved"))?;
        let wclf = bump_wclf_with_region(p.w_scale, consts.wclf_infeasible_x1.expect("resolved"));
        Ok((sys, wclf, bump_barrier(&p)?))
    } else {
        let p = UnicycleParams {
            delta: b.delta.expect("resolved"),
            b: c.b.expect("resolved"),
            w_scale: c.w_scale.expect("resolved"),
            alpha0: c.alpha0.expect("resolved"),
            epsilon: c.epsilon.expect("resolved"),
            active_tol: b.active_tol.expect("resolved"),
            gamma: b.gamma,
        };
        Ok((
            unicycle_system(),
            unicycle_wclf(p.b, p.w_scale),
            unicycle_barrier(&p)?,
        ))
    }
}

pub fn grid_spec(cfg: &ExperimentConfig, index: usize, src: &Source) -> Result<GridSpec, CliError> {
    let g = &cfg.grids[index];
    GridSpec::new(
        g.lower.clone(),
        g.upper.clone(),
        g.resolution.clone(),
        g.boundary_band.expect("resolved"),
    )
    .map_err(|e| src.error(&format!("grids.{index}"), e))
}
