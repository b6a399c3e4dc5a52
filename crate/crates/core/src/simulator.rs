//! Fixed-step RK4 simulation of the closed loop with the input held constant
//! over each step, plus event detection and outcome classification.

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::controllers::{Branch, ControlError, ControllerSpec, Memory};
use crate::dynamics::{Input, State, SystemModel};
use crate::error::ContractError;
use crate::qp::QpStatus;

/// Tolerance on `h` and `V` used when judging invariance after entry.
pub const INVARIANCE_TOL: f64 = 1e-4;
const MAX_STEPS: usize = 50_000_000;
const CHATTER_WINDOW: usize = 100;
const CHATTER_FLIPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub origin_tol: f64,
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 20.0,
            origin_tol: 1e-2,
            record_every: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ContractError> {
        let bad = |name, reason: String| Err(ContractError::parameter(name, reason));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return bad(
                "horizon",
                format!("must be finite and >= dt, got {}", self.horizon),
            );
        }
        if !(self.origin_tol.is_finite() && self.origin_tol > 0.0) {
            return bad(
                "origin_tol",
                format!("must be positive, got {}", self.origin_tol),
            );
        }
        if self.record_every == 0 {
            return bad("record_every", "must be at least 1".into());
        }
        if !self.steps().is_multiple_of(self.record_every) {
            return bad(
                "record_every",
                format!(
                    "must divide the step count {}, got {}",
                    self.steps(),
                    self.record_every
                ),
            );
        }
        if self.steps() > MAX_STEPS {
            return bad(
                "dt",
                format!("{} steps exceed the limit of {MAX_STEPS}", self.steps()),
            );
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    EnterC,
    EnterLevelSet,
    LeaveG,
    Infeasible,
    Converged,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::EnterC => "enter_C",
            EventKind::EnterLevelSet => "enter_level_set",
            EventKind::LeaveG => "leave_G",
            EventKind::Infeasible => "infeasible",
            EventKind::Converged => "converged",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub t: f64,
    /// Integration step during which the event happened.
    pub step: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// Input applied from each recorded state onward (for the last record,
    /// the controller's output there).
    pub inputs: Vec<Input>,
    pub v_values: Vec<f64>,
    pub h_values: Vec<f64>,
    pub branches: Vec<Branch>,
    pub events: Vec<Event>,
    pub dt: f64,
    pub record_every: usize,
    pub chattering: bool,
    pub infeasible_steps: usize,
    pub fallback_steps: usize,
    /// Largest `V(x_{k+1}) − V(x_k)` over steps taken in branch `u1`.
    pub worst_u1_v_increase: Option<f64>,
    /// Largest `‖u_{k+1} − u_k‖ / ‖x_{k+1} − x_k‖` between consecutive steps
    /// in the same branch.
    pub max_input_increment_ratio: f64,
}

impl Trajectory {
    pub fn first_event(&self, kind: EventKind) -> Option<f64> {
        self.events.iter().find(|e| e.kind == kind).map(|e| e.t)
    }

    pub fn final_state(&self) -> Option<&State> {
        self.states.last()
    }

    /// CSV with header `t,x1..xn,u1..um,V,h,branch,event`. Events are listed
    /// on the first recorded row at or after the step in which they occurred,
    /// joined by `;`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend(["V", "h", "branch", "event"].map(String::from));
        writeln!(w, "{}", header.join(","))?;

        let every = self.record_every.max(1);
        let mut ev = self.events.iter().peekable();
        for (k, t) in self.times.iter().enumerate() {
            let step = k * every;
            let mut labels = Vec::new();
            while let Some(e) = ev.peek() {
                if e.step <= step || k + 1 == self.times.len() {
                    labels.push(e.kind.as_str());
                    ev.next();
                } else {
                    break;
                }
            }
            let mut row = vec![num(*t)];
            row.extend(self.states[k].iter().map(|v| num(*v)));
            row.extend(self.inputs[k].iter().map(|v| num(*v)));
            row.push(num(self.v_values[k]));
            row.push(num(self.h_values[k]));
            row.push(self.branches[k].as_str().to_string());
            row.push(labels.join(";"));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Shortest round-trip-exact scientific notation with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Error)]
pub enum SimErrorKind {
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("controller failed at t = {t}: {source}")]
    Control { t: f64, source: ControlError },
    #[error(transparent)]
    Contract(#[from] ContractError),
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug, Error)]
#[error("{kind}")]
pub struct SimError {
    pub kind: SimErrorKind,
    pub prefix: Box<Trajectory>,
}

// Linearly interpolated time at which `s` crosses zero between two steps.
fn crossing_time(t0: f64, dt: f64, s0: f64, s1: f64) -> f64 {
    let denom = s1 - s0;
    if denom == 0.0 {
        t0 + dt
    } else {
        t0 + dt * (-s0 / denom).clamp(0.0, 1.0)
    }
}

fn rk4_step(sys: &SystemModel, x: &State, u: &Input, dt: f64) -> State {
    let k1 = sys.vector_field_unchecked(x, u);
    let k2 = sys.vector_field_unchecked(&(x + &k1 * (0.5 * dt)), u);
    let k3 = sys.vector_field_unchecked(&(x + &k2 * (0.5 * dt)), u);
    let k4 = sys.vector_field_unchecked(&(x + &k3 * dt), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

struct Signals {
    h: f64,
    v: f64,
    norm: f64,
    in_g: bool,
}

impl Signals {
    fn at(spec: &ControllerSpec, x: &State) -> Self {
        Self {
            h: spec.barrier().h(x),
            v: spec.wclf().value(x),
            norm: x.norm(),
            in_g: spec.in_g(x),
        }
    }
}

pub fn simulate(
    sys: &SystemModel,
    spec: &ControllerSpec,
    x0: &State,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    let mut traj = Trajectory {
        dt: cfg.dt,
        record_every: cfg.record_every,
        ..Default::default()
    };
    let fail = |kind: SimErrorKind, traj: Trajectory| SimError {
        kind,
        prefix: Box::new(traj),
    };
    if let Err(e) = cfg.validate().and_then(|_| sys.check_state(x0)) {
        return Err(fail(e.into(), traj));
    }

    let level = spec.c_bar();
    let track_level = level > 0.0;
    let steps = cfg.steps();
    let mut x = x0.clone();
    let mut memory = Memory::Fresh;
    let mut prev: Option<(Signals, Branch, QpStatus, Input, State)> = None;
    let mut flips: VecDeque<usize> = VecDeque::new();

    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        if x.iter().chain(sys.drift(&x).iter()).any(|v| !v.is_finite()) {
            return Err(fail(SimErrorKind::NonFinite { t }, traj));
        }
        let d = match spec.control(sys, &x, memory) {
            Ok(d) => d,
            Err(source) => return Err(fail(SimErrorKind::Control { t, source }, traj)),
        };
        let sig = Signals::at(spec, &x);

        match &prev {
            None => {
                if sig.h >= 0.0 {
                    traj.events.push(Event {
                        kind: EventKind::EnterC,
                        t,
                        step: k,
                    });
                }
                if track_level && sig.v <= level {
                    traj.events.push(Event {
                        kind: EventKind::EnterLevelSet,
                        t,
                        step: k,
                    });
                }
                if sig.norm <= cfg.origin_tol {
                    traj.events.push(Event {
                        kind: EventKind::Converged,
                        t,
                        step: k,
                    });
                }
                if !sig.in_g {
                    traj.events.push(Event {
                        kind: EventKind::LeaveG,
                        t,
                        step: k,
                    });
                }
            }
            Some((p, branch, status, u_prev, x_prev)) => {
                let t0 = t - cfg.dt;
                if p.h < 0.0 && sig.h >= 0.0 {
                    let te = crossing_time(t0, cfg.dt, p.h, sig.h);
                    traj.events.push(Event {
                        kind: EventKind::EnterC,
                        t: te,
                        step: k,
                    });
                }
                if track_level && p.v > level && sig.v <= level {
                    let te = crossing_time(t0, cfg.dt, p.v - level, sig.v - level);
                    traj.events.push(Event {
                        kind: EventKind::EnterLevelSet,
                        t: te,
                        step: k,
                    });
                }
                if p.norm > cfg.origin_tol && sig.norm <= cfg.origin_tol {
                    let te = crossing_time(
                        t0,
                        cfg.dt,
                        p.norm - cfg.origin_tol,
                        sig.norm - cfg.origin_tol,
                    );
                    traj.events.push(Event {
                        kind: EventKind::Converged,
                        t: te,
                        step: k,
                    });
                }
                if p.in_g && !sig.in_g {
                    traj.events.push(Event {
                        kind: EventKind::LeaveG,
                        t,
                        step: k,
                    });
                }
                if *branch == Branch::U1 && *status == QpStatus::Optimal {
                    let inc = sig.v - p.v;
                    traj.worst_u1_v_increase =
                        Some(traj.worst_u1_v_increase.map_or(inc, |w| w.max(inc)));
                }
                if *branch == d.branch {
                    let dx = (&x - x_prev).norm();
                    if dx > 0.0 {
                        let ratio = (&d.u - u_prev).norm() / dx;
                        traj.max_input_increment_ratio = traj.max_input_increment_ratio.max(ratio);
                    }
                } else {
                    flips.push_back(k);
                }
                while flips.front().is_some_and(|&f| f + CHATTER_WINDOW <= k) {
                    flips.pop_front();
                }
                if flips.len() > CHATTER_FLIPS {
                    traj.chattering = true;
                }
            }
        }
        if d.qp_status == QpStatus::Infeasible {
            traj.infeasible_steps += 1;
            let onset = prev
                .as_ref()
                .is_none_or(|(_, _, s, _, _)| *s == QpStatus::Optimal);
            if onset {
                traj.events.push(Event {
                    kind: EventKind::Infeasible,
                    t,
                    step: k,
                });
            }
        }
        if d.fallback {
            traj.fallback_steps += 1;
        }

        if k % cfg.record_every == 0 {
            traj.times.push(t);
            traj.states.push(x.clone());
            traj.inputs.push(d.u.clone());
            traj.v_values.push(sig.v);
            traj.h_values.push(sig.h);
            traj.branches.push(d.branch);
        }
        if k == steps {
            break;
        }
        let next = rk4_step(sys, &x, &d.u, cfg.dt);
        memory = d.memory;
        prev = Some((sig, d.branch, d.qp_status, d.u, x));
        x = next;
    }
    Ok(traj)
}

/// Runs every initial state independently; results keep the input order.
pub fn simulate_batch(
    sys: &SystemModel,
    spec: &ControllerSpec,
    x0s: &[State],
    cfg: &SimConfig,
) -> Vec<Result<Trajectory, SimError>> {
    x0s.par_iter()
        .map(|x0| simulate(sys, spec, x0, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeReport {
    pub stayed_in_c_after_entry: bool,
    pub stayed_in_level_set_after_entry: bool,
    pub converged_to_origin: bool,
    pub converged_to_level_set: bool,
    /// First entry into the safe set.
    pub t_enter_c: Option<f64>,
    /// First entry into `{V ≤ c̄}` (only tracked for `c̄ > 0`).
    pub t_enter_level_set: Option<f64>,
    /// First time `‖x‖ ≤ origin_tol`.
    pub t_converged: Option<f64>,
    /// Largest `max(0, −h)` over records after the first entry into the safe set.
    pub max_safety_violation: f64,
    pub worst_u1_v_increase: Option<f64>,
    pub infeasible_steps: usize,
    pub fallback_steps: usize,
    pub chattering: bool,
    pub final_norm: f64,
}

pub fn classify_outcome(
    traj: &Trajectory,
    spec: &ControllerSpec,
    cfg: &SimConfig,
) -> OutcomeReport {
    let step_of = |t: f64| (t / (traj.dt * traj.record_every.max(1) as f64)).ceil() as usize;
    let t_enter_c = traj.first_event(EventKind::EnterC);
    let t_enter_level_set = traj.first_event(EventKind::EnterLevelSet);
    let t_converged = traj.first_event(EventKind::Converged);

    let after = |t: Option<f64>| t.map(|t| step_of(t).min(traj.times.len()));
    let max_safety_violation = after(t_enter_c)
        .map(|i| traj.h_values[i..].iter().fold(0.0f64, |m, h| m.max(-h)))
        .unwrap_or(0.0);
    let stayed_in_c_after_entry = t_enter_c.is_some() && max_safety_violation <= INVARIANCE_TOL;

    let cap = spec.c_bar() + spec.hysteresis() + INVARIANCE_TOL;
    let stayed_in_level_set_after_entry =
        after(t_enter_level_set).is_some_and(|i| traj.v_values[i..].iter().all(|v| *v <= cap));

    let final_norm = traj.final_state().map_or(f64::NAN, |x| x.norm());
    let final_v = traj.v_values.last().copied().unwrap_or(f64::NAN);
    OutcomeReport {
        stayed_in_c_after_entry,
        stayed_in_level_set_after_entry,
        converged_to_origin: final_norm <= cfg.origin_tol,
        converged_to_level_set: stayed_in_level_set_after_entry && final_v <= cap,
        t_enter_c,
        t_enter_level_set,
        t_converged,
        max_safety_violation,
        worst_u1_v_increase: traj.worst_u1_v_increase,
        infeasible_steps: traj.infeasible_steps,
        fallback_steps: traj.fallback_steps,
        chattering: traj.chattering,
        final_norm,
    }
}
