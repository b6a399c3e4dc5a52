//! State-feedback controllers built from a WCLF / SBNCBF pair: the WCLF-QP
//! baseline, the barrier-only QP, the switching controller and the relaxed
//! (slack) QP.
//!
//! Controllers hold no mutable state. The switching controller's hysteresis
//! memory is passed in and handed back in every [`ControlDecision`].

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::certificates::{cbf_rows, clf_row, RegionFn, Sbncbf, Wclf};
use crate::dynamics::{Input, State, SystemModel};
use crate::error::ContractError;
use crate::qp::{solve_qp, QpProblem, QpSolution, QpStatus};

pub const DEFAULT_HYSTERESIS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    WclfQp,
    BncbfQp,
    Switching,
    Relaxed,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::WclfQp => "wclf_qp",
            ControllerKind::BncbfQp => "bncbf_qp",
            ControllerKind::Switching => "switching",
            ControllerKind::Relaxed => "relaxed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::WclfQp, Self::BncbfQp, Self::Switching, Self::Relaxed]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    U1,
    U2,
    Relaxed,
    WclfOnly,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::U1 => "u1",
            Branch::U2 => "u2",
            Branch::Relaxed => "relaxed",
            Branch::WclfOnly => "wclf_only",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the switching controller does when the joint QP is infeasible at a
/// state where it selected the `u1` branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OnIncompatible {
    /// The pair is declared compatible there; report a diagnostic error.
    Error,
    /// Apply the barrier-only input for this step.
    FallbackToU2,
}

/// Hysteresis memory of the switching controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Memory {
    #[default]
    Fresh,
    InU1,
    /// In `u2` because the state left the safe set.
    U2OutsideC,
    /// In `u2` because `V` dropped to the level `c̄`.
    U2InLevelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowTag {
    Clf,
    RelaxedClf,
    Cbf(usize),
}

impl fmt::Display for RowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowTag::Clf => f.write_str("clf"),
            RowTag::RelaxedClf => f.write_str("clf+slack"),
            RowTag::Cbf(i) => write!(f, "cbf[{i}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u: Input,
    pub branch: Branch,
    pub qp_status: QpStatus,
    /// Optimal slack of the relaxed program.
    pub slack: Option<f64>,
    pub rows_used: Vec<RowTag>,
    pub memory: Memory,
    /// The switching controller found the joint QP infeasible and applied the
    /// barrier-only input instead.
    pub fallback: bool,
    pub in_g: bool,
    /// Phase-1 value when the solved QP was infeasible.
    pub infeasibility: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("WCLF and barrier rows are incompatible at x = {x:?} (largest violation {infeasibility:.3e})")]
    Incompatible { x: Vec<f64>, infeasibility: f64 },
}

#[derive(Clone)]
pub struct ControllerSpec {
    kind: ControllerKind,
    wclf: Wclf,
    barrier: Sbncbf,
    c_bar: f64,
    lambda: f64,
    hysteresis: f64,
    on_incompatible: OnIncompatible,
    g_region: RegionFn,
}

impl fmt::Debug for ControllerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControllerSpec")
            .field("kind", &self.kind)
            .field("barrier", &self.barrier)
            .field("c_bar", &self.c_bar)
            .field("lambda", &self.lambda)
            .field("hysteresis", &self.hysteresis)
            .field("on_incompatible", &self.on_incompatible)
            .finish_non_exhaustive()
    }
}

impl ControllerSpec {
    /// Defaults: `c̄ = 0`, `λ = 100`, hysteresis `1e-4`, incompatibility is an
    /// error, `𝓖` is the whole space.
    pub fn new(kind: ControllerKind, wclf: Wclf, barrier: Sbncbf) -> Result<Self, ContractError> {
        if wclf.state_dim() == 0 {
            return Err(ContractError::parameter("wclf", "zero state dimension"));
        }
        Ok(Self {
            kind,
            wclf,
            barrier,
            c_bar: 0.0,
            lambda: 100.0,
            hysteresis: DEFAULT_HYSTERESIS,
            on_incompatible: OnIncompatible::Error,
            g_region: Arc::new(|_| true),
        })
    }

    pub fn with_c_bar(mut self, c_bar: f64) -> Result<Self, ContractError> {
        if !(c_bar.is_finite() && c_bar >= 0.0) {
            return Err(ContractError::parameter(
                "c_bar",
                format!("must be >= 0, got {c_bar}"),
            ));
        }
        self.c_bar = c_bar;
        Ok(self)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self, ContractError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(ContractError::parameter(
                "lambda",
                format!("must be > 0, got {lambda}"),
            ));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn with_hysteresis(mut self, hysteresis: f64) -> Result<Self, ContractError> {
        if !(hysteresis.is_finite() && hysteresis >= 0.0) {
            return Err(ContractError::parameter(
                "hysteresis",
                format!("must be >= 0, got {hysteresis}"),
            ));
        }
        self.hysteresis = hysteresis;
        Ok(self)
    }

    pub fn with_on_incompatible(mut self, policy: OnIncompatible) -> Self {
        self.on_incompatible = policy;
        self
    }

    pub fn with_g_region(mut self, g: impl Fn(&State) -> bool + Send + Sync + 'static) -> Self {
        self.g_region = Arc::new(g);
        self
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    pub fn wclf(&self) -> &Wclf {
        &self.wclf
    }

    pub fn barrier(&self) -> &Sbncbf {
        &self.barrier
    }

    pub fn c_bar(&self) -> f64 {
        self.c_bar
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn hysteresis(&self) -> f64 {
        self.hysteresis
    }

    pub fn on_incompatible(&self) -> OnIncompatible {
        self.on_incompatible
    }

    pub fn in_g(&self, x: &State) -> bool {
        (self.g_region)(x)
    }

    /// Dispatches on the controller kind.
    pub fn control(
        &self,
        sys: &SystemModel,
        x: &State,
        memory: Memory,
    ) -> Result<ControlDecision, ControlError> {
        sys.check_state(x)?;
        check_system(self, sys)?;
        match self.kind {
            ControllerKind::WclfQp => self.wclf_qp(sys, x),
            ControllerKind::BncbfQp => self.bncbf_qp(sys, x, memory),
            ControllerKind::Switching => self.switching(sys, x, memory),
            ControllerKind::Relaxed => self.relaxed(sys, x),
        }
    }

    fn decision(
        &self,
        x: &State,
        sol: &QpSolution,
        m: usize,
        branch: Branch,
        rows: Vec<RowTag>,
    ) -> ControlDecision {
        let u = if sol.is_optimal() {
            sol.z.rows(0, m).into_owned()
        } else {
            DVector::zeros(m)
        };
        ControlDecision {
            u,
            branch,
            qp_status: sol.status,
            slack: None,
            rows_used: rows,
            memory: Memory::Fresh,
            fallback: false,
            in_g: self.in_g(x),
            infeasibility: if sol.is_optimal() {
                None
            } else {
                sol.infeasibility
            },
        }
    }

    fn barrier_problem(
        &self,
        sys: &SystemModel,
        x: &State,
        with_clf: bool,
    ) -> Result<(QpProblem, Vec<RowTag>), ContractError> {
        let mut p = QpProblem::min_norm(sys.input_dim())?;
        let mut tags = Vec::new();
        if with_clf {
            let r = clf_row(&self.wclf, sys, x);
            p.le(r.a, r.b)?;
            tags.push(RowTag::Clf);
        }
        for r in cbf_rows(&self.barrier, sys, x, false) {
            p.ge(r.a, r.b)?;
            tags.push(RowTag::Cbf(r.piece));
        }
        Ok((p, tags))
    }

    fn wclf_qp(&self, sys: &SystemModel, x: &State) -> Result<ControlDecision, ControlError> {
        let mut p = QpProblem::min_norm(sys.input_dim())?;
        let r = clf_row(&self.wclf, sys, x);
        p.le(r.a, r.b)?;
        let sol = solve_qp(&p);
        Ok(self.decision(
            x,
            &sol,
            sys.input_dim(),
            Branch::WclfOnly,
            vec![RowTag::Clf],
        ))
    }

    fn bncbf_qp(
        &self,
        sys: &SystemModel,
        x: &State,
        memory: Memory,
    ) -> Result<ControlDecision, ControlError> {
        let (p, tags) = self.barrier_problem(sys, x, false)?;
        let sol = solve_qp(&p);
        let mut d = self.decision(x, &sol, sys.input_dim(), Branch::U2, tags);
        d.memory = memory;
        Ok(d)
    }

    fn switching(
        &self,
        sys: &SystemModel,
        x: &State,
        memory: Memory,
    ) -> Result<ControlDecision, ControlError> {
        let h = self.barrier.h(x);
        let v = self.wclf.value(x);
        let hys = self.hysteresis;
        let safe = match memory {
            Memory::U2OutsideC => h >= hys,
            _ => h >= 0.0,
        };
        let above = match memory {
            Memory::U2InLevelSet => v >= self.c_bar + hys,
            _ => v > self.c_bar,
        };
        let m = sys.input_dim();
        if safe && above {
            let (p, tags) = self.barrier_problem(sys, x, true)?;
            let sol = solve_qp(&p);
            if sol.is_optimal() {
                let mut d = self.decision(x, &sol, m, Branch::U1, tags);
                d.memory = Memory::InU1;
                return Ok(d);
            }
            match self.on_incompatible {
                OnIncompatible::Error => {
                    return Err(ControlError::Incompatible {
                        x: x.iter().copied().collect(),
                        infeasibility: sol.infeasibility.unwrap_or(f64::NAN),
                    })
                }
                OnIncompatible::FallbackToU2 => {
                    let (p, tags) = self.barrier_problem(sys, x, false)?;
                    let mut d = self.decision(x, &solve_qp(&p), m, Branch::U2, tags);
                    d.memory = Memory::InU1;
                    d.fallback = true;
                    return Ok(d);
                }
            }
        }
        let (p, tags) = self.barrier_problem(sys, x, false)?;
        let mut d = self.decision(x, &solve_qp(&p), m, Branch::U2, tags);
        d.memory = if safe {
            Memory::U2InLevelSet
        } else {
            Memory::U2OutsideC
        };
        Ok(d)
    }

    fn relaxed(&self, sys: &SystemModel, x: &State) -> Result<ControlDecision, ControlError> {
        let m = sys.input_dim();
        let mut weights = vec![1.0; m + 1];
        weights[m] = 2.0 * self.lambda;
        let mut p = QpProblem::new(weights)?;
        let lift = |a: &DVector<f64>, last: f64| {
            DVector::from_fn(m + 1, |i, _| if i < m { a[i] } else { last })
        };
        let r = clf_row(&self.wclf, sys, x);
        p.le(lift(&r.a, -1.0), r.b)?;
        let mut tags = vec![RowTag::RelaxedClf];
        for r in cbf_rows(&self.barrier, sys, x, false) {
            p.ge(lift(&r.a, 0.0), r.b)?;
            tags.push(RowTag::Cbf(r.piece));
        }
        let sol = solve_qp(&p);
        let mut d = self.decision(x, &sol, m, Branch::Relaxed, tags);
        if sol.is_optimal() {
            d.slack = Some(sol.z[m]);
        }
        Ok(d)
    }
}

fn check_system(spec: &ControllerSpec, sys: &SystemModel) -> Result<(), ContractError> {
    crate::error::check_dim(
        "WCLF state dimension",
        sys.state_dim(),
        spec.wclf.state_dim(),
    )
}

/// `∇V·(f + g u)`.
pub fn v_dot(v: &Wclf, sys: &SystemModel, x: &State, u: &Input) -> f64 {
    v.gradient(x).dot(&sys.vector_field_unchecked(x, u))
}
