//! Stabilization of control-affine systems with weak control Lyapunov
//! functions and strict Boolean nonsmooth control barrier functions.

// `!(x > 0.0)` is used on purpose so NaN parameters are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod certificates;
pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod qp;
pub mod simulator;
pub mod verifier;

pub use certificates::{
    cbf_rows, clf_row, compact_truncate, pointwise_compatible, BarrierPiece, CbfRow, ClassK,
    ClfRow, SafeSetValue, Sbncbf, Wclf,
};
pub use controllers::{
    Branch, ControlDecision, ControlError, ControllerKind, ControllerSpec, Memory, OnIncompatible,
};
pub use dynamics::{bump_system, system_by_name, unicycle_system, Input, State, SystemModel};
pub use error::ContractError;
pub use qp::{check_kkt, solve_qp, QpProblem, QpSolution, QpStatus, Sense};
pub use simulator::{
    classify_outcome, simulate, simulate_batch, Event, EventKind, OutcomeReport, SimConfig,
    SimError, Trajectory,
};
pub use verifier::{
    estimate_alpha0, verify_boundary_sbncbf, verify_compatibility_region, GridSpec, RegionReport,
};
