//! Weak control Lyapunov functions, Boolean nonsmooth barrier functions and
//! the pointwise constraint rows they induce on the input.
//!
//! A barrier is a list of continuously differentiable pieces `h_i` arranged
//! in groups. Within a group pieces are combined by `max` (a union of
//! super-level sets); groups are combined by `min` (an intersection). A plain
//! max-composed barrier is a single group. Compact truncation appends the
//! group `{γ − V}`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::dynamics::{State, SystemModel};
use crate::error::ContractError;
use crate::qp::{solve_qp, QpProblem, QpSolution};

pub type ScalarFn = Arc<dyn Fn(&State) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&State) -> DVector<f64> + Send + Sync>;
pub type RegionFn = Arc<dyn Fn(&State) -> bool + Send + Sync>;

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_ACTIVE_TOL: f64 = 1e-6;
pub const DEFAULT_U_BOUND: f64 = 1e3;

/// `(L_f φ(x), L_g φ(x))` for a scalar function with gradient `grad`.
pub fn lie_derivatives(grad: &DVector<f64>, sys: &SystemModel, x: &State) -> (f64, DVector<f64>) {
    let lf = grad.dot(&sys.drift(x));
    let lg = sys.actuation(x).tr_mul(grad);
    (lf, lg)
}

/// A weak control Lyapunov function `V` with its decrease margin `W` and a
/// membership test for the set where the decrease condition is feasible.
#[derive(Clone)]
pub struct Wclf {
    state_dim: usize,
    value: ScalarFn,
    gradient: GradientFn,
    margin: ScalarFn,
    feasible_region: RegionFn,
}

impl fmt::Debug for Wclf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Wclf")
            .field("state_dim", &self.state_dim)
            .finish_non_exhaustive()
    }
}

impl Wclf {
    pub fn new(
        state_dim: usize,
        value: impl Fn(&State) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&State) -> DVector<f64> + Send + Sync + 'static,
        margin: impl Fn(&State) -> f64 + Send + Sync + 'static,
        feasible_region: impl Fn(&State) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            margin: Arc::new(margin),
            feasible_region: Arc::new(feasible_region),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn value(&self, x: &State) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &State) -> DVector<f64> {
        (self.gradient)(x)
    }

    /// The positive definite function `W`.
    pub fn margin(&self, x: &State) -> f64 {
        (self.margin)(x)
    }

    pub fn in_feasible_region(&self, x: &State) -> bool {
        (self.feasible_region)(x)
    }
}

/// Extended class-K function.
#[derive(Clone)]
pub enum ClassK {
    /// `α(s) = α₀ s` with `α₀ > 0`.
    Linear(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for ClassK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassK::Linear(a) => f.debug_tuple("Linear").field(a).finish(),
            ClassK::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl ClassK {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            ClassK::Linear(a) => a * s,
            ClassK::Custom(f) => f(s),
        }
    }

    /// Checks `α(0) = 0` and strict monotonicity on 10³ points of `[-10, 10]`.
    pub fn validate(&self) -> Result<(), ContractError> {
        if let ClassK::Linear(a) = self {
            if !(a.is_finite() && *a > 0.0) {
                return Err(ContractError::parameter(
                    "alpha",
                    format!("slope must be positive, got {a}"),
                ));
            }
            return Ok(());
        }
        if self.eval(0.0) != 0.0 {
            return Err(ContractError::parameter("alpha", "alpha(0) must be 0"));
        }
        let n = 1000;
        let mut prev = self.eval(-10.0);
        for k in 1..n {
            let s = -10.0 + 20.0 * k as f64 / (n - 1) as f64;
            let cur = self.eval(s);
            if !(cur > prev) {
                return Err(ContractError::parameter(
                    "alpha",
                    format!("not strictly increasing near s = {s}"),
                ));
            }
            prev = cur;
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct BarrierPiece {
    name: String,
    value: ScalarFn,
    gradient: GradientFn,
}

impl fmt::Debug for BarrierPiece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BarrierPiece")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

impl BarrierPiece {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(&State) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&State) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, x: &State) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &State) -> DVector<f64> {
        (self.gradient)(x)
    }
}

/// Value of a barrier at a point together with its active pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeSetValue {
    pub h: f64,
    /// Indices of the pieces that constrain the input at this point.
    pub active: Vec<usize>,
    pub per_piece: Vec<f64>,
}

/// A strict Boolean nonsmooth control barrier function.
#[derive(Clone, Debug)]
pub struct Sbncbf {
    pieces: Vec<BarrierPiece>,
    groups: Vec<Vec<usize>>,
    alpha: ClassK,
    epsilon: f64,
    active_tol: f64,
}

impl Sbncbf {
    /// General constructor: `h = min over groups of (max over the group's pieces)`.
    pub fn from_groups(
        pieces: Vec<BarrierPiece>,
        groups: Vec<Vec<usize>>,
        alpha: ClassK,
        epsilon: f64,
        active_tol: f64,
    ) -> Result<Self, ContractError> {
        if pieces.is_empty() {
            return Err(ContractError::parameter(
                "pieces",
                "at least one piece is required",
            ));
        }
        let mut seen = vec![false; pieces.len()];
        for g in &groups {
            if g.is_empty() {
                return Err(ContractError::parameter("groups", "empty group"));
            }
            for &i in g {
                if i >= pieces.len() || seen[i] {
                    return Err(ContractError::parameter(
                        "groups",
                        format!("piece {i} is out of range or repeated"),
                    ));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(ContractError::parameter(
                "groups",
                "every piece must belong to a group",
            ));
        }
        alpha.validate()?;
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(ContractError::parameter(
                "epsilon",
                format!("must be positive, got {epsilon}"),
            ));
        }
        if !(active_tol.is_finite() && active_tol >= 0.0) {
            return Err(ContractError::parameter(
                "active_tol",
                format!("must be nonnegative, got {active_tol}"),
            ));
        }
        Ok(Self {
            pieces,
            groups,
            alpha,
            epsilon,
            active_tol,
        })
    }

    /// `h = max_i h_i`.
    pub fn max_of(
        pieces: Vec<BarrierPiece>,
        alpha: ClassK,
        epsilon: f64,
        active_tol: f64,
    ) -> Result<Self, ContractError> {
        let groups = vec![(0..pieces.len()).collect()];
        Self::from_groups(pieces, groups, alpha, epsilon, active_tol)
    }

    /// `h = min_i h_i`.
    pub fn min_of(
        pieces: Vec<BarrierPiece>,
        alpha: ClassK,
        epsilon: f64,
        active_tol: f64,
    ) -> Result<Self, ContractError> {
        let groups = (0..pieces.len()).map(|i| vec![i]).collect();
        Self::from_groups(pieces, groups, alpha, epsilon, active_tol)
    }

    pub fn pieces(&self) -> &[BarrierPiece] {
        &self.pieces
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn alpha(&self) -> &ClassK {
        &self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn active_tol(&self) -> f64 {
        self.active_tol
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self, ContractError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(ContractError::parameter(
                "epsilon",
                format!("must be positive, got {epsilon}"),
            ));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: ClassK) -> Result<Self, ContractError> {
        alpha.validate()?;
        self.alpha = alpha;
        Ok(self)
    }

    /// Keeps only the listed pieces (and the groups that contain them).
    pub fn restrict(&self, keep: &[usize]) -> Result<Self, ContractError> {
        let mut map = vec![None; self.pieces.len()];
        let mut pieces = Vec::new();
        for &i in keep {
            if i >= self.pieces.len() {
                return Err(ContractError::parameter(
                    "keep",
                    format!("piece {i} out of range"),
                ));
            }
            map[i] = Some(pieces.len());
            pieces.push(self.pieces[i].clone());
        }
        let groups = self
            .groups
            .iter()
            .map(|g| g.iter().filter_map(|&i| map[i]).collect::<Vec<_>>())
            .filter(|g| !g.is_empty())
            .collect();
        Self::from_groups(
            pieces,
            groups,
            self.alpha.clone(),
            self.epsilon,
            self.active_tol,
        )
    }

    pub fn h(&self, x: &State) -> f64 {
        self.evaluate(x).h
    }

    pub fn contains(&self, x: &State) -> bool {
        self.h(x) >= 0.0
    }

    pub fn evaluate(&self, x: &State) -> SafeSetValue {
        let per_piece: Vec<f64> = self.pieces.iter().map(|p| p.value(x)).collect();
        let group_values: Vec<f64> = self
            .groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&i| per_piece[i])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let h = group_values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut active = Vec::new();
        for (g, gv) in self.groups.iter().zip(&group_values) {
            if gv - h <= self.active_tol {
                active.extend(
                    g.iter()
                        .copied()
                        .filter(|&i| gv - per_piece[i] <= self.active_tol),
                );
            }
        }
        active.sort_unstable();
        SafeSetValue {
            h,
            active,
            per_piece,
        }
    }
}

/// The decrease condition `L_fV + L_gV u ≤ −W` as `aᵀu ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClfRow {
    pub a: DVector<f64>,
    pub b: f64,
}

/// One barrier condition `aᵀu ≥ b` for the active piece `piece`.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfRow {
    pub piece: usize,
    pub a: DVector<f64>,
    pub b: f64,
}

pub fn clf_row(v: &Wclf, sys: &SystemModel, x: &State) -> ClfRow {
    let (lf, lg) = lie_derivatives(&v.gradient(x), sys, x);
    ClfRow {
        a: lg,
        b: -v.margin(x) - lf,
    }
}

/// Rows `L_g h_i u ≥ −α(h_i) + ε − L_f h_i` for every active piece, or
/// `L_g h_i u ≥ ε − L_f h_i` when `strict` (the boundary form without `α`).
pub fn cbf_rows(b: &Sbncbf, sys: &SystemModel, x: &State, strict: bool) -> Vec<CbfRow> {
    let val = b.evaluate(x);
    val.active
        .iter()
        .map(|&i| {
            let (lf, lg) = lie_derivatives(&b.pieces[i].gradient(x), sys, x);
            let decay = if strict {
                0.0
            } else {
                b.alpha.eval(val.per_piece[i])
            };
            CbfRow {
                piece: i,
                a: lg,
                b: -decay + b.epsilon - lf,
            }
        })
        .collect()
}

// Deterministic low-discrepancy points in [-r, r]^n.
fn probe_points(n: usize, r: f64, count: usize) -> impl Iterator<Item = State> {
    // Kronecker sequence with generalized golden-ratio frequencies.
    let phi = (1..=40).fold(2.0f64, |p, _| (1.0 + p).powf(1.0 / (n as f64 + 1.0)));
    let freq: Vec<f64> = (1..=n).map(|k| phi.powi(-(k as i32)).fract()).collect();
    (0..count).map(move |j| {
        DVector::from_fn(n, |i, _| {
            let t = (0.5 + freq[i] * j as f64).fract();
            r * (2.0 * t - 1.0)
        })
    })
}

/// `h̃(x) = min{h(x), γ − V(x)}`: appends the group `{γ − V}` to `b`.
///
/// Non-emptiness of the truncated set is checked by sampling the origin and
/// boxes of growing radius.
pub fn compact_truncate(b: &Sbncbf, v: &Wclf, gamma: f64) -> Result<Sbncbf, ContractError> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(ContractError::parameter(
            "gamma",
            format!("must be positive, got {gamma}"),
        ));
    }
    let mut pieces = b.pieces.clone();
    let mut groups = b.groups.clone();
    let (value, gradient) = (v.value.clone(), v.gradient.clone());
    pieces.push(BarrierPiece::new(
        format!("cap(gamma={gamma})"),
        move |x| gamma - value(x),
        move |x| -gradient(x),
    ));
    groups.push(vec![pieces.len() - 1]);
    let truncated = Sbncbf::from_groups(pieces, groups, b.alpha.clone(), b.epsilon, b.active_tol)?;

    let n = v.state_dim();
    let origin = DVector::zeros(n);
    let nonempty = truncated.contains(&origin)
        || [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
            .iter()
            .any(|&r| probe_points(n, r, 4096).any(|x| truncated.contains(&x)));
    if nonempty {
        Ok(truncated)
    } else {
        Err(ContractError::EmptySafeSet { gamma })
    }
}

/// Min-norm QP over `u` with the CLF row, every active barrier row and the box
/// `‖u‖_∞ ≤ u_bound`.
pub fn compatibility_problem(
    v: &Wclf,
    b: &Sbncbf,
    sys: &SystemModel,
    x: &State,
    u_bound: f64,
) -> Result<QpProblem, ContractError> {
    let m = sys.input_dim();
    let mut p = QpProblem::min_norm(m)?;
    let clf = clf_row(v, sys, x);
    p.le(clf.a, clf.b)?;
    for row in cbf_rows(b, sys, x, false) {
        p.ge(row.a, row.b)?;
    }
    add_box(&mut p, u_bound)?;
    Ok(p)
}

pub(crate) fn add_box(p: &mut QpProblem, u_bound: f64) -> Result<(), ContractError> {
    if !(u_bound > 0.0) {
        return Err(ContractError::parameter(
            "u_bound",
            format!("must be positive, got {u_bound}"),
        ));
    }
    for j in 0..p.dim() {
        let e = DVector::from_fn(p.dim(), |i, _| if i == j { 1.0 } else { 0.0 });
        p.le(e.clone(), u_bound)?;
        p.ge(e, -u_bound)?;
    }
    Ok(())
}

pub fn compatibility_solution(
    v: &Wclf,
    b: &Sbncbf,
    sys: &SystemModel,
    x: &State,
    u_bound: f64,
) -> Result<QpSolution, ContractError> {
    Ok(solve_qp(&compatibility_problem(v, b, sys, x, u_bound)?))
}

/// Whether the CLF row and all active barrier rows at `x` admit a common
/// input with `‖u‖_∞ ≤ u_bound`.
pub fn pointwise_compatible(
    v: &Wclf,
    b: &Sbncbf,
    sys: &SystemModel,
    x: &State,
    u_bound: f64,
) -> bool {
    compatibility_solution(v, b, sys, x, u_bound)
        .map(|s| s.is_optimal())
        .unwrap_or(false)
}
