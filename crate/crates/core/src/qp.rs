//! Small dense strictly convex QPs with diagonal weights,
//!
//! ```text
//!     minimize   ½ Σ w_j z_j²
//!     subject to a_iᵀ z ≤ b_i   or   a_iᵀ z ≥ b_i
//! ```
//!
//! solved exactly by enumerating candidate active sets. Every controller in
//! this crate reduces to a problem with at most three variables and a handful
//! of rows, so enumeration is both exact and cheap. When no candidate is a KKT
//! point, a phase-1 problem (minimize the largest constraint violation) is
//! solved by enumerating the vertices of its dual; a strictly positive optimum
//! certifies that the feasible set is empty.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, ContractError};

pub const MAX_DIM: usize = 8;
pub const MAX_CONSTRAINTS: usize = 16;

// Relative tolerances used while screening candidates.
const PRIMAL_TOL: f64 = 1e-10;
const DUAL_TOL: f64 = 1e-10;
const DEGENERACY_TOL: f64 = 1e-12;
const INFEASIBILITY_TOL: f64 = 1e-9;
// Screening is retried with tolerances loosened by this factor when phase 1
// reports a nonempty feasible set but no candidate passed.
const RETRY_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Le,
    Ge,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::Le => 1.0,
            Sense::Ge => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub row: DVector<f64>,
    pub rhs: f64,
    pub sense: Sense,
}

impl LinearConstraint {
    /// Signed violation of the constraint at `z` (positive when violated).
    pub fn violation(&self, z: &DVector<f64>) -> f64 {
        self.sense.sign() * (self.row.dot(z) - self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    weights: DVector<f64>,
    constraints: Vec<LinearConstraint>,
}

impl QpProblem {
    pub fn new(weights: Vec<f64>) -> Result<Self, ContractError> {
        if weights.is_empty() {
            return Err(ContractError::parameter(
                "weights",
                "at least one variable is required",
            ));
        }
        if weights.len() > MAX_DIM {
            return Err(ContractError::Envelope(format!(
                "{} decision variables (max {MAX_DIM})",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(ContractError::parameter(
                "weights",
                format!("all weights must be positive and finite, found {w}"),
            ));
        }
        Ok(Self {
            weights: DVector::from_vec(weights),
            constraints: Vec::new(),
        })
    }

    /// `½‖z‖²` in `dim` variables.
    pub fn min_norm(dim: usize) -> Result<Self, ContractError> {
        Self::new(vec![1.0; dim])
    }

    pub fn add(
        &mut self,
        row: DVector<f64>,
        sense: Sense,
        rhs: f64,
    ) -> Result<&mut Self, ContractError> {
        check_dim("constraint row", self.dim(), row.len())?;
        if self.constraints.len() == MAX_CONSTRAINTS {
            return Err(ContractError::Envelope(format!(
                "more than {MAX_CONSTRAINTS} constraints"
            )));
        }
        if !(rhs.is_finite() && row.iter().all(|a| a.is_finite())) {
            return Err(ContractError::parameter(
                "constraint",
                "non-finite coefficient",
            ));
        }
        self.constraints.push(LinearConstraint { row, rhs, sense });
        Ok(self)
    }

    pub fn le(&mut self, row: DVector<f64>, rhs: f64) -> Result<&mut Self, ContractError> {
        self.add(row, Sense::Le, rhs)
    }

    pub fn ge(&mut self, row: DVector<f64>, rhs: f64) -> Result<&mut Self, ContractError> {
        self.add(row, Sense::Ge, rhs)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn cost(&self, z: &DVector<f64>) -> f64 {
        0.5 * z
            .iter()
            .zip(self.weights.iter())
            .map(|(zj, wj)| wj * zj * zj)
            .sum::<f64>()
    }

    /// Largest constraint violation at `z` (zero when feasible).
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.violation(z))
            .fold(0.0, f64::max)
    }

    // Rows in `≤` form: (n_i, c_i) with n_iᵀz ≤ c_i.
    fn normalized(&self) -> (Vec<DVector<f64>>, Vec<f64>) {
        self.constraints
            .iter()
            .map(|c| (&c.row * c.sense.sign(), c.rhs * c.sense.sign()))
            .unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    /// Minimizer; all zeros when infeasible.
    pub z: DVector<f64>,
    pub status: QpStatus,
    /// Indices of the constraints held as equalities by the optimal candidate.
    pub active: Vec<usize>,
    /// One nonnegative multiplier per constraint (zero off the active set).
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    /// Phase-1 optimum (minimal achievable largest violation) when it was
    /// computed. Positive values certify an empty feasible set.
    pub infeasibility: Option<f64>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

struct Candidate {
    z: DVector<f64>,
    cost: f64,
    active: Vec<usize>,
    mu: Vec<f64>,
}

/// Lexicographic k-subsets of `0..n`.
struct Combinations {
    n: usize,
    idx: Vec<usize>,
    first: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            idx: (0..k).collect(),
            first: true,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let k = self.idx.len();
        if self.first {
            self.first = false;
            return (k <= self.n).then(|| self.idx.clone());
        }
        let mut i = k;
        while i > 0 {
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                return Some(self.idx.clone());
            }
        }
        None
    }
}

/// Subsets of `0..n` with at most `max_size` elements: by size, then
/// lexicographically.
fn subsets(n: usize, max_size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..=max_size.min(n)).flat_map(move |k| Combinations::new(n, k))
}

/// Cholesky solve of `G μ = r` after unit-diagonal scaling; `None` when the
/// rows behind `G` are (numerically) linearly dependent.
fn solve_gram(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let k = gram.nrows();
    let mut scale = DVector::zeros(k);
    for i in 0..k {
        let d = gram[(i, i)];
        if !(d > 0.0) {
            return None;
        }
        scale[i] = 1.0 / d.sqrt();
    }
    let scaled = DMatrix::from_fn(k, k, |i, j| gram[(i, j)] * scale[i] * scale[j]);
    let chol = scaled.cholesky()?;
    let l = chol.l_dirty();
    if (0..k).any(|i| l[(i, i)] * l[(i, i)] < DEGENERACY_TOL) {
        return None;
    }
    let y = chol.solve(&rhs.component_mul(&scale));
    Some(y.component_mul(&scale))
}

fn screen(p: &QpProblem, rows: &[DVector<f64>], rhs: &[f64], loosen: f64) -> Option<Candidate> {
    let inv_w = p.weights.map(|w| 1.0 / w);
    let mut best: Option<Candidate> = None;
    for set in subsets(rows.len(), p.dim()) {
        let k = set.len();
        let gram = DMatrix::from_fn(k, k, |i, j| {
            rows[set[i]].component_mul(&inv_w).dot(&rows[set[j]])
        });
        let target = DVector::from_fn(k, |i, _| -rhs[set[i]]);
        let Some(mut mu) = solve_gram(&gram, &target) else {
            debug!("qp: skipping rank-deficient active set {set:?}");
            continue;
        };
        let primal = |mu: &DVector<f64>| {
            let mut z = DVector::zeros(p.dim());
            for (i, &c) in set.iter().enumerate() {
                z -= rows[c].component_mul(&inv_w) * mu[i];
            }
            z
        };
        // Iterative refinement so the active rows hold to working precision.
        for _ in 0..2 {
            let z = primal(&mu);
            let res = DVector::from_fn(k, |i, _| rows[set[i]].dot(&z) - rhs[set[i]]);
            match solve_gram(&gram, &res) {
                Some(d) => mu += d,
                None => break,
            }
        }
        let mu_scale = 1.0 + mu.amax();
        if mu.iter().any(|m| *m < -DUAL_TOL * loosen * mu_scale) {
            continue;
        }
        let z = primal(&mu);
        let z_norm = z.amax();
        let feasible = rows.iter().zip(rhs).all(|(n, c)| {
            let tol = PRIMAL_TOL * loosen * (1.0 + c.abs() + n.amax() * z_norm);
            n.dot(&z) - c <= tol
        });
        if !feasible {
            continue;
        }
        let cost = p.cost(&z);
        let better = match &best {
            None => true,
            Some(b) => cost < b.cost - 1e-12 * (1.0 + b.cost.abs()),
        };
        if better {
            best = Some(Candidate {
                z,
                cost,
                active: set,
                mu: mu.iter().map(|m| m.max(0.0)).collect(),
            });
        }
    }
    best
}

/// Minimal achievable value of `max_i (n_iᵀz − c_i)` over all `z`, computed as
/// the maximum of `−cᵀy` over vertices of `{y ≥ 0, Nᵀy = 0, 1ᵀy = 1}`.
/// Returns `None` when that polytope is empty (the largest violation can be
/// driven to −∞, so the system is strictly feasible).
pub(crate) fn phase_one(dim: usize, rows: &[DVector<f64>], rhs: &[f64]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for set in subsets(rows.len(), dim + 1).skip(1) {
        let k = set.len();
        let m = DMatrix::from_fn(
            dim + 1,
            k,
            |i, j| if i < dim { rows[set[j]][i] } else { 1.0 },
        );
        let mut e = DVector::zeros(dim + 1);
        e[dim] = 1.0;
        let svd = m.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-10 * smax {
            continue;
        }
        let Ok(y) = svd.solve(&e, 0.0) else {
            continue;
        };
        if (&m * &y - &e).amax() > 1e-9 * (1.0 + y.amax()) || y.iter().any(|v| *v < -1e-12) {
            continue;
        }
        let value = -set
            .iter()
            .zip(y.iter())
            .map(|(&i, yi)| rhs[i] * yi)
            .sum::<f64>();
        best = Some(best.map_or(value, |b: f64| b.max(value)));
    }
    best
}

/// Scaled KKT residual of `s` for `p`: the largest of the stationarity
/// residual, primal violation, dual negativity and complementary slackness,
/// each divided by the magnitude of the terms that produce it so the value
/// is invariant under scaling of rows and reflects floating-point accuracy.
pub fn check_kkt(p: &QpProblem, s: &QpSolution) -> f64 {
    let (rows, rhs) = p.normalized();
    let wz = p.weights.component_mul(&s.z);
    let mut stationarity = wz.clone();
    let mut stat_scale = 1.0 + wz.amax();
    let mut worst: f64 = 0.0;
    let z_norm = s.z.amax();
    for (i, lambda) in s.multipliers.iter().enumerate() {
        stationarity += &rows[i] * *lambda;
        stat_scale += lambda.abs() * rows[i].amax();
        let row_scale = 1.0 + rhs[i].abs() + rows[i].amax() * z_norm * rows[i].len() as f64;
        let slack = rows[i].dot(&s.z) - rhs[i];
        worst = worst
            .max(slack / row_scale)
            .max(-lambda / (1.0 + lambda.abs()))
            .max((lambda * slack).abs() / ((1.0 + lambda.abs()) * row_scale));
    }
    worst.max(stationarity.amax() / stat_scale)
}

pub fn solve_qp(p: &QpProblem) -> QpSolution {
    let (rows, rhs) = p.normalized();
    let found = screen(p, &rows, &rhs, 1.0);
    let mut infeasibility = None;
    let found = match found {
        Some(c) => Some(c),
        None => {
            let level = phase_one(p.dim(), &rows, &rhs);
            infeasibility = level;
            let scale = 1.0 + rhs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
            match level {
                Some(v) if v > INFEASIBILITY_TOL * scale => None,
                _ => {
                    let retry = screen(p, &rows, &rhs, RETRY_FACTOR);
                    if retry.is_none() {
                        warn!("qp: phase 1 reports a feasible set ({level:?}) but no KKT point was found");
                    }
                    retry
                }
            }
        }
    };
    match found {
        Some(c) => {
            let mut multipliers = vec![0.0; rows.len()];
            for (i, &idx) in c.active.iter().enumerate() {
                multipliers[idx] = c.mu[i];
            }
            let mut sol = QpSolution {
                z: c.z,
                status: QpStatus::Optimal,
                active: c.active,
                multipliers,
                kkt_residual: 0.0,
                infeasibility,
            };
            sol.kkt_residual = check_kkt(p, &sol);
            sol
        }
        None => QpSolution {
            z: DVector::zeros(p.dim()),
            status: QpStatus::Infeasible,
            active: Vec::new(),
            multipliers: vec![0.0; rows.len()],
            kkt_residual: f64::NAN,
            infeasibility,
        },
    }
}
